//! Exponential competing-risks model, inspection plans and the outcome law.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{composition_count, for_each_composition, ln_factorial, ln_one_minus_exp_neg};

/// Default ceiling on the number of outcomes materialised by [`enumerate_outcomes`].
pub const DEFAULT_ENUMERATION_CAP: u64 = 2_000_000;

/// Cause-specific constant hazards `ν_1..ν_J` and their total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FailureRates {
    rates: Vec<f64>,
    total: f64,
}

impl FailureRates {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(invalid("rates", "at least one cause is required"));
        }
        if let Some(bad) = rates.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(invalid(
                "rates",
                format!("every rate must be positive and finite, got {bad}"),
            ));
        }
        let total = rates.iter().sum();
        Ok(Self { rates, total })
    }

    /// Splits a total rate according to fractions that sum to one.
    pub fn from_total_and_fractions(total: f64, fractions: &[f64]) -> Result<Self> {
        Self::new(fractions.iter().map(|w| total * w).collect())
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn causes(&self) -> usize {
        self.rates.len()
    }
}

impl TryFrom<Vec<f64>> for FailureRates {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FailureRates> for Vec<f64> {
    fn from(r: FailureRates) -> Self {
        r.rates
    }
}

/// Sample size plus strictly increasing inspection epochs `τ_1 < … < τ_k`.
///
/// The degenerate plan with `n = 0` and no epochs stands for deciding without a test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    n: u32,
    epochs: Vec<f64>,
}

impl SamplingPlan {
    pub fn new(n: u32, epochs: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "sample size must be at least 1"));
        }
        if epochs.is_empty() {
            return Err(invalid("epochs", "at least one inspection is required"));
        }
        let mut prev = 0.0;
        for &t in &epochs {
            if !(t.is_finite() && t > prev) {
                return Err(invalid(
                    "epochs",
                    "inspection times must be positive and strictly increasing",
                ));
            }
            prev = t;
        }
        Ok(Self { n, epochs })
    }

    /// Equal spacing: `τ_m = m·h` for `m = 1..=k`.
    pub fn equal(n: u32, interval_length: f64, k: u32) -> Result<Self> {
        if !(interval_length.is_finite() && interval_length > 0.0) {
            return Err(invalid("interval_length", "must be positive"));
        }
        if k == 0 {
            return Err(invalid("k", "at least one inspection is required"));
        }
        Self::new(n, (1..=k).map(|m| f64::from(m) * interval_length).collect())
    }

    pub fn no_sampling() -> Self {
        Self {
            n: 0,
            epochs: Vec::new(),
        }
    }

    pub fn is_no_sampling(&self) -> bool {
        self.n == 0
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn k(&self) -> usize {
        self.epochs.len()
    }

    pub fn epochs(&self) -> &[f64] {
        &self.epochs
    }

    /// `τ_m` with `τ_0 = 0`.
    pub fn epoch(&self, m: usize) -> f64 {
        if m == 0 {
            0.0
        } else {
            self.epochs[m - 1]
        }
    }

    /// Last inspection time `τ_k` (0 for the no-sampling plan).
    pub fn last_epoch(&self) -> f64 {
        self.epochs.last().copied().unwrap_or(0.0)
    }

    /// Width of interval `m` (0-based), `τ_{m+1} - τ_m`.
    pub fn gap(&self, m: usize) -> f64 {
        self.epoch(m + 1) - self.epoch(m)
    }

    pub fn gaps(&self) -> Vec<f64> {
        (0..self.k()).map(|m| self.gap(m)).collect()
    }

    /// Common interval length when the epochs are equally spaced.
    pub fn interval_length(&self) -> Option<f64> {
        let k = self.k();
        if k == 0 {
            return None;
        }
        let h = self.epochs[0];
        let tol = 1e-9 * h.max(1e-300);
        (0..k).all(|m| (self.gap(m) - h).abs() <= tol).then_some(h)
    }
}

/// Per-interval, per-cause failure counts of one life test.
///
/// Rows after an early termination (every unit already failed) are stored as zeros.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntervalData {
    n: u32,
    counts: Vec<Vec<u32>>,
}

impl IntervalData {
    /// Builds data for a plan with `k` inspections and `causes` failure modes.
    ///
    /// Fewer than `k` rows are accepted only when every unit has failed by the last given row.
    pub fn new(n: u32, counts: Vec<Vec<u32>>, k: usize, causes: usize) -> Result<Self> {
        if causes == 0 {
            return Err(invalid("causes", "at least one cause is required"));
        }
        if counts.len() > k {
            return Err(Error::DimensionMismatch(format!(
                "{} count rows for a plan with {k} inspections",
                counts.len()
            )));
        }
        if let Some(row) = counts.iter().find(|r| r.len() != causes) {
            return Err(Error::DimensionMismatch(format!(
                "row with {} causes, expected {causes}",
                row.len()
            )));
        }
        let total: u64 = counts.iter().flatten().map(|&c| u64::from(c)).sum();
        if total > u64::from(n) {
            return Err(Error::DimensionMismatch(format!(
                "{total} failures among {n} units"
            )));
        }
        if counts.len() < k && total != u64::from(n) {
            return Err(Error::DimensionMismatch(format!(
                "only {} of {k} rows given but {} units still survive",
                counts.len(),
                u64::from(n) - total
            )));
        }
        let mut counts = counts;
        counts.resize(k, vec![0; causes]);
        Ok(Self { n, counts })
    }

    /// Same as [`IntervalData::new`] with dimensions taken from the plan.
    pub fn for_plan(plan: &SamplingPlan, causes: usize, counts: Vec<Vec<u32>>) -> Result<Self> {
        Self::new(plan.n(), counts, plan.k(), causes)
    }

    pub fn zeros(n: u32, k: usize, causes: usize) -> Self {
        Self {
            n,
            counts: vec![vec![0; causes]; k],
        }
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn causes(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn counts(&self) -> &[Vec<u32>] {
        &self.counts
    }

    pub fn count(&self, m: usize, j: usize) -> u32 {
        self.counts[m][j]
    }

    /// `d_{m+}` for every interval.
    pub fn interval_totals(&self) -> Vec<u32> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// `d_{+j}` for every cause.
    pub fn cause_totals(&self) -> Vec<u32> {
        let mut out = vec![0; self.causes()];
        for row in &self.counts {
            for (o, c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }

    /// `d_t`.
    pub fn total_failures(&self) -> u32 {
        self.counts.iter().flatten().sum()
    }

    pub fn survivors(&self) -> u32 {
        self.n - self.total_failures()
    }

    /// 1-based inspection at which the test stopped: the first with no survivors, else `k`.
    pub fn terminated_at(&self) -> usize {
        let mut failed = 0;
        for (m, row) in self.counts.iter().enumerate() {
            failed += row.iter().sum::<u32>();
            if failed == self.n {
                return m + 1;
            }
        }
        self.k()
    }

    fn check_against(&self, plan: &SamplingPlan, causes: usize) -> Result<()> {
        if self.n != plan.n() || self.k() != plan.k() || self.causes() != causes {
            return Err(Error::DimensionMismatch(format!(
                "data is n={}, k={}, J={} but plan is n={}, k={}, J={causes}",
                self.n,
                self.k(),
                self.causes(),
                plan.n(),
                plan.k()
            )));
        }
        Ok(())
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) {
        return Err(invalid("t", format!("time must be non-negative, got {t}")));
    }
    Ok(())
}

/// Survival function `exp(-ν t)`.
pub fn reliability(rates: &FailureRates, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok((-rates.total() * t).exp())
}

/// `G(j, t) = (ν_j/ν)(1 - exp(-ν t))`, cause index 0-based.
pub fn sub_distribution(rates: &FailureRates, cause: usize, t: f64) -> Result<f64> {
    check_time(t)?;
    let nu_j = *rates.rates().get(cause).ok_or(Error::IndexOutOfRange {
        what: "cause",
        index: cause,
        len: rates.causes(),
    })?;
    Ok(nu_j / rates.total() * -(-rates.total() * t).exp_m1())
}

/// Probability that a unit fails in interval `m` (0-based, `(τ_m, τ_{m+1}]`) from `cause`.
pub fn interval_cell_prob(
    rates: &FailureRates,
    plan: &SamplingPlan,
    m: usize,
    cause: usize,
) -> Result<f64> {
    if m >= plan.k() {
        return Err(Error::IndexOutOfRange {
            what: "interval",
            index: m,
            len: plan.k(),
        });
    }
    if cause >= rates.causes() {
        return Err(Error::IndexOutOfRange {
            what: "cause",
            index: cause,
            len: rates.causes(),
        });
    }
    let nu = rates.total();
    let lo = plan.epoch(m);
    Ok(rates.rates()[cause] / nu * (-nu * lo).exp() * -(-nu * plan.gap(m)).exp_m1())
}

/// Log of the multinomial probability of `data` under `rates`.
pub fn outcome_log_pmf(
    rates: &FailureRates,
    plan: &SamplingPlan,
    data: &IntervalData,
) -> Result<f64> {
    data.check_against(plan, rates.causes())?;
    let nu = rates.total();
    let n = plan.n();
    let mut lp = ln_factorial(n) - ln_factorial(data.survivors());
    for (m, row) in data.counts().iter().enumerate() {
        let dm: u32 = row.iter().sum();
        if dm == 0 {
            continue;
        }
        // ln of the interval mass exp(-ν τ_m)(1 - exp(-ν Δ_m)).
        let ln_cell = -nu * plan.epoch(m) + ln_one_minus_exp_neg(nu * plan.gap(m));
        lp += f64::from(dm) * ln_cell;
        for (j, &d) in row.iter().enumerate() {
            if d > 0 {
                lp += f64::from(d) * (rates.rates()[j] / nu).ln() - ln_factorial(d);
            }
        }
    }
    lp -= f64::from(data.survivors()) * nu * plan.last_epoch();
    Ok(lp)
}

/// Size of the outcome space, `C(n + kJ, kJ)`.
pub fn outcome_space_size(plan: &SamplingPlan, causes: usize) -> f64 {
    composition_count(plan.n(), plan.k() * causes + 1)
}

/// Every possible count matrix for the plan, each exactly once, in a fixed order.
pub fn enumerate_outcomes(
    plan: &SamplingPlan,
    causes: usize,
    cap: u64,
) -> Result<Vec<IntervalData>> {
    if causes == 0 {
        return Err(invalid("causes", "at least one cause is required"));
    }
    let size = outcome_space_size(plan, causes);
    if size > cap as f64 {
        return Err(Error::EnumerationCap { size, cap });
    }
    let k = plan.k();
    let cells = k * causes;
    let mut out = Vec::with_capacity(size as usize);
    // The extra trailing part absorbs the survivors.
    for_each_composition(plan.n(), cells + 1, |c| {
        let counts = c[..cells].chunks(causes).map(<[u32]>::to_vec).collect();
        out.push(IntervalData {
            n: plan.n(),
            counts,
        });
    });
    Ok(out)
}
