//! Maximum likelihood estimation of the rates from interval counts.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{IntervalData, SamplingPlan};

const BRACKET_LO: f64 = 1e-12;
const BRACKET_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub total: f64,
    pub per_cause: Vec<f64>,
    /// No failures were seen and `1/(n τ_k)` was used.
    pub used_fallback: bool,
}

fn check(plan: &SamplingPlan, data: &IntervalData) -> Result<()> {
    if plan.is_no_sampling() || data.n() != plan.n() || data.k() != plan.k() {
        return Err(Error::DimensionMismatch(format!(
            "data is n={}, k={} but plan is n={}, k={}",
            data.n(),
            data.k(),
            plan.n(),
            plan.k()
        )));
    }
    Ok(())
}

fn score_from_totals(nu: f64, plan: &SamplingPlan, totals: &[u32]) -> f64 {
    let d_t: u32 = totals.iter().sum();
    let mut g = f64::from(plan.n() - d_t) * plan.last_epoch();
    for (m, &d) in totals.iter().enumerate() {
        if d > 0 {
            let delta = plan.gap(m);
            g += f64::from(d) * (plan.epoch(m) - delta / (nu * delta).exp_m1());
        }
    }
    g
}

/// Profile score `g(ν)`; its root is the MLE of the total rate.
pub fn score_g(nu: f64, plan: &SamplingPlan, data: &IntervalData) -> Result<f64> {
    check(plan, data)?;
    if !(nu > 0.0) {
        return Err(invalid("nu", "must be positive"));
    }
    if data.total_failures() == 0 {
        return Err(Error::NoFailures);
    }
    Ok(score_from_totals(nu, plan, &data.interval_totals()))
}

/// Total-rate MLE from interval totals; `1/(n τ_k)` when nothing failed.
pub(crate) fn total_rate_from_totals(plan: &SamplingPlan, totals: &[u32]) -> Result<f64> {
    let d_t: u32 = totals.iter().sum();
    if d_t == 0 {
        return Ok(1.0 / (f64::from(plan.n()) * plan.last_epoch()));
    }
    if let Some(h) = plan.interval_length() {
        let s: u64 = totals
            .iter()
            .enumerate()
            .map(|(m, &d)| m as u64 * u64::from(d))
            .sum::<u64>()
            + plan.k() as u64 * u64::from(plan.n() - d_t);
        let nu = equal_interval_rate(plan.n(), h, plan.k() as u32, d_t, s);
        return if nu.is_finite() {
            Ok(nu)
        } else {
            Err(Error::UnboundedEstimate)
        };
    }
    bisect_score(plan, totals)
}

/// Root of the score by bracketed bisection.
pub(crate) fn bisect_score(plan: &SamplingPlan, totals: &[u32]) -> Result<f64> {
    let d_t: u32 = totals.iter().sum();
    if d_t == 0 {
        return Err(Error::NoFailures);
    }
    // g tends to the total exposure as ν grows; a zero exposure means no finite root.
    let exposure = score_from_totals(f64::INFINITY, plan, totals);
    if exposure <= 0.0 {
        return Err(Error::UnboundedEstimate);
    }
    let g = |nu: f64| score_from_totals(nu, plan, totals);
    let mut lo = BRACKET_LO;
    let mut hi = 1.0 / plan.last_epoch();
    while g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numerical("score bracket diverged".into()));
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= BRACKET_TOL || mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Closed-form MLE for equal spacing `h`, from `d_t` and
/// `s = Σ (m-1) d_m + k (n - d_t)` over 1-based intervals `m`.
///
/// Returns the no-failure fallback for `d_t = 0` and `+inf` when every unit
/// failed in the first interval.
pub fn equal_interval_rate(n: u32, h: f64, k: u32, d_t: u32, s: u64) -> f64 {
    if d_t == 0 {
        return 1.0 / (f64::from(n) * f64::from(k) * h);
    }
    if s == 0 {
        return f64::INFINITY;
    }
    (f64::from(d_t) / s as f64).ln_1p() / h
}

/// MLE of the total rate and its split over causes.
pub fn fit_total_rate(plan: &SamplingPlan, data: &IntervalData) -> Result<RateEstimate> {
    check(plan, data)?;
    let totals = data.interval_totals();
    let total = total_rate_from_totals(plan, &totals)?;
    if data.total_failures() == 0 {
        return Ok(RateEstimate {
            total,
            per_cause: vec![0.0; data.causes()],
            used_fallback: true,
        });
    }
    let per_cause = allocate_cause_rates(total, data)?;
    Ok(RateEstimate {
        total,
        per_cause,
        used_fallback: false,
    })
}

/// `ν̂_j = d_{+j} ν̂ / d_t`.
pub fn allocate_cause_rates(total: f64, data: &IntervalData) -> Result<Vec<f64>> {
    let d_t = data.total_failures();
    if d_t == 0 {
        return Err(Error::NoFailures);
    }
    Ok(data
        .cause_totals()
        .iter()
        .map(|&d| f64::from(d) * total / f64::from(d_t))
        .collect())
}

/// `exp(-ν̂ t0)`, with an unbounded estimate mapped to 0.
pub fn estimate_reliability(plan: &SamplingPlan, data: &IntervalData, t0: f64) -> Result<f64> {
    if !(t0 >= 0.0) {
        return Err(invalid("t0", "must be non-negative"));
    }
    match fit_total_rate(plan, data) {
        Ok(est) => Ok((-est.total * t0).exp()),
        Err(Error::UnboundedEstimate) => Ok(if t0 == 0.0 { 1.0 } else { 0.0 }),
        Err(e) => Err(e),
    }
}
