//! Bayes risk of a sampling plan: expected test costs plus the penalty `R₁`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::asymptotics::{delta_sd, normal_accept, total_rate_information};
use crate::decision::{self, CostModel, DecisionRule, McEstimate};
use crate::error::{invalid, Error, Result};
use crate::kernel::{GammaMixture, Kernel, MOMENTS};
use crate::model::{SamplingPlan, DEFAULT_ENUMERATION_CAP};
use crate::numeric::{for_each_composition, ln_factorial, ln_one_minus_exp_neg, KahanSum};
use crate::outcomes::{equal_profiles, time_profiles, SplitTable, SpreadTable, TimeProfile};
use crate::prior::{expected_acceptance_cost, sample_prior, PriorSpec};
use crate::simulator::simulate_test;

/// Largest number of (profile, split) pairs the Monte Carlo penalty sums exactly per draw.
const MC_EXACT_CAP: f64 = 50_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTerm {
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub total_risk: f64,
    pub penalty_r1: f64,
    pub p_accept: f64,
    pub e_failures: f64,
    pub e_duration: f64,
    pub e_inspections: f64,
    pub decomposition: Vec<RiskTerm>,
}

impl RiskReport {
    pub(crate) fn assemble(
        costs: &CostModel,
        n: u32,
        counts: ExpectedCounts,
        penalty: f64,
        p_accept: f64,
    ) -> Self {
        let terms = [
            ("rejection", costs.c_reject),
            ("sampling", f64::from(n) * (costs.c_sample - costs.salvage)),
            ("duration", costs.c_time * counts.e_duration),
            ("inspection", costs.c_inspect * counts.e_inspections),
            ("salvage", costs.salvage * counts.e_failures),
            ("penalty", penalty),
        ];
        Self {
            total_risk: terms.iter().map(|t| t.1).sum(),
            penalty_r1: penalty,
            p_accept,
            e_failures: counts.e_failures,
            e_duration: counts.e_duration,
            e_inspections: counts.e_inspections,
            decomposition: terms
                .iter()
                .map(|&(l, v)| RiskTerm {
                    label: l.to_string(),
                    value: v,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedCounts {
    pub e_failures: f64,
    pub e_duration: f64,
    pub e_inspections: f64,
}

/// `E[(1 - e^{-ντ})^n]` under the gamma prior on the total rate.
pub(crate) fn all_failed_prob(gamma: &GammaMixture, n: u32, tau: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    gamma.ln_moments(Kernel {
        exposure: 0.0,
        factors: &[(tau, n)],
    })[0]
        .exp()
        .min(1.0)
}

/// Prior probability that all `n` units have failed by the 1-based inspection `i`.
pub fn expected_all_failed_prob(plan: &SamplingPlan, prior: &PriorSpec, i: usize) -> Result<f64> {
    if i == 0 || i > plan.k() {
        return Err(Error::IndexOutOfRange {
            what: "inspection",
            index: i,
            len: plan.k(),
        });
    }
    Ok(all_failed_prob(
        &prior.total_rate_prior(),
        plan.n(),
        plan.epoch(i),
    ))
}

/// Counts from `E[P_i]`, `i = 1..k-1` (the test stops once every unit has failed).
pub(crate) fn counts_from(
    plan: &SamplingPlan,
    prior: &PriorSpec,
    all_failed: &[f64],
) -> ExpectedCounts {
    let k = plan.k();
    let mut e_inspections = k as f64;
    let mut e_duration = plan.last_epoch();
    for (i, &p) in all_failed.iter().enumerate().take(k.saturating_sub(1)) {
        e_inspections -= p;
        e_duration -= plan.gap(i + 1) * p;
    }
    ExpectedCounts {
        e_failures: f64::from(plan.n()) * (1.0 - prior.laplace(plan.last_epoch())),
        e_duration,
        e_inspections,
    }
}

/// Expected failures, test duration and number of inspections.
pub fn expected_counts(plan: &SamplingPlan, prior: &PriorSpec) -> Result<ExpectedCounts> {
    if plan.is_no_sampling() {
        return Ok(ExpectedCounts {
            e_failures: 0.0,
            e_duration: 0.0,
            e_inspections: 0.0,
        });
    }
    let gamma = prior.total_rate_prior();
    let probs: Vec<f64> = (1..plan.k())
        .map(|i| all_failed_prob(&gamma, plan.n(), plan.epoch(i)))
        .collect();
    Ok(counts_from(plan, prior, &probs))
}

/// Moments of one time profile, ready for either rule.
#[derive(Debug, Clone)]
pub(crate) struct ProfileTerm {
    pub d_t: u32,
    pub ln_w: f64,
    pub m: [f64; MOMENTS],
    pub r_hat: f64,
}

impl ProfileTerm {
    /// `(W I_0, I_1 / I_0, I_2 / I_0)`.
    #[inline]
    fn scaled(&self) -> (f64, f64, f64) {
        (
            (self.ln_w + self.m[0]).exp(),
            (self.m[1] - self.m[0]).exp(),
            (self.m[2] - self.m[0]).exp(),
        )
    }
}

/// The chosen reliability threshold and the step of thresholds sharing its acceptance set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub r0: f64,
    /// Every threshold in `[lower, upper)` gives the same acceptance set.
    pub lower: f64,
    pub upper: f64,
    pub penalty: f64,
    pub p_accept: f64,
}

/// Plan-independent pieces shared by every risk evaluation.
#[derive(Debug, Clone)]
pub(crate) struct RiskEngine {
    pub prior: PriorSpec,
    pub costs: CostModel,
    pub gamma: GammaMixture,
    pub splits: SplitTable,
}

impl RiskEngine {
    pub fn new(prior: &PriorSpec, costs: &CostModel) -> Result<Self> {
        costs.check_causes(prior.causes())?;
        Ok(Self {
            prior: prior.clone(),
            costs: costs.clone(),
            gamma: prior.total_rate_prior(),
            splits: SplitTable::new(prior, costs),
        })
    }

    pub fn reserve(&mut self, n: u32) {
        self.splits.ensure(n);
    }

    pub fn terms_from(&self, profiles: Vec<TimeProfile>) -> Vec<ProfileTerm> {
        let t0 = self.costs.t0;
        profiles
            .into_iter()
            .map(|p| ProfileTerm {
                d_t: p.d_t,
                ln_w: p.ln_weight,
                m: self.gamma.ln_moments(Kernel {
                    exposure: p.exposure,
                    factors: &p.factors,
                }),
                r_hat: if p.nu_hat.is_finite() {
                    (-p.nu_hat * t0).exp()
                } else {
                    0.0
                },
            })
            .collect()
    }

    pub fn terms(
        &self,
        plan: &SamplingPlan,
        spreads: Option<&SpreadTable>,
    ) -> Result<Vec<ProfileTerm>> {
        let profiles = match (plan.interval_length(), spreads) {
            (Some(h), Some(t)) => equal_profiles(plan.n(), h, plan.k(), t),
            _ => time_profiles(plan, DEFAULT_ENUMERATION_CAP)?,
        };
        Ok(self.terms_from(profiles))
    }

    /// `(R₁, P(A))` under the Bayes rule. Needs `reserve(n)`.
    pub fn bayes_penalty(&self, terms: &[ProfileTerm]) -> (f64, f64) {
        let c = &self.costs;
        let mut pen = KahanSum::new();
        let mut pa = KahanSum::new();
        for t in terms {
            let (p0, r1, r2) = t.scaled();
            if p0 == 0.0 {
                continue;
            }
            for s in self.splits.splits(t.d_t) {
                let phi = c.c0 + r1 * s.lin + r2 * s.quad;
                if phi <= c.c_reject {
                    pen.add(p0 * s.prob * (phi - c.c_reject));
                    pa.add(p0 * s.prob);
                }
            }
        }
        (pen.value(), pa.value())
    }

    /// Penalty and acceptance mass of one profile under the reliability rule.
    #[inline]
    fn reliability_term(&self, t: &ProfileTerm) -> (f64, f64) {
        let c = &self.costs;
        let (p0, r1, r2) = t.scaled();
        let e_h = c.c0 + r1 * self.splits.prior_lin + r2 * self.splits.prior_quad;
        (p0 * (e_h - c.c_reject), p0)
    }

    pub fn reliability_penalty(&self, terms: &[ProfileTerm], r0: f64) -> (f64, f64) {
        let mut pen = KahanSum::new();
        let mut pa = KahanSum::new();
        for t in terms.iter().filter(|t| t.r_hat > r0) {
            let (x, p) = self.reliability_term(t);
            pen.add(x);
            pa.add(p);
        }
        (pen.value(), pa.value())
    }

    pub fn penalty(&self, terms: &[ProfileTerm], rule: DecisionRule) -> (f64, f64) {
        match rule {
            DecisionRule::Bayes => self.bayes_penalty(terms),
            DecisionRule::Reliability { r0 } => self.reliability_penalty(terms, r0),
        }
    }

    /// Best reliability threshold: the risk is a step function of `R₀` that
    /// changes only at the attainable estimates, so every step is scanned.
    pub fn threshold(&self, terms: &[ProfileTerm]) -> ThresholdChoice {
        let mut items: Vec<(f64, f64, f64)> = terms
            .iter()
            .filter(|t| t.r_hat > 0.0)
            .map(|t| {
                let (x, p) = self.reliability_term(t);
                (t.r_hat, x, p)
            })
            .collect();
        items.sort_by(|a, b| b.0.total_cmp(&a.0));
        // Accepting nothing: any threshold at or above the largest estimate.
        let mut best = ThresholdChoice {
            r0: 0.0,
            lower: items.first().map_or(0.0, |x| x.0),
            upper: 1.0,
            penalty: 0.0,
            p_accept: 0.0,
        };
        let mut pen = KahanSum::new();
        let mut pa = KahanSum::new();
        let mut i = 0;
        while i < items.len() {
            let level = items[i].0;
            while i < items.len() && items[i].0 == level {
                pen.add(items[i].1);
                pa.add(items[i].2);
                i += 1;
            }
            if pen.value() < best.penalty {
                best = ThresholdChoice {
                    r0: 0.0,
                    lower: items.get(i).map_or(0.0, |x| x.0),
                    upper: level,
                    penalty: pen.value(),
                    p_accept: pa.value(),
                };
            }
        }
        best.r0 = 0.5 * (best.lower + best.upper);
        best
    }

    pub fn counts(&self, plan: &SamplingPlan) -> Result<ExpectedCounts> {
        expected_counts(plan, &self.prior)
    }

    pub fn no_sampling_report(&self) -> Result<RiskReport> {
        let e_h = expected_acceptance_cost(&self.prior, &self.costs)?;
        let accept = e_h <= self.costs.c_reject;
        let zero = ExpectedCounts {
            e_failures: 0.0,
            e_duration: 0.0,
            e_inspections: 0.0,
        };
        let penalty = if accept {
            e_h - self.costs.c_reject
        } else {
            0.0
        };
        Ok(RiskReport::assemble(
            &self.costs,
            0,
            zero,
            penalty,
            if accept { 1.0 } else { 0.0 },
        ))
    }

    pub fn report(&mut self, plan: &SamplingPlan, rule: DecisionRule) -> Result<RiskReport> {
        if plan.is_no_sampling() {
            return self.no_sampling_report();
        }
        self.reserve(plan.n());
        let terms = self.terms(plan, None)?;
        let (penalty, p_accept) = self.penalty(&terms, rule);
        Ok(RiskReport::assemble(
            &self.costs,
            plan.n(),
            self.counts(plan)?,
            penalty,
            p_accept,
        ))
    }
}

fn check_rule(rule: DecisionRule) -> Result<()> {
    if let DecisionRule::Reliability { r0 } = rule {
        if !(0.0..=1.0).contains(&r0) {
            return Err(invalid(
                "r0",
                format!("threshold must lie in [0, 1], got {r0}"),
            ));
        }
    }
    Ok(())
}

fn exact(
    plan: &SamplingPlan,
    rule: DecisionRule,
    prior: &PriorSpec,
    costs: &CostModel,
) -> Result<RiskReport> {
    check_rule(rule)?;
    RiskEngine::new(prior, costs)?.report(plan, rule)
}

/// Prior predictive probability of accepting the lot.
pub fn acceptance_probability(
    plan: &SamplingPlan,
    rule: DecisionRule,
    prior: &PriorSpec,
    costs: &CostModel,
) -> Result<f64> {
    Ok(exact(plan, rule, prior, costs)?.p_accept)
}

/// `R₁ = Σ_{accepted d} ∫ (h(ν) - C_r) P(d | ν) p(ν) dν`, summed exactly.
pub fn penalty_exact(
    plan: &SamplingPlan,
    rule: DecisionRule,
    prior: &PriorSpec,
    costs: &CostModel,
) -> Result<f64> {
    Ok(exact(plan, rule, prior, costs)?.penalty_r1)
}

/// Full Bayes risk with its decomposition; the no-sampling plan gives `min{E[h(ν)], C_r}`.
pub fn bayes_risk(
    plan: &SamplingPlan,
    rule: DecisionRule,
    prior: &PriorSpec,
    costs: &CostModel,
) -> Result<RiskReport> {
    exact(plan, rule, prior, costs)
}

/// Accepted outcomes grouped by time profile, for evaluating `P(accept | ν)`.
struct AcceptedSet {
    /// `(ln W, exposure, factors, accepted splits with ln multinomial coefficients)`;
    /// `None` means every split is accepted.
    profiles: Vec<(f64, f64, Vec<(f64, u32)>, Option<Vec<(f64, Vec<u32>)>>)>,
}

impl AcceptedSet {
    fn build(engine: &RiskEngine, plan: &SamplingPlan, rule: DecisionRule) -> Result<Self> {
        let profiles = time_profiles(plan, DEFAULT_ENUMERATION_CAP)?;
        let terms = engine.terms_from(profiles.clone());
        let c = &engine.costs;
        let j = engine.prior.causes();
        let mut out = Vec::new();
        for (p, t) in profiles.into_iter().zip(&terms) {
            let entry = match rule {
                DecisionRule::Reliability { r0 } => {
                    if t.r_hat <= r0 {
                        continue;
                    }
                    None
                }
                DecisionRule::Bayes => {
                    let (_, r1, r2) = t.scaled();
                    let mut acc = Vec::new();
                    let mut idx = 0;
                    let splits = engine.splits.splits(t.d_t);
                    for_each_composition(t.d_t, j, |d| {
                        let s = &splits[idx];
                        idx += 1;
                        if c.c0 + r1 * s.lin + r2 * s.quad <= c.c_reject {
                            let ln_c = ln_factorial(t.d_t)
                                - d.iter().map(|&x| ln_factorial(x)).sum::<f64>();
                            acc.push((ln_c, d.to_vec()));
                        }
                    });
                    if acc.is_empty() {
                        continue;
                    }
                    Some(acc)
                }
            };
            out.push((p.ln_weight, p.exposure, p.factors, entry));
        }
        Ok(Self { profiles: out })
    }

    fn prob(&self, rates: &[f64]) -> f64 {
        let nu: f64 = rates.iter().sum();
        let ln_w: Vec<f64> = rates.iter().map(|r| (r / nu).ln()).collect();
        let mut total = KahanSum::new();
        for (lw, exposure, factors, splits) in &self.profiles {
            let mut ln_k = lw - nu * exposure;
            for &(delta, c) in factors {
                ln_k += f64::from(c) * ln_one_minus_exp_neg(nu * delta);
            }
            let split_mass = match splits {
                None => 1.0,
                Some(list) => list
                    .iter()
                    .map(|(ln_c, d)| {
                        let l: f64 = d.iter().zip(&ln_w).map(|(&x, w)| f64::from(x) * w).sum();
                        (ln_c + l).exp()
                    })
                    .sum(),
            };
            total.add(ln_k.exp() * split_mass);
        }
        total.value()
    }
}

/// Monte Carlo `R₁`: prior draws weighted by their acceptance probability,
/// summed exactly over outcomes when feasible and simulated otherwise.
pub fn penalty_mc<R: Rng + ?Sized>(
    plan: &SamplingPlan,
    rule: DecisionRule,
    prior: &PriorSpec,
    costs: &CostModel,
    n_draws: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    check_rule(rule)?;
    if n_draws == 0 {
        return Err(invalid("n_draws", "at least one draw is required"));
    }
    let mut engine = RiskEngine::new(prior, costs)?;
    if plan.is_no_sampling() {
        let r = engine.no_sampling_report()?;
        return Ok(McEstimate {
            value: r.penalty_r1,
            std_error: 0.0,
        });
    }
    engine.reserve(plan.n());
    let pairs = crate::outcomes::profile_count(plan)
        * (f64::from(plan.n()) + 1.0).powi(prior.causes() as i32 - 1);
    let accepted = if pairs <= MC_EXACT_CAP {
        Some(AcceptedSet::build(&engine, plan, rule)?)
    } else {
        None
    };
    let mut sum = KahanSum::new();
    let mut sum2 = KahanSum::new();
    for _ in 0..n_draws {
        let nu = sample_prior(prior, rng);
        let g = costs.acceptance_cost_unchecked(nu.rates()) - costs.c_reject;
        let a = match &accepted {
            Some(set) => set.prob(nu.rates()),
            None => {
                let sim = simulate_test(&nu, plan, rng)?;
                let ok = match rule {
                    DecisionRule::Reliability { r0 } => {
                        crate::mle::estimate_reliability(plan, &sim.data, costs.t0)? > r0
                    }
                    DecisionRule::Bayes => {
                        decision::bayes_rule(plan, &sim.data, prior, costs)?.is_accept()
                    }
                };
                f64::from(u8::from(ok))
            }
        };
        let v = g * a;
        sum.add(v);
        sum2.add(v * v);
    }
    let n = n_draws as f64;
    let mean = sum.value() / n;
    let var = ((sum2.value() - n * mean * mean) / (n - 1.0).max(1.0)).max(0.0);
    Ok(McEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
    })
}

fn approx_check(plan: &SamplingPlan, r0: f64) -> Result<()> {
    if plan.is_no_sampling() {
        return Err(invalid("plan", "the approximation needs units on test"));
    }
    if !(r0 > 0.0 && r0 < 1.0) {
        return Err(invalid(
            "r0",
            format!("threshold must lie in (0, 1), got {r0}"),
        ));
    }
    Ok(())
}

/// Approximate risk: the exact acceptance set is replaced by the normal
/// approximation `Φ((c(ν) - R₀)/S(ν))` inside a prior Monte Carlo average.
/// Draws with singular information are dropped; more than 1% is an error.
pub fn approx_bayes_risk<R: Rng + ?Sized>(
    plan: &SamplingPlan,
    r0: f64,
    prior: &PriorSpec,
    costs: &CostModel,
    n_draws: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    approx_check(plan, r0)?;
    costs.check_causes(prior.causes())?;
    if n_draws == 0 {
        return Err(invalid("n_draws", "at least one draw is required"));
    }
    let counts = expected_counts(plan, prior)?;
    let mut sum = KahanSum::new();
    let mut sum2 = KahanSum::new();
    let mut dropped = 0usize;
    for _ in 0..n_draws {
        let nu = sample_prior(prior, rng);
        let s = match delta_sd(&nu, plan, costs.t0) {
            Ok(s) => s,
            Err(Error::SingularInformation { .. }) => {
                dropped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let c = (-nu.total() * costs.t0).exp();
        let v = (costs.acceptance_cost_unchecked(nu.rates()) - costs.c_reject)
            * normal_accept(c, s, r0);
        sum.add(v);
        sum2.add(v * v);
    }
    if dropped * 100 > n_draws {
        return Err(Error::TooManySingular {
            dropped,
            total: n_draws,
        });
    }
    let kept = (n_draws - dropped) as f64;
    let mean = sum.value() / kept;
    let var = ((sum2.value() - kept * mean * mean) / (kept - 1.0).max(1.0)).max(0.0);
    let report = RiskReport::assemble(costs, plan.n(), counts, mean, f64::NAN);
    Ok(McEstimate {
        value: report.total_risk,
        std_error: (var / kept).sqrt(),
    })
}

/// Quadrature step in `ln ν` for the deterministic approximate risk.
pub(crate) const APPROX_STEP: f64 = 0.004;

/// Deterministic counterpart of [`approx_bayes_risk`]. The approximate
/// acceptance probability depends on the rates only through their total, so
/// the cause fractions integrate out of `h` in closed form.
pub fn approx_bayes_risk_quadrature(
    plan: &SamplingPlan,
    r0: f64,
    prior: &PriorSpec,
    costs: &CostModel,
) -> Result<f64> {
    approx_check(plan, r0)?;
    let engine = RiskEngine::new(prior, costs)?;
    let gaps = plan.gaps();
    let n = f64::from(plan.n());
    let t0 = costs.t0;
    let mut pen = KahanSum::new();
    for (nu, w) in engine.gamma.nodes(APPROX_STEP) {
        let g = costs.c0 + nu * engine.splits.prior_lin + nu * nu * engine.splits.prior_quad
            - costs.c_reject;
        let c = (-nu * t0).exp();
        let s = t0 * c / (n * total_rate_information(nu, &gaps)).sqrt();
        pen.add(w * g * normal_accept(c, s, r0));
    }
    Ok(
        RiskReport::assemble(costs, plan.n(), engine.counts(plan)?, pen.value(), f64::NAN)
            .total_risk,
    )
}

/// `min_{w in simplex} Σ_{p≤q} C_pq w_p w_q`, exact by enumerating faces.
pub(crate) fn simplex_min_quadratic(c_quad: &[Vec<f64>]) -> f64 {
    let j = c_quad.len();
    let mut s = vec![vec![0.0; j]; j];
    for p in 0..j {
        s[p][p] = c_quad[p][p];
        for q in p + 1..j {
            s[p][q] = 0.5 * c_quad[p][q];
            s[q][p] = 0.5 * c_quad[p][q];
        }
    }
    if j > 12 {
        let m = (0..j)
            .flat_map(|p| (p..j).map(move |q| (p, q)))
            .map(|(p, q)| c_quad[p][q])
            .fold(f64::INFINITY, f64::min);
        return 0.5 * m;
    }
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << j) {
        let face: Vec<usize> = (0..j).filter(|i| mask >> i & 1 == 1).collect();
        let f = face.len();
        // KKT system [2S_F 1; 1ᵀ 0] [w; -λ] = [0; 1].
        let mut a = vec![vec![0.0; f + 2]; f + 1];
        for (r, &p) in face.iter().enumerate() {
            for (c, &q) in face.iter().enumerate() {
                a[r][c] = 2.0 * s[p][q];
            }
            a[r][f] = 1.0;
            a[f][r] = 1.0;
        }
        a[f][f + 1] = 1.0;
        if let Some(x) = solve(a) {
            let w = &x[..f];
            if w.iter().all(|&v| v >= -1e-12) {
                let mut val = 0.0;
                for (r, &p) in face.iter().enumerate() {
                    for (c, &q) in face.iter().enumerate() {
                        val += s[p][q] * w[r] * w[c];
                    }
                }
                best = best.min(val);
            }
        }
    }
    best.max(0.0)
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    Some((0..n).map(|r| a[r][n] / a[r][r]).collect())
}

/// Lower bound on `R₁` valid for every plan and rule:
/// `E[min{C_0 + a ν + b ν², C_r}] - C_r` with `a`, `b` the smallest linear and
/// quadratic cost rates over cause mixes.
pub(crate) fn penalty_floor(prior: &PriorSpec, costs: &CostModel) -> f64 {
    let a = costs.c_lin.iter().copied().fold(f64::INFINITY, f64::min);
    let b = simplex_min_quadratic(&costs.c_quad);
    let gap = costs.c_reject - costs.c0;
    if gap <= 0.0 {
        return 0.0;
    }
    let x = if b > 0.0 {
        (-a + (a * a + 4.0 * b * gap).sqrt()) / (2.0 * b)
    } else if a > 0.0 {
        gap / a
    } else {
        return -gap;
    };
    let (al, eta) = (prior.alpha(), prior.eta());
    let below = |r: f64, m: f64| m * gamma_lr(al + r, eta * x);
    let e_low = costs.c0 * below(0.0, 1.0)
        + a * below(1.0, al / eta)
        + b * below(2.0, al * (al + 1.0) / (eta * eta));
    e_low + costs.c_reject * (1.0 - gamma_lr(al, eta * x)) - costs.c_reject
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::posterior_expected_cost_auto;
    use crate::fixtures::{costs, prior};
    use crate::mle::estimate_reliability;
    use crate::model::enumerate_outcomes;
    use crate::prior::prior_predictive;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma};

    fn table_plan() -> SamplingPlan {
        SamplingPlan::equal(4, 0.3, 3).unwrap()
    }

    /// Sum over every count matrix, one posterior cost at a time.
    fn enumeration_oracle(
        plan: &SamplingPlan,
        rule: DecisionRule,
        pr: &PriorSpec,
        c: &CostModel,
    ) -> (f64, f64) {
        let mut pen = 0.0;
        let mut pa = 0.0;
        for d in enumerate_outcomes(plan, pr.causes(), DEFAULT_ENUMERATION_CAP).unwrap() {
            let p = prior_predictive(plan, &d, pr).unwrap();
            let phi = posterior_expected_cost_auto(plan, &d, pr, c).unwrap();
            let accept = match rule {
                DecisionRule::Bayes => phi <= c.c_reject,
                DecisionRule::Reliability { r0 } => {
                    estimate_reliability(plan, &d, c.t0).unwrap() > r0
                }
            };
            if accept {
                pen += p * (phi - c.c_reject);
                pa += p;
            }
        }
        (pen, pa)
    }

    #[test]
    fn all_failed_probabilities() {
        let pr = prior();
        let one = SamplingPlan::equal(1, 0.3, 2).unwrap();
        let want = 1.0 - (1.0f64 / 1.6).powf(2.8);
        assert!((expected_all_failed_prob(&one, &pr, 2).unwrap() - want).abs() < 1e-14);
        // The reference 0.1372 is itself a 10⁶-draw estimate (s.e. about 1.5e-4).
        let p = expected_all_failed_prob(&table_plan(), &pr, 1).unwrap();
        assert!((p - 0.1372).abs() < 3e-4, "{p}");
        let far = SamplingPlan::new(4, vec![1e9]).unwrap();
        assert!((expected_all_failed_prob(&far, &pr, 1).unwrap() - 1.0).abs() < 1e-9);
        assert!(expected_all_failed_prob(&table_plan(), &pr, 0).is_err());
        assert!(expected_all_failed_prob(&table_plan(), &pr, 4).is_err());
    }

    #[test]
    fn all_failed_probability_against_sampling() {
        let dist = Gamma::new(2.8, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let nu: f64 = dist.sample(&mut rng);
            let v = (-(-nu * 0.3f64).exp_m1()).powi(4);
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = expected_all_failed_prob(&table_plan(), &prior(), 1).unwrap();
        assert!((mean - exact).abs() < 3.0 * se);
    }

    #[test]
    fn large_n_uses_a_stable_path() {
        let plan = SamplingPlan::equal(120, 0.05, 4).unwrap();
        let pr = prior();
        let mut last = 0.0;
        for i in 1..=4 {
            let p = expected_all_failed_prob(&plan, &pr, i).unwrap();
            assert!(p.is_finite() && p >= last && p < 1.0);
            last = p;
        }
    }

    #[test]
    fn counts_on_the_table_plan() {
        let c = expected_counts(&table_plan(), &prior()).unwrap();
        assert!((c.e_failures - 3.336944).abs() < 1e-6);
        assert!((c.e_inspections - 2.467095).abs() < 1e-6);
        assert!((c.e_duration - 0.740129).abs() < 1e-6);
        assert!((c.e_duration - 0.3 * c.e_inspections).abs() < 1e-14);
        let single = expected_counts(&SamplingPlan::equal(7, 0.5, 1).unwrap(), &prior()).unwrap();
        assert_eq!(single.e_inspections, 1.0);
        assert_eq!(single.e_duration, 0.5);
    }

    #[test]
    fn table_plan_risk_under_both_rules() {
        let (pr, c) = (prior(), costs());
        for rule in [DecisionRule::Bayes, DecisionRule::Reliability { r0: 0.76 }] {
            let r = bayes_risk(&table_plan(), rule, &pr, &c).unwrap();
            assert!(
                (r.total_risk - 33.908257).abs() < 1e-5,
                "{rule:?} {}",
                r.total_risk
            );
            assert!((r.p_accept - 0.4888324).abs() < 1e-6);
            assert!((r.penalty_r1 + 8.394727).abs() < 1e-5);
            let sum: f64 = r.decomposition.iter().map(|t| t.value).sum();
            assert!((sum - r.total_risk).abs() < 1e-9);
            let identity = c.c_reject
                + 4.0 * (c.c_sample - c.salvage)
                + c.c_time * r.e_duration
                + c.c_inspect * r.e_inspections
                + c.salvage * r.e_failures
                + r.penalty_r1;
            assert!((identity - r.total_risk).abs() < 1e-9);
        }
    }

    #[test]
    fn rules_accept_the_same_outcomes_on_the_table_plan() {
        let (pr, c) = (prior(), costs());
        let plan = table_plan();
        for d in enumerate_outcomes(&plan, 2, DEFAULT_ENUMERATION_CAP).unwrap() {
            let phi = posterior_expected_cost_auto(&plan, &d, &pr, &c).unwrap();
            let r = estimate_reliability(&plan, &d, c.t0).unwrap();
            assert_eq!(phi <= c.c_reject, r > 0.76, "{:?}", d.counts());
        }
    }

    #[test]
    fn rejection_cost_variant() {
        let pr = prior();
        let mut c = costs();
        c.c_reject = 30.0;
        let plan = SamplingPlan::equal(3, 0.41, 3).unwrap();
        let r = bayes_risk(&plan, DecisionRule::Reliability { r0: 0.80 }, &pr, &c).unwrap();
        assert!((r.total_risk - 28.07).abs() < 0.01, "{}", r.total_risk);
    }

    #[test]
    fn profile_sums_match_full_enumeration() {
        let (pr, c) = (prior(), costs());
        let plans = [
            table_plan(),
            SamplingPlan::new(3, vec![0.2, 0.5, 0.6]).unwrap(),
            SamplingPlan::equal(5, 0.7, 2).unwrap(),
            SamplingPlan::new(2, vec![0.1, 1.1]).unwrap(),
        ];
        for plan in &plans {
            for rule in [
                DecisionRule::Bayes,
                DecisionRule::Reliability { r0: 0.8 },
                DecisionRule::Reliability { r0: 0.9 },
            ] {
                let (pen, pa) = enumeration_oracle(plan, rule, &pr, &c);
                let r = bayes_risk(plan, rule, &pr, &c).unwrap();
                assert!(
                    (r.penalty_r1 - pen).abs() < 1e-8,
                    "{plan:?} {rule:?}: {} vs {pen}",
                    r.penalty_r1
                );
                assert!((r.p_accept - pa).abs() < 1e-8);
                assert!(r.penalty_r1 >= penalty_floor(&pr, &c) - 1e-12);
            }
        }
    }

    #[test]
    fn no_sampling_and_empty_acceptance() {
        let pr = prior();
        let mut c = costs();
        let r = bayes_risk(&SamplingPlan::no_sampling(), DecisionRule::Bayes, &pr, &c).unwrap();
        assert_eq!(r.total_risk, 40.0);
        c.c_reject = 90.0;
        let r = bayes_risk(&SamplingPlan::no_sampling(), DecisionRule::Bayes, &pr, &c).unwrap();
        assert!((r.total_risk - 47.6619027).abs() < 1e-6);
        let c = costs();
        let never = DecisionRule::Reliability { r0: 1.0 };
        assert_eq!(penalty_exact(&table_plan(), never, &pr, &c).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            penalty_mc(&table_plan(), never, &pr, &c, 100, &mut rng)
                .unwrap()
                .value,
            0.0
        );
        assert!(penalty_mc(&table_plan(), never, &pr, &c, 0, &mut rng).is_err());
    }

    #[test]
    fn monte_carlo_penalty_agrees() {
        let (pr, c) = (prior(), costs());
        for rule in [DecisionRule::Bayes, DecisionRule::Reliability { r0: 0.76 }] {
            let exact = penalty_exact(&table_plan(), rule, &pr, &c).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let mc = penalty_mc(&table_plan(), rule, &pr, &c, 100_000, &mut rng).unwrap();
            assert!(
                (mc.value - exact).abs() < 3.0 * mc.std_error,
                "{rule:?}: {mc:?} vs {exact}"
            );
        }
    }

    #[test]
    fn simulated_penalty_path_agrees() {
        // Large enough that outcomes are simulated rather than summed.
        let (pr, c) = (prior(), costs());
        let plan = SamplingPlan::equal(60, 0.05, 3).unwrap();
        let rule = DecisionRule::Reliability { r0: 0.8 };
        let exact = penalty_exact(&plan, rule, &pr, &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mc = penalty_mc(&plan, rule, &pr, &c, 20_000, &mut rng).unwrap();
        assert!(
            (mc.value - exact).abs() < 3.0 * mc.std_error,
            "{mc:?} vs {exact}"
        );
    }

    #[test]
    fn floor_is_a_lower_bound() {
        let pr = prior();
        let mut c = costs();
        assert!((simplex_min_quadratic(&c.c_quad) - 3.0).abs() < 1e-12);
        let diag = vec![vec![4.0, 0.0], vec![0.0, 4.0]];
        assert!((simplex_min_quadratic(&diag) - 2.0).abs() < 1e-12);
        let f = penalty_floor(&pr, &c);
        assert!(f < 0.0 && f > -c.c_reject);
        c.c0 = 50.0;
        assert_eq!(penalty_floor(&pr, &c), 0.0);
    }

    #[test]
    fn approximate_risk() {
        let pr = prior();
        let mut c = costs();
        c.c_sample = 0.15;
        c.salvage = 0.1;
        c.c_inspect = 0.0;
        let plan = SamplingPlan::equal(13, 0.102, 5).unwrap();
        let q = approx_bayes_risk_quadrature(&plan, 0.761, &pr, &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mc = approx_bayes_risk(&plan, 0.761, &pr, &c, 100_000, &mut rng).unwrap();
        assert!((mc.value - q).abs() < 3.0 * mc.std_error, "{mc:?} vs {q}");
        assert!(approx_bayes_risk_quadrature(&plan, 1.0, &pr, &c).is_err());
        // S(ν) does not shrink with R₀, so the never-accept limit needs a large sample.
        let big = SamplingPlan::equal(20_000, 0.1, 5).unwrap();
        let counts = expected_counts(&big, &pr).unwrap();
        let none = RiskReport::assemble(&c, 20_000, counts, 0.0, 0.0).total_risk;
        let near_one = approx_bayes_risk_quadrature(&big, 1.0 - 1e-9, &pr, &c).unwrap();
        assert!(
            (near_one - none).abs() < 1e-6 * none,
            "{near_one} vs {none}"
        );
    }

    #[test]
    fn approximation_is_close_for_large_samples() {
        let (pr, c) = (prior(), costs());
        let plan = SamplingPlan::equal(200, 0.05, 2).unwrap();
        let rule = DecisionRule::Reliability { r0: 0.77 };
        let exact = bayes_risk(&plan, rule, &pr, &c).unwrap().total_risk;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let approx = approx_bayes_risk(&plan, 0.77, &pr, &c, 20_000, &mut rng).unwrap();
        assert!(
            (approx.value - exact).abs() < 0.01 * exact,
            "{approx:?} vs {exact}"
        );
    }

    #[test]
    fn risk_never_exceeds_no_sampling() {
        let (pr, c) = (prior(), costs());
        let mut engine = RiskEngine::new(&pr, &c).unwrap();
        let bound = engine.no_sampling_report().unwrap().total_risk;
        let plan = table_plan();
        let r = engine.report(&plan, DecisionRule::Bayes).unwrap();
        assert!(r.total_risk <= bound);
    }
}
