//! Acceptance cost, posterior expected cost and the two lot-disposition rules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::{Kernel, MOMENTS};
use crate::mle::{self, RateEstimate};
use crate::model::{outcome_log_pmf, FailureRates, IntervalData, SamplingPlan};
use crate::outcomes::{time_kernel, weight_coefficients};
use crate::prior::{expected_acceptance_cost, sample_prior, PriorSpec};

/// Cost coefficients of the acceptance-sampling problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Constant part `C_0` of the acceptance cost.
    pub c0: f64,
    /// Linear coefficients `C_j`.
    pub c_lin: Vec<f64>,
    /// Quadratic coefficients `C_ij`, upper triangle used (`i ≤ j`).
    pub c_quad: Vec<Vec<f64>>,
    /// Cost of rejecting the lot, `C_r`.
    pub c_reject: f64,
    /// Cost per unit placed on test, `C_s`.
    pub c_sample: f64,
    /// Salvage value per surviving unit, `r_s`.
    pub salvage: f64,
    /// Cost per unit test time, `C_τ`.
    pub c_time: f64,
    /// Cost per inspection, `C_I`.
    pub c_inspect: f64,
    /// Mission time `τ_0` at which reliability is judged.
    pub t0: f64,
}

impl CostModel {
    pub fn causes(&self) -> usize {
        self.c_lin.len()
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(
                    name,
                    format!("must be non-negative and finite, got {v}"),
                ))
            }
        };
        nonneg("c0", self.c0)?;
        for &c in &self.c_lin {
            nonneg("c_lin", c)?;
        }
        let j = self.c_lin.len();
        if j == 0 {
            return Err(invalid("c_lin", "at least one cause is required"));
        }
        if self.c_quad.len() != j || self.c_quad.iter().any(|r| r.len() != j) {
            return Err(invalid("c_quad", format!("must be a {j}x{j} matrix")));
        }
        for (p, row) in self.c_quad.iter().enumerate() {
            for (q, &c) in row.iter().enumerate() {
                nonneg("c_quad", c)?;
                if q < p && c != 0.0 {
                    return Err(invalid("c_quad", "entries below the diagonal must be zero"));
                }
            }
        }
        for (name, v) in [
            ("c_reject", self.c_reject),
            ("c_sample", self.c_sample),
            ("t0", self.t0),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        nonneg("salvage", self.salvage)?;
        nonneg("c_time", self.c_time)?;
        nonneg("c_inspect", self.c_inspect)?;
        if self.salvage >= self.c_sample {
            return Err(invalid("salvage", "must be below c_sample"));
        }
        Ok(())
    }

    pub(crate) fn check_causes(&self, j: usize) -> Result<()> {
        self.validate()?;
        if self.causes() != j {
            return Err(Error::DimensionMismatch(format!(
                "costs cover {} causes, prior {j}",
                self.causes()
            )));
        }
        Ok(())
    }

    /// `h(ν) = C_0 + Σ C_j ν_j + Σ_{i≤j} C_ij ν_i ν_j`.
    pub fn acceptance_cost(&self, rates: &FailureRates) -> Result<f64> {
        if rates.causes() != self.causes() {
            return Err(Error::DimensionMismatch(format!(
                "{} rates for costs over {} causes",
                rates.causes(),
                self.causes()
            )));
        }
        Ok(self.acceptance_cost_unchecked(rates.rates()))
    }

    pub(crate) fn acceptance_cost_unchecked(&self, nu: &[f64]) -> f64 {
        let mut h = self.c0;
        for (p, &v) in nu.iter().enumerate() {
            h += self.c_lin[p] * v;
            for (q, &w) in nu.iter().enumerate().skip(p) {
                h += self.c_quad[p][q] * v * w;
            }
        }
        h
    }
}

/// Free-function form of [`CostModel::acceptance_cost`].
pub fn acceptance_cost(costs: &CostModel, rates: &FailureRates) -> Result<f64> {
    costs.acceptance_cost(rates)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecisionRule {
    /// Accept when the estimated reliability at `t0` exceeds `r0`.
    Reliability { r0: f64 },
    /// Accept when the posterior expected acceptance cost is at most `C_r`.
    Bayes,
}

impl DecisionRule {
    pub fn reliability(r0: f64) -> Result<Self> {
        if !(r0 > 0.0 && r0 < 1.0) {
            return Err(invalid(
                "r0",
                format!("threshold must lie in (0, 1), got {r0}"),
            ));
        }
        Ok(Self::Reliability { r0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

impl Verdict {
    pub fn from_accept(accept: bool) -> Self {
        if accept {
            Verdict::Accept
        } else {
            Verdict::Reject
        }
    }

    pub fn is_accept(self) -> bool {
        self == Verdict::Accept
    }
}

/// Reliability-threshold rule: accept iff `R̂(t0) > r0`.
pub fn reliability_rule(
    plan: &SamplingPlan,
    data: &IntervalData,
    t0: f64,
    r0: f64,
) -> Result<Verdict> {
    let r_hat = mle::estimate_reliability(plan, data, t0)?;
    Ok(Verdict::from_accept(r_hat > r0))
}

fn check(
    plan: &SamplingPlan,
    data: &IntervalData,
    prior: &PriorSpec,
    costs: &CostModel,
) -> Result<()> {
    costs.check_causes(prior.causes())?;
    if plan.is_no_sampling()
        || data.n() != plan.n()
        || data.k() != plan.k()
        || data.causes() != prior.causes()
    {
        return Err(Error::DimensionMismatch(format!(
            "data is n={}, k={}, J={}; plan is n={}, k={}; prior has J={}",
            data.n(),
            data.k(),
            data.causes(),
            plan.n(),
            plan.k(),
            prior.causes()
        )));
    }
    Ok(())
}

fn phi_from_moments(
    data: &IntervalData,
    prior: &PriorSpec,
    costs: &CostModel,
    m: [f64; MOMENTS],
) -> f64 {
    let (lin, quad) = weight_coefficients(
        prior.dir_alphas(),
        &data.cause_totals(),
        &costs.c_lin,
        &costs.c_quad,
    );
    costs.c0 + (m[1] - m[0]).exp() * lin + (m[2] - m[0]).exp() * quad
}

/// Posterior expected acceptance cost `φ(d)` from the exact binomial expansion.
///
/// Fails with [`Error::Unstable`] when the alternating sums cancel too badly;
/// [`posterior_expected_cost_quadrature`] or the Monte Carlo form then apply.
pub fn posterior_expected_cost(
    plan: &SamplingPlan,
    data: &IntervalData,
    prior: &PriorSpec,
    costs: &CostModel,
) -> Result<f64> {
    check(plan, data, prior, costs)?;
    let (exposure, factors) = time_kernel(plan, &data.interval_totals());
    let m = prior.total_rate_prior().ln_moments_alternating(Kernel {
        exposure,
        factors: &factors,
    })?;
    Ok(phi_from_moments(data, prior, costs, m))
}

/// `φ(d)` by deterministic quadrature over the total rate.
pub fn posterior_expected_cost_quadrature(
    plan: &SamplingPlan,
    data: &IntervalData,
    prior: &PriorSpec,
    costs: &CostModel,
) -> Result<f64> {
    check(plan, data, prior, costs)?;
    let (exposure, factors) = time_kernel(plan, &data.interval_totals());
    let m = prior.total_rate_prior().ln_moments_quadrature(Kernel {
        exposure,
        factors: &factors,
    });
    Ok(phi_from_moments(data, prior, costs, m))
}

/// Expansion when stable, quadrature otherwise.
pub fn posterior_expected_cost_auto(
    plan: &SamplingPlan,
    data: &IntervalData,
    prior: &PriorSpec,
    costs: &CostModel,
) -> Result<f64> {
    match posterior_expected_cost(plan, data, prior, costs) {
        Err(Error::Unstable { .. }) => posterior_expected_cost_quadrature(plan, data, prior, costs),
        other => other,
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Self-normalised likelihood weighting of prior draws.
pub fn posterior_expected_cost_mc<R: Rng + ?Sized>(
    plan: &SamplingPlan,
    data: &IntervalData,
    prior: &PriorSpec,
    costs: &CostModel,
    n_draws: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    check(plan, data, prior, costs)?;
    if n_draws == 0 {
        return Err(invalid("n_draws", "at least one draw is required"));
    }
    let mut logs = Vec::with_capacity(n_draws);
    let mut hs = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let nu = sample_prior(prior, rng);
        logs.push(outcome_log_pmf(&nu, plan, data)?);
        hs.push(costs.acceptance_cost_unchecked(nu.rates()));
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::WeightUnderflow);
    }
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return Err(Error::WeightUnderflow);
    }
    let value = w.iter().zip(&hs).map(|(w, h)| w * h).sum::<f64>() / sw;
    // Delta-method variance of a ratio estimator.
    let var = w
        .iter()
        .zip(&hs)
        .map(|(w, h)| (w * (h - value)).powi(2))
        .sum::<f64>()
        / (sw * sw);
    Ok(McEstimate {
        value,
        std_error: var.sqrt(),
    })
}

/// Bayes rule: accept iff `φ(d) ≤ C_r`.
pub fn bayes_rule(
    plan: &SamplingPlan,
    data: &IntervalData,
    prior: &PriorSpec,
    costs: &CostModel,
) -> Result<Verdict> {
    let phi = posterior_expected_cost_auto(plan, data, prior, costs)?;
    Ok(Verdict::from_accept(phi <= costs.c_reject))
}

/// Decision and risk when no test is run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoSamplingDecision {
    pub verdict: Verdict,
    pub risk: f64,
    pub expected_acceptance_cost: f64,
}

/// Accept iff `E[h(ν)] ≤ C_r`; risk is the smaller of the two.
pub fn no_sampling_decision(prior: &PriorSpec, costs: &CostModel) -> Result<NoSamplingDecision> {
    let e = expected_acceptance_cost(prior, costs)?;
    let accept = e <= costs.c_reject;
    Ok(NoSamplingDecision {
        verdict: Verdict::from_accept(accept),
        risk: if accept { e } else { costs.c_reject },
        expected_acceptance_cost: e,
    })
}

/// Everything known about one observed test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    /// `None` when every unit failed in the first interval.
    pub estimate: Option<RateEstimate>,
    pub reliability: f64,
    pub phi: f64,
    pub verdict: Verdict,
}

pub fn assess(
    plan: &SamplingPlan,
    data: &IntervalData,
    prior: &PriorSpec,
    costs: &CostModel,
    rule: DecisionRule,
) -> Result<Assessment> {
    let estimate = match mle::fit_total_rate(plan, data) {
        Ok(e) => Some(e),
        Err(Error::UnboundedEstimate) => None,
        Err(e) => return Err(e),
    };
    let reliability = mle::estimate_reliability(plan, data, costs.t0)?;
    let phi = posterior_expected_cost_auto(plan, data, prior, costs)?;
    let verdict = match rule {
        DecisionRule::Reliability { r0 } => Verdict::from_accept(reliability > r0),
        DecisionRule::Bayes => Verdict::from_accept(phi <= costs.c_reject),
    };
    Ok(Assessment {
        estimate,
        reliability,
        phi,
        verdict,
    })
}
