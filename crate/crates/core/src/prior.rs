//! Gamma-Dirichlet prior on cause-specific rates.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::decision::CostModel;
use crate::error::{invalid, Error, Result};
use crate::kernel::GammaMixture;
use crate::model::{FailureRates, IntervalData, SamplingPlan};
use crate::numeric::{ln_factorial, ln_gamma};
use crate::outcomes::{ln_dirichlet_moment, time_kernel};

/// `ν ~ Gamma(α, rate η)` and `ν_j/ν ~ Dirichlet(α_1..α_J)`, independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PriorSpecRaw", into = "PriorSpecRaw")]
pub struct PriorSpec {
    alpha: f64,
    eta: f64,
    dir_alphas: Vec<f64>,
    alpha0: f64,
}

#[derive(Serialize, Deserialize)]
struct PriorSpecRaw {
    alpha: f64,
    eta: f64,
    dir_alphas: Vec<f64>,
}

impl TryFrom<PriorSpecRaw> for PriorSpec {
    type Error = Error;
    fn try_from(r: PriorSpecRaw) -> Result<Self> {
        Self::new(r.alpha, r.eta, r.dir_alphas)
    }
}

impl From<PriorSpec> for PriorSpecRaw {
    fn from(p: PriorSpec) -> Self {
        Self {
            alpha: p.alpha,
            eta: p.eta,
            dir_alphas: p.dir_alphas,
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(
            name,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

impl PriorSpec {
    pub fn new(alpha: f64, eta: f64, dir_alphas: Vec<f64>) -> Result<Self> {
        positive("alpha", alpha)?;
        positive("eta", eta)?;
        if dir_alphas.is_empty() {
            return Err(invalid("dir_alphas", "at least one cause is required"));
        }
        for &a in &dir_alphas {
            positive("dir_alphas", a)?;
        }
        let alpha0 = dir_alphas.iter().sum();
        Ok(Self {
            alpha,
            eta,
            dir_alphas,
            alpha0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dir_alphas(&self) -> &[f64] {
        &self.dir_alphas
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn causes(&self) -> usize {
        self.dir_alphas.len()
    }

    pub fn total_rate_prior(&self) -> GammaMixture {
        GammaMixture::new(self.alpha, self.eta)
    }

    /// Prior mean cause fractions `α_j/α_0`.
    pub fn mean_fractions(&self) -> Vec<f64> {
        self.dir_alphas.iter().map(|a| a / self.alpha0).collect()
    }

    /// `E[(η/(η+t))^α] = E[exp(-ν t)]`.
    pub fn laplace(&self, t: f64) -> f64 {
        (self.alpha * (self.eta / (self.eta + t)).ln()).exp()
    }
}

/// Log of the joint prior density of `(ν_1..ν_J)`.
pub fn prior_log_density(prior: &PriorSpec, rates: &FailureRates) -> Result<f64> {
    if rates.causes() != prior.causes() {
        return Err(Error::DimensionMismatch(format!(
            "{} rates for a prior over {} causes",
            rates.causes(),
            prior.causes()
        )));
    }
    let nu = rates.total();
    let mut l = prior.alpha * prior.eta.ln() - ln_gamma(prior.alpha)
        + (prior.alpha - prior.alpha0) * nu.ln()
        - prior.eta * nu
        + ln_gamma(prior.alpha0);
    for (a, v) in prior.dir_alphas.iter().zip(rates.rates()) {
        l += (a - 1.0) * v.ln() - ln_gamma(*a);
    }
    Ok(l)
}

/// One draw: a gamma total rate split by Dirichlet fractions.
pub fn sample_prior<R: Rng + ?Sized>(prior: &PriorSpec, rng: &mut R) -> FailureRates {
    let total_dist = Gamma::new(prior.alpha, 1.0 / prior.eta).expect("validated shape and rate");
    let total: f64 = total_dist.sample(rng);
    let fractions = sample_dirichlet(&prior.dir_alphas, rng);
    let rates: Vec<f64> = fractions
        .iter()
        .map(|w| (total * w).max(f64::MIN_POSITIVE))
        .collect();
    FailureRates::new(rates).expect("positive draws")
}

/// Dirichlet draw through normalised gamma variates.
pub(crate) fn sample_dirichlet<R: Rng + ?Sized>(alphas: &[f64], rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = alphas
            .iter()
            .map(|&a| Gamma::new(a, 1.0).expect("validated shape").sample(rng))
            .collect();
        let s: f64 = g.iter().sum();
        if s > 0.0 {
            return g.into_iter().map(|x| x / s).collect();
        }
    }
}

/// `E[ν^e · Π ν_j^{l_j} · exp(-s ν)]` under the prior, in closed form.
pub fn gd_expectation(
    prior: &PriorSpec,
    exponent_total: f64,
    linear_exps: &[u32],
    rate_shift: f64,
) -> Result<f64> {
    if linear_exps.len() != prior.causes() {
        return Err(Error::DimensionMismatch(format!(
            "{} exponents for {} causes",
            linear_exps.len(),
            prior.causes()
        )));
    }
    if !(rate_shift >= 0.0) {
        return Err(invalid("rate_shift", "must be non-negative"));
    }
    let l: u32 = linear_exps.iter().sum();
    let shape = prior.alpha + exponent_total + f64::from(l);
    if !(shape > 0.0) {
        return Err(invalid(
            "exponent_total",
            format!("gamma shape {shape} is not positive"),
        ));
    }
    let ln_total = prior.alpha * prior.eta.ln() - ln_gamma(prior.alpha) + ln_gamma(shape)
        - shape * (prior.eta + rate_shift).ln();
    Ok((ln_total + ln_dirichlet_moment(prior.dir_alphas(), linear_exps)).exp())
}

/// `E[h(ν)]`, the expected cost of accepting without a test.
pub fn expected_acceptance_cost(prior: &PriorSpec, costs: &CostModel) -> Result<f64> {
    costs.check_causes(prior.causes())?;
    let j = prior.causes();
    let mut e = vec![0u32; j];
    let mut total = costs.c0;
    for p in 0..j {
        e[p] = 1;
        total += costs.c_lin[p] * gd_expectation(prior, 0.0, &e, 0.0)?;
        e[p] = 0;
    }
    for p in 0..j {
        for q in p..j {
            let c = costs.c_quad[p][q];
            if c != 0.0 {
                e[p] += 1;
                e[q] += 1;
                total += c * gd_expectation(prior, 0.0, &e, 0.0)?;
                e[p] = 0;
                e[q] = 0;
            }
        }
    }
    Ok(total)
}

/// Marginal probability of one count matrix, integrating the rates out exactly.
pub fn prior_predictive(
    plan: &SamplingPlan,
    data: &IntervalData,
    prior: &PriorSpec,
) -> Result<f64> {
    Ok(ln_prior_predictive(plan, data, prior)?.exp())
}

pub fn ln_prior_predictive(
    plan: &SamplingPlan,
    data: &IntervalData,
    prior: &PriorSpec,
) -> Result<f64> {
    check_data(plan, data, prior)?;
    let totals = data.interval_totals();
    let (exposure, factors) = time_kernel(plan, &totals);
    let ln_i0 = prior.total_rate_prior().ln_moments(crate::kernel::Kernel {
        exposure,
        factors: &factors,
    })[0];
    let mut ln_w = ln_factorial(plan.n()) - ln_factorial(data.survivors());
    for &c in data.counts().iter().flatten() {
        ln_w -= ln_factorial(c);
    }
    Ok(ln_w + ln_dirichlet_moment(prior.dir_alphas(), &data.cause_totals()) + ln_i0)
}

/// Monte Carlo average of `P(d | ν)` over prior draws, with its standard error.
pub fn prior_predictive_mc<R: Rng + ?Sized>(
    plan: &SamplingPlan,
    data: &IntervalData,
    prior: &PriorSpec,
    draws: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    check_data(plan, data, prior)?;
    if draws == 0 {
        return Err(invalid("draws", "at least one draw is required"));
    }
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..draws {
        let nu = sample_prior(prior, rng);
        let p = crate::model::outcome_log_pmf(&nu, plan, data)?.exp();
        sum += p;
        sum2 += p * p;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

fn check_data(plan: &SamplingPlan, data: &IntervalData, prior: &PriorSpec) -> Result<()> {
    if data.n() != plan.n() || data.k() != plan.k() || data.causes() != prior.causes() {
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
