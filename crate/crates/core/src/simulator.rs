//! Synthetic interval-censored competing-risks life tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decision::{CostModel, DecisionRule};
use crate::error::{invalid, Error, Result};
use crate::mle;
use crate::model::{FailureRates, IntervalData, SamplingPlan};
use crate::prior::{sample_prior, PriorSpec};

const BLOCK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedTest {
    pub data: IntervalData,
    /// 1-based inspection at which the test stopped.
    pub terminated_at: usize,
    pub duration: f64,
}

/// Latent-failure simulation: each unit fails at the minimum of `J`
/// exponential clocks, observed only at the inspection epochs.
pub fn simulate_test<R: Rng + ?Sized>(
    rates: &FailureRates,
    plan: &SamplingPlan,
    rng: &mut R,
) -> Result<SimulatedTest> {
    if plan.is_no_sampling() {
        return Err(invalid("plan", "no units are placed on test"));
    }
    let k = plan.k();
    let j = rates.causes();
    let mut counts = vec![vec![0u32; j]; k];
    for _ in 0..plan.n() {
        let mut first = f64::INFINITY;
        let mut cause = 0;
        for (c, &nu) in rates.rates().iter().enumerate() {
            let e: f64 = Exp1.sample(rng);
            let t = e / nu;
            if t < first {
                first = t;
                cause = c;
            }
        }
        if first <= plan.last_epoch() {
            let m = plan.epochs().partition_point(|&tau| tau < first);
            counts[m][cause] += 1;
        }
    }
    let data = IntervalData::new(plan.n(), counts, k, j)?;
    let terminated_at = data.terminated_at();
    Ok(SimulatedTest {
        duration: plan.epoch(terminated_at),
        terminated_at,
        data,
    })
}

/// Where the rates of each replication come from.
#[derive(Debug, Clone, Copy)]
pub enum RateSource<'a> {
    /// A fresh draw from the prior every replication.
    Prior,
    Fixed(&'a FailureRates),
}

/// Sample mean with its standard error (`None` for a single replication).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: Option<f64>,
}

impl Estimate {
    fn from_sums(sum: f64, sum2: f64, reps: usize) -> Self {
        let n = reps as f64;
        let mean = sum / n;
        let std_error =
            (reps > 1).then(|| ((sum2 - n * mean * mean).max(0.0) / (n - 1.0) / n).sqrt());
        Self { mean, std_error }
    }

    /// Whether `target` lies within `z` standard errors of the mean.
    pub fn covers(&self, target: f64, z: f64) -> bool {
        match self.std_error {
            Some(se) => (self.mean - target).abs() <= z * se,
            None => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub reps: usize,
    pub p_accept: Estimate,
    pub e_failures: Estimate,
    pub e_duration: Estimate,
    pub e_inspections: Estimate,
}

fn verdict(
    plan: &SamplingPlan,
    data: &IntervalData,
    rule: DecisionRule,
    prior: &PriorSpec,
    costs: &CostModel,
) -> Result<bool> {
    Ok(match rule {
        DecisionRule::Reliability { r0 } => mle::estimate_reliability(plan, data, costs.t0)? > r0,
        DecisionRule::Bayes => crate::decision::bayes_rule(plan, data, prior, costs)?.is_accept(),
    })
}

/// Empirical acceptance probability and expected failures, duration and
/// inspections. Replications run in blocks, each seeded from `seed` and its
/// block index, so results do not depend on the thread count.
pub fn empirical_oc(
    plan: &SamplingPlan,
    rule: DecisionRule,
    prior: &PriorSpec,
    costs: &CostModel,
    source: RateSource<'_>,
    reps: usize,
    seed: u64,
) -> Result<OperatingCharacteristics> {
    if reps == 0 {
        return Err(invalid("reps", "at least one replication is required"));
    }
    costs.check_causes(prior.causes())?;
    if let RateSource::Fixed(r) = source {
        if r.causes() != prior.causes() {
            return Err(Error::DimensionMismatch(format!(
                "{} rates for {} causes",
                r.causes(),
                prior.causes()
            )));
        }
    }
    let blocks = reps.div_ceil(BLOCK);
    let partial: Vec<Result<[f64; 8]>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let len = BLOCK.min(reps - b * BLOCK);
            let mut acc = [0.0; 8];
            for _ in 0..len {
                let drawn;
                let rates = match source {
                    RateSource::Prior => {
                        drawn = sample_prior(prior, &mut rng);
                        &drawn
                    }
                    RateSource::Fixed(r) => r,
                };
                let sim = simulate_test(rates, plan, &mut rng)?;
                let a = f64::from(u8::from(verdict(plan, &sim.data, rule, prior, costs)?));
                let vals = [
                    a,
                    f64::from(sim.data.total_failures()),
                    sim.duration,
                    sim.terminated_at as f64,
                ];
                for (i, v) in vals.iter().enumerate() {
                    acc[2 * i] += v;
                    acc[2 * i + 1] += v * v;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = [0.0; 8];
    for p in partial {
        for (t, v) in total.iter_mut().zip(p?) {
            *t += v;
        }
    }
    let est = |i: usize| Estimate::from_sums(total[2 * i], total[2 * i + 1], reps);
    Ok(OperatingCharacteristics {
        reps,
        p_accept: est(0),
        e_failures: est(1),
        e_duration: est(2),
        e_inspections: est(3),
    })
}
