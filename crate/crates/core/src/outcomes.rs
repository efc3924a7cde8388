//! Grouping of the outcome space by sufficient statistics.
//!
//! The likelihood of a count matrix factorises into a part that depends only on
//! the per-interval totals (the time profile) and a multinomial split of the
//! `d_t` failures over causes. Both the posterior and every decision rule depend
//! on the data only through the time profile and the cause totals, so risk sums
//! can run over (profile, split) pairs instead of raw count matrices.

use crate::decision::CostModel;
use crate::error::{Error, Result};
use crate::kernel::{GammaMixture, Kernel, MOMENTS};
use crate::mle;
use crate::model::SamplingPlan;
use crate::numeric::{
    composition_count, for_each_composition, ln_binomial, ln_factorial, ln_gamma,
};
use crate::prior::PriorSpec;

/// `ln E[Π w_j^{l_j}]` for `w ~ Dirichlet(alphas)`.
pub(crate) fn ln_dirichlet_moment(alphas: &[f64], exps: &[u32]) -> f64 {
    let a0: f64 = alphas.iter().sum();
    let l: u32 = exps.iter().sum();
    let mut v = ln_gamma(a0) - ln_gamma(a0 + f64::from(l));
    for (&a, &e) in alphas.iter().zip(exps) {
        if e > 0 {
            v += ln_gamma(a + f64::from(e)) - ln_gamma(a);
        }
    }
    v
}

/// Exposure `A` and interval factors `(Δ_m, d_m)` of the time kernel for interval totals.
pub(crate) fn time_kernel(plan: &SamplingPlan, totals: &[u32]) -> (f64, Vec<(f64, u32)>) {
    let d_t: u32 = totals.iter().sum();
    let mut exposure = f64::from(plan.n() - d_t) * plan.last_epoch();
    let mut factors = Vec::new();
    for (m, &d) in totals.iter().enumerate() {
        if d > 0 {
            exposure += f64::from(d) * plan.epoch(m);
            factors.push((plan.gap(m), d));
        }
    }
    (exposure, factors)
}

/// One group of outcomes sharing the same per-interval totals (or, for equal
/// spacing, the same `d_t` and exposure).
#[derive(Debug, Clone)]
pub struct TimeProfile {
    pub d_t: u32,
    /// Log of the summed multinomial time coefficients of the group.
    pub ln_weight: f64,
    pub exposure: f64,
    pub factors: Vec<(f64, u32)>,
    /// Maximum likelihood total rate (`+inf` when unbounded).
    pub nu_hat: f64,
}

/// `[x^s] ((1 + x + … + x^{k-1})/k)^d` for every `d ≤ n`.
#[derive(Debug, Clone)]
pub struct SpreadTable {
    k: usize,
    polys: Vec<Vec<f64>>,
}

impl SpreadTable {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            polys: vec![vec![1.0]],
        }
    }

    pub fn ensure(&mut self, n: u32) {
        let k = self.k;
        while self.polys.len() <= n as usize {
            let prev = self.polys.last().expect("seeded with d = 0");
            let len = prev.len() + k - 1;
            let mut next = vec![0.0; len];
            // Sliding window sum of width k over the previous coefficients.
            let mut window = 0.0;
            for (s, slot) in next.iter_mut().enumerate() {
                if s < prev.len() {
                    window += prev[s];
                }
                if s >= k {
                    window -= prev[s - k];
                }
                *slot = window.max(0.0) / k as f64;
            }
            self.polys.push(next);
        }
    }

    pub fn poly(&self, d: u32) -> &[f64] {
        &self.polys[d as usize]
    }
}

/// Number of time profiles [`time_profiles`] would produce.
pub fn profile_count(plan: &SamplingPlan) -> f64 {
    let n = f64::from(plan.n());
    match plan.interval_length() {
        Some(_) => {
            let k1 = plan.k() as f64 - 1.0;
            (n + 1.0) + k1 * n * (n + 1.0) / 2.0
        }
        None => composition_count(plan.n(), plan.k() + 1),
    }
}

/// All time profiles of a plan with their weights and MLEs.
pub fn time_profiles(plan: &SamplingPlan, cap: u64) -> Result<Vec<TimeProfile>> {
    let size = profile_count(plan);
    if size > cap as f64 {
        return Err(Error::EnumerationCap { size, cap });
    }
    match plan.interval_length() {
        Some(h) => {
            let mut table = SpreadTable::new(plan.k());
            table.ensure(plan.n());
            Ok(equal_profiles(plan.n(), h, plan.k(), &table))
        }
        None => Ok(general_profiles(plan)),
    }
}

/// Equal-interval profiles indexed by `(d_t, s')`, `s' = Σ (m-1) d_m` over 1-based `m`.
pub fn equal_profiles(n: u32, h: f64, k: usize, table: &SpreadTable) -> Vec<TimeProfile> {
    let mut out = Vec::new();
    let ln_k = (k as f64).ln();
    for d_t in 0..=n {
        let base = ln_binomial(n, d_t) + f64::from(d_t) * ln_k;
        let survivors_s = (k as u64) * u64::from(n - d_t);
        for (s_prime, &p) in table.poly(d_t).iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let s = s_prime as u64 + survivors_s;
            let factors = if d_t > 0 { vec![(h, d_t)] } else { Vec::new() };
            out.push(TimeProfile {
                d_t,
                ln_weight: base + p.ln(),
                exposure: h * s as f64,
                factors,
                nu_hat: mle::equal_interval_rate(n, h, k as u32, d_t, s),
            });
        }
    }
    out
}

fn general_profiles(plan: &SamplingPlan) -> Vec<TimeProfile> {
    let n = plan.n();
    let k = plan.k();
    let mut out = Vec::new();
    for_each_composition(n, k + 1, |c| {
        let totals = &c[..k];
        let d_t = n - c[k];
        let mut ln_w = ln_factorial(n) - ln_factorial(c[k]);
        for &d in totals {
            ln_w -= ln_factorial(d);
        }
        let (exposure, factors) = time_kernel(plan, totals);
        let nu_hat = mle::total_rate_from_totals(plan, totals).unwrap_or(f64::INFINITY);
        out.push(TimeProfile {
            d_t,
            ln_weight: ln_w,
            exposure,
            factors,
            nu_hat,
        });
    });
    out
}

/// Per-profile gamma-mixture moments `ln E[ν^r K(ν)]`.
pub fn profile_moments(gamma: &GammaMixture, profiles: &[TimeProfile]) -> Vec<[f64; MOMENTS]> {
    profiles
        .iter()
        .map(|p| {
            gamma.ln_moments(Kernel {
                exposure: p.exposure,
                factors: &p.factors,
            })
        })
        .collect()
}

/// One way of splitting `d_t` failures over causes.
#[derive(Debug, Clone, Copy)]
pub struct Split {
    /// Dirichlet-multinomial probability of this split given `d_t`.
    pub prob: f64,
    /// `Σ_p C_p E[w_p | split]`.
    pub lin: f64,
    /// `Σ_{p≤q} C_pq E[w_p w_q | split]`.
    pub quad: f64,
}

/// Cause-split summaries for every `d_t`, independent of the inspection plan.
#[derive(Debug, Clone)]
pub struct SplitTable {
    alphas: Vec<f64>,
    c_lin: Vec<f64>,
    c_quad: Vec<Vec<f64>>,
    by_total: Vec<Vec<Split>>,
    /// Same coefficients under the prior fractions.
    pub prior_lin: f64,
    pub prior_quad: f64,
}

impl SplitTable {
    pub fn new(prior: &PriorSpec, costs: &CostModel) -> Self {
        let alphas = prior.dir_alphas().to_vec();
        let zero = vec![0u32; alphas.len()];
        let (prior_lin, prior_quad) =
            weight_coefficients(&alphas, &zero, &costs.c_lin, &costs.c_quad);
        Self {
            alphas,
            c_lin: costs.c_lin.clone(),
            c_quad: costs.c_quad.clone(),
            by_total: Vec::new(),
            prior_lin,
            prior_quad,
        }
    }

    pub fn ensure(&mut self, n: u32) {
        let j = self.alphas.len();
        while self.by_total.len() <= n as usize {
            let d_t = self.by_total.len() as u32;
            let mut splits = Vec::new();
            for_each_composition(d_t, j, |d| {
                let mut ln_p = ln_factorial(d_t) + ln_dirichlet_moment(&self.alphas, d);
                for &x in d {
                    ln_p -= ln_factorial(x);
                }
                let (lin, quad) = weight_coefficients(&self.alphas, d, &self.c_lin, &self.c_quad);
                splits.push(Split {
                    prob: ln_p.exp(),
                    lin,
                    quad,
                });
            });
            self.by_total.push(splits);
        }
    }

    pub fn splits(&self, d_t: u32) -> &[Split] {
        &self.by_total[d_t as usize]
    }
}

/// Posterior Dirichlet moments folded with the cost coefficients.
pub(crate) fn weight_coefficients(
    alphas: &[f64],
    counts: &[u32],
    c_lin: &[f64],
    c_quad: &[Vec<f64>],
) -> (f64, f64) {
    let post: Vec<f64> = alphas
        .iter()
        .zip(counts)
        .map(|(a, &d)| a + f64::from(d))
        .collect();
    let a0: f64 = post.iter().sum();
    let lin = post.iter().zip(c_lin).map(|(a, c)| c * a / a0).sum();
    let mut quad = 0.0;
    for p in 0..post.len() {
        for q in p..post.len() {
            let c = c_quad[p][q];
            if c != 0.0 {
                let delta = if p == q { 1.0 } else { 0.0 };
                quad += c * post[p] * (post[q] + delta) / (a0 * (a0 + 1.0));
            }
        }
    }
    (lin, quad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{enumerate_outcomes, DEFAULT_ENUMERATION_CAP};
    use crate::numeric::compensated_sum;
    use std::collections::HashMap;

    #[test]
    fn spread_table_counts_weighted_placements() {
        // d = 2 units over k = 3 intervals: s' = 0..4 with multiplicities 1,2,3,2,1.
        let mut t = SpreadTable::new(3);
        t.ensure(2);
        let got: Vec<f64> = t.poly(2).iter().map(|p| p * 9.0).collect();
        for (g, e) in got.iter().zip([1.0, 2.0, 3.0, 2.0, 1.0]) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_profiles_regroup_the_general_ones() {
        let plan = SamplingPlan::equal(5, 0.4, 3).unwrap();
        let eq = time_profiles(&plan, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(eq.len() as f64, profile_count(&plan));
        let general = general_profiles(&plan);
        let mut grouped: HashMap<(u32, i64), f64> = HashMap::new();
        for p in &general {
            *grouped
                .entry((p.d_t, (p.exposure * 1e6).round() as i64))
                .or_default() += p.ln_weight.exp();
        }
        assert_eq!(grouped.len(), eq.len());
        for p in &eq {
            let w = grouped[&(p.d_t, (p.exposure * 1e6).round() as i64)];
            assert!((w - p.ln_weight.exp()).abs() < 1e-9 * w);
        }
    }

    #[test]
    fn grouped_mass_matches_full_enumeration() {
        let prior = PriorSpec::new(2.8, 1.0, vec![1.5, 1.8]).unwrap();
        let costs = crate::fixtures::costs();
        let gamma = prior.total_rate_prior();
        for plan in [
            SamplingPlan::equal(4, 0.3, 3).unwrap(),
            SamplingPlan::new(3, vec![0.2, 0.5, 1.1]).unwrap(),
        ] {
            let profiles = time_profiles(&plan, DEFAULT_ENUMERATION_CAP).unwrap();
            let moments = profile_moments(&gamma, &profiles);
            let mut splits = SplitTable::new(&prior, &costs);
            splits.ensure(plan.n());
            let mut total = Vec::new();
            for (p, m) in profiles.iter().zip(&moments) {
                for s in splits.splits(p.d_t) {
                    total.push((p.ln_weight + m[0]).exp() * s.prob);
                }
            }
            let grouped = compensated_sum(total);
            let all = enumerate_outcomes(&plan, 2, DEFAULT_ENUMERATION_CAP).unwrap();
            let direct = compensated_sum(
                all.iter()
                    .map(|d| crate::prior::prior_predictive(&plan, d, &prior).unwrap()),
            );
            assert!((grouped - 1.0).abs() < 1e-10);
            assert!((direct - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn split_probabilities_normalise() {
        let prior = PriorSpec::new(2.8, 1.0, vec![1.5, 1.8, 0.7]).unwrap();
        let mut costs = crate::fixtures::costs();
        costs.c_lin = vec![1.0, 2.0, 3.0];
        costs.c_quad = vec![
            vec![1.0, 0.5, 0.0],
            vec![0.0, 2.0, 1.0],
            vec![0.0, 0.0, 1.0],
        ];
        let mut t = SplitTable::new(&prior, &costs);
        t.ensure(6);
        for d in 0..=6 {
            let s: f64 = t.splits(d).iter().map(|x| x.prob).sum();
            assert!((s - 1.0).abs() < 1e-12);
            // Averaging posterior coefficients over splits recovers the prior ones.
            let lin: f64 = t.splits(d).iter().map(|x| x.prob * x.lin).sum();
            let quad: f64 = t.splits(d).iter().map(|x| x.prob * x.quad).sum();
            assert!((lin - t.prior_lin).abs() < 1e-12);
            assert!((quad - t.prior_quad).abs() < 1e-12);
        }
    }
}
