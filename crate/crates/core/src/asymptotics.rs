//! Large-sample normal approximation of the reliability estimate.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{FailureRates, SamplingPlan};
use crate::numeric::normal_cdf;

const PIVOT_FLOOR: f64 = 1e-12;

/// Conditional probabilities of failing in interval `m` given survival to its start.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFractions {
    /// `q_mj = (ν_j/ν)(1 - exp(-ν Δ_m))`, k × J.
    pub by_cause: Vec<Vec<f64>>,
    /// `q_m = 1 - exp(-ν Δ_m)`.
    pub total: Vec<f64>,
}

/// Gradients of the fractions with respect to `ν_1..ν_J`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGradients {
    /// `∂q_mj/∂ν_l`, indexed `[m][j][l]`.
    pub by_cause: Vec<Vec<Vec<f64>>>,
    /// `∂q_m/∂ν_l`, indexed `[m][l]`.
    pub total: Vec<Vec<f64>>,
}

/// Expected Fisher information for `(ν_1..ν_J)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoMatrix {
    pub entries: Vec<Vec<f64>>,
    pub n: u32,
}

impl InfoMatrix {
    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    /// Lower Cholesky factor; fails on a pivot below the relative floor.
    pub fn cholesky(&self) -> Result<Vec<Vec<f64>>> {
        let d = self.dim();
        let scale = (0..d).map(|i| self.entries[i][i].abs()).fold(0.0, f64::max);
        let mut l = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = self.entries[i][j] - (0..j).map(|p| l[i][p] * l[j][p]).sum::<f64>();
                if i == j {
                    if !(s > PIVOT_FLOOR * scale) || !s.is_finite() {
                        return Err(Error::SingularInformation { pivot: s });
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        Ok(l)
    }

    /// `xᵀ I⁻¹ x`.
    pub fn inverse_quadratic_form(&self, x: &[f64]) -> Result<f64> {
        let l = self.cholesky()?;
        // Forward substitution; the form equals |L⁻¹ x|².
        let mut y = vec![0.0; x.len()];
        for i in 0..x.len() {
            y[i] = (x[i] - (0..i).map(|p| l[i][p] * y[p]).sum::<f64>()) / l[i][i];
        }
        Ok(y.iter().map(|v| v * v).sum())
    }
}

fn check(plan: &SamplingPlan) -> Result<()> {
    if plan.is_no_sampling() {
        return Err(invalid(
            "plan",
            "the normal approximation needs a life test",
        ));
    }
    Ok(())
}

pub fn cell_fractions(rates: &FailureRates, plan: &SamplingPlan) -> CellFractions {
    let nu = rates.total();
    let total: Vec<f64> = plan.gaps().iter().map(|d| -(-nu * d).exp_m1()).collect();
    let by_cause = total
        .iter()
        .map(|q| rates.rates().iter().map(|v| v / nu * q).collect())
        .collect();
    CellFractions { by_cause, total }
}

pub fn cell_fraction_gradients(rates: &FailureRates, plan: &SamplingPlan) -> CellGradients {
    let nu = rates.total();
    let j_count = rates.causes();
    let mut by_cause = Vec::with_capacity(plan.k());
    let mut total = Vec::with_capacity(plan.k());
    for delta in plan.gaps() {
        let surv = (-nu * delta).exp();
        let q = -(-nu * delta).exp_m1();
        let dq = delta * surv;
        total.push(vec![dq; j_count]);
        let rows = rates
            .rates()
            .iter()
            .enumerate()
            .map(|(j, &nu_j)| {
                (0..j_count)
                    .map(|l| {
                        let share = if l == j {
                            (nu - nu_j) / (nu * nu)
                        } else {
                            -nu_j / (nu * nu)
                        };
                        share * q + nu_j / nu * dq
                    })
                    .collect()
            })
            .collect();
        by_cause.push(rows);
    }
    CellGradients { by_cause, total }
}

pub fn fisher_information(rates: &FailureRates, plan: &SamplingPlan) -> Result<InfoMatrix> {
    check(plan)?;
    let j_count = rates.causes();
    let q = cell_fractions(rates, plan);
    let g = cell_fraction_gradients(rates, plan);
    let n = f64::from(plan.n());
    let mut entries = vec![vec![0.0; j_count]; j_count];
    for m in 0..plan.k() {
        let at_risk = n * (-rates.total() * plan.epoch(m)).exp();
        for j in 0..j_count {
            let w = at_risk / q.by_cause[m][j];
            let grad = &g.by_cause[m][j];
            for a in 0..j_count {
                for b in 0..j_count {
                    entries[a][b] += w * grad[a] * grad[b];
                }
            }
        }
        let w = at_risk / (1.0 - q.total[m]);
        let grad = &g.total[m];
        for a in 0..j_count {
            for b in 0..j_count {
                entries[a][b] += w * grad[a] * grad[b];
            }
        }
    }
    Ok(InfoMatrix {
        entries,
        n: plan.n(),
    })
}

/// Delta-method standard deviation of `exp(-ν̂ t0)`.
pub fn delta_sd(rates: &FailureRates, plan: &SamplingPlan, t0: f64) -> Result<f64> {
    if !(t0 > 0.0) {
        return Err(invalid("t0", "must be positive"));
    }
    let info = fisher_information(rates, plan)?;
    let grad = vec![-t0 * (-rates.total() * t0).exp(); rates.causes()];
    Ok(info.inverse_quadratic_form(&grad)?.sqrt())
}

/// Information about the total rate alone, per unit on test.
///
/// The delta-method variance depends on the rates only through their total,
/// and equals `(t0 exp(-ν t0))² / (n · this)`.
pub fn total_rate_information(nu: f64, gaps: &[f64]) -> f64 {
    let mut info = 0.0;
    let mut start = 0.0;
    for &delta in gaps {
        let surv = (-nu * delta).exp();
        let q = -(-nu * delta).exp_m1();
        let dq = delta * surv;
        info += (-nu * start).exp() * dq * dq / (q * surv);
        start += delta;
    }
    info
}

/// `Φ((c(ν) - R0) / S(ν))`; an exact indicator when `S = 0`.
pub fn approx_accept_prob(
    rates: &FailureRates,
    plan: &SamplingPlan,
    t0: f64,
    r0: f64,
) -> Result<f64> {
    let s = delta_sd(rates, plan, t0)?;
    let c = (-rates.total() * t0).exp();
    Ok(normal_accept(c, s, r0))
}

#[inline]
pub(crate) fn normal_accept(c: f64, s: f64, r0: f64) -> f64 {
    if s > 0.0 {
        normal_cdf((c - r0) / s)
    } else if c > r0 {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{enumerate_outcomes, outcome_log_pmf, DEFAULT_ENUMERATION_CAP};
    use proptest::prelude::*;

    fn rates(v: &[f64]) -> FailureRates {
        FailureRates::new(v.to_vec()).unwrap()
    }

    fn plan_from_gaps(n: u32, gaps: &[f64]) -> SamplingPlan {
        let mut t = 0.0;
        SamplingPlan::new(
            n,
            gaps.iter()
                .map(|g| {
                    t += g;
                    t
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn fraction_examples() {
        let r = rates(&[1.0, 1.0]);
        let p = SamplingPlan::equal(3, 0.5, 3).unwrap();
        let q = cell_fractions(&r, &p);
        assert!((q.total[0] - 0.6321).abs() < 1e-4);
        assert!((q.by_cause[0][0] - 0.3161).abs() < 1e-4);
        assert!(q.total.iter().all(|v| (v - q.total[0]).abs() < 1e-15));
        let g = cell_fraction_gradients(&r, &p);
        assert!((g.by_cause[1][0][0] - g.by_cause[1][1][1]).abs() < 1e-15);

        let single = rates(&[0.7]);
        let g = cell_fraction_gradients(&single, &p);
        assert!((g.total[0][0] - 0.5 * (-0.35f64).exp()).abs() < 1e-15);
        assert!((g.by_cause[0][0][0] - g.total[0][0]).abs() < 1e-15);
    }

    /// Expected negative Hessian of the log-likelihood by summing over all outcomes.
    fn brute_force_information(r: &FailureRates, p: &SamplingPlan) -> Vec<Vec<f64>> {
        let j = r.causes();
        let nu = r.total();
        let mut out = vec![vec![0.0; j]; j];
        for d in enumerate_outcomes(p, j, DEFAULT_ENUMERATION_CAP).unwrap() {
            let prob = outcome_log_pmf(r, p, &d).unwrap().exp();
            let d_t = f64::from(d.total_failures());
            let cause = d.cause_totals();
            let mut common = d_t / (nu * nu);
            for (m, dm) in d.interval_totals().iter().enumerate() {
                let delta = p.gap(m);
                let e = (nu * delta).exp();
                common -= f64::from(*dm) * delta * delta * e / ((e - 1.0) * (e - 1.0));
            }
            for a in 0..j {
                for b in 0..j {
                    let mut h = common;
                    if a == b {
                        h -= f64::from(cause[a]) / (r.rates()[a] * r.rates()[a]);
                    }
                    out[a][b] -= prob * h;
                }
            }
        }
        out
    }

    #[test]
    fn information_matches_expected_hessian() {
        for (v, gaps) in [
            (vec![0.3, 0.7], vec![0.5, 0.9]),
            (vec![1.2, 0.4], vec![0.2, 0.3]),
            (vec![0.8], vec![0.4, 0.4]),
        ] {
            let r = rates(&v);
            let p = plan_from_gaps(1, &gaps);
            let info = fisher_information(&r, &p).unwrap();
            let brute = brute_force_information(&r, &p);
            for a in 0..r.causes() {
                for b in 0..r.causes() {
                    assert!((info.entries[a][b] - brute[a][b]).abs() < 1e-8, "{a}{b}");
                }
            }
        }
    }

    #[test]
    fn information_scales_with_n_and_sd_shrinks() {
        let r = rates(&[0.3, 0.7]);
        let p1 = SamplingPlan::equal(5, 0.4, 3).unwrap();
        let p2 = SamplingPlan::equal(10, 0.4, 3).unwrap();
        let p4 = SamplingPlan::equal(20, 0.4, 3).unwrap();
        let a = fisher_information(&r, &p1).unwrap();
        let b = fisher_information(&r, &p2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (2.0 * a.entries[i][j] - b.entries[i][j]).abs() < 1e-12 * b.entries[i][j].abs()
                );
            }
        }
        let s1 = delta_sd(&r, &p1, 0.1).unwrap();
        let s4 = delta_sd(&r, &p4, 0.1).unwrap();
        assert!((s4 - s1 / 2.0).abs() < 1e-12);
        // The variance only sees the total rate.
        let alt = rates(&[0.9, 0.1]);
        assert!((delta_sd(&alt, &p1, 0.1).unwrap() - s1).abs() < 1e-12);
        let fast = 0.1 * (-0.1f64).exp() / (5.0 * total_rate_information(1.0, &p1.gaps())).sqrt();
        assert!((fast - s1).abs() < 1e-12);
    }

    #[test]
    fn accept_probability_limits() {
        let r = rates(&[0.3, 0.7]);
        let p = SamplingPlan::equal(20, 0.2, 4).unwrap();
        let c = (-0.1f64).exp();
        assert!((approx_accept_prob(&r, &p, 0.1, c).unwrap() - 0.5).abs() < 1e-12);
        assert!(approx_accept_prob(&r, &p, 0.1, 1e-9).unwrap() > 1.0 - 1e-12);
        let big = SamplingPlan::equal(2000, 0.2, 4).unwrap();
        assert!(approx_accept_prob(&r, &big, 0.1, 1.0 - 1e-12).unwrap() < 1e-12);
        assert!(approx_accept_prob(&r, &p, 0.1, 1.0 - 1e-12).unwrap() < 1e-3);
        assert_eq!(normal_accept(0.9, 0.0, 0.8), 1.0);
        assert_eq!(normal_accept(0.8, 0.0, 0.8), 0.0);
        assert!(fisher_information(&r, &SamplingPlan::no_sampling()).is_err());
    }

    #[test]
    fn singular_information_is_reported() {
        let info = InfoMatrix {
            entries: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            n: 1,
        };
        assert!(matches!(
            info.inverse_quadratic_form(&[1.0, 0.0]),
            Err(Error::SingularInformation { .. })
        ));
    }

    proptest! {
        #[test]
        fn gradients_match_finite_differences(
            v in prop::collection::vec(0.05f64..3.0, 1..=3),
            gaps in prop::collection::vec(0.05f64..1.0, 1..=3),
        ) {
            let r = FailureRates::new(v.clone()).unwrap();
            let p = plan_from_gaps(3, &gaps);
            let g = cell_fraction_gradients(&r, &p);
            let step = 1e-6;
            for l in 0..v.len() {
                let mut up = v.clone();
                let mut dn = v.clone();
                up[l] += step;
                dn[l] -= step;
                let qu = cell_fractions(&FailureRates::new(up).unwrap(), &p);
                let qd = cell_fractions(&FailureRates::new(dn).unwrap(), &p);
                for m in 0..p.k() {
                    let fd = (qu.total[m] - qd.total[m]) / (2.0 * step);
                    prop_assert!((fd - g.total[m][l]).abs() <= 1e-6 * fd.abs().max(1e-3));
                    for j in 0..v.len() {
                        let fd = (qu.by_cause[m][j] - qd.by_cause[m][j]) / (2.0 * step);
                        prop_assert!((fd - g.by_cause[m][j][l]).abs() <= 1e-6 * fd.abs().max(1e-3));
                    }
                }
            }
        }

        #[test]
        fn information_is_positive_semidefinite(
            v in prop::collection::vec(0.05f64..3.0, 1..=3),
            gaps in prop::collection::vec(0.05f64..1.0, 1..=4),
            x in prop::collection::vec(-1.0f64..1.0, 3),
        ) {
            let r = FailureRates::new(v.clone()).unwrap();
            let p = plan_from_gaps(4, &gaps);
            let info = fisher_information(&r, &p).unwrap();
            let trace: f64 = (0..v.len()).map(|i| info.entries[i][i]).sum();
            let mut form = 0.0;
            for a in 0..v.len() {
                for b in 0..v.len() {
                    prop_assert!((info.entries[a][b] - info.entries[b][a]).abs() < 1e-12 * trace);
                    form += x[a] * info.entries[a][b] * x[b];
                }
            }
            prop_assert!(form >= -1e-10 * trace);
        }

        #[test]
        fn accept_probability_is_monotone(r0a in 0.01f64..0.99, r0b in 0.01f64..0.99, n in 5u32..200) {
            let r = rates(&[0.3, 0.7]);
            let p = SamplingPlan::equal(n, 0.2, 3).unwrap();
            let (lo, hi) = if r0a < r0b { (r0a, r0b) } else { (r0b, r0a) };
            prop_assert!(approx_accept_prob(&r, &p, 0.1, hi).unwrap() <= approx_accept_prob(&r, &p, 0.1, lo).unwrap());
        }
    }
}
