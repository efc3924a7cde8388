//! Gamma-mixture moments of interval-censoring likelihood kernels.
//!
//! For `ν ~ Gamma(α, rate η)` and a kernel
//! `K(ν) = exp(-ν A) · Π_g (1 - exp(-ν Δ_g))^{c_g}`
//! this module computes `ln E[ν^r K(ν)]` for `r = 0, 1, 2`.
//! The binomial expansion of the product gives an exact alternating sum;
//! when it cancels badly a trapezoid rule in `ln ν` is used instead.

use crate::error::{Error, Result};
use crate::numeric::{ln_binomial, ln_gamma, ln_one_minus_exp_neg, ln_rising, KahanSum};

/// Number of moments returned (`r = 0, 1, 2`).
pub const MOMENTS: usize = 3;

/// Above this ratio of absolute to signed sum the alternating path is abandoned.
pub const MAX_CONDITION: f64 = 1e5;

const MAX_TERMS: usize = 20_000;
const TAIL_DROP: f64 = 50.0;

/// The kernel `exp(-ν A) · Π (1 - exp(-ν Δ))^c`.
#[derive(Debug, Clone, Copy)]
pub struct Kernel<'a> {
    pub exposure: f64,
    pub factors: &'a [(f64, u32)],
}

/// Gamma prior on the total rate.
#[derive(Debug, Clone, Copy)]
pub struct GammaMixture {
    alpha: f64,
    eta: f64,
    ln_norm: f64,
}

impl GammaMixture {
    pub fn new(alpha: f64, eta: f64) -> Self {
        Self {
            alpha,
            eta,
            ln_norm: alpha * eta.ln() - ln_gamma(alpha),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `ln E[ν^r K(ν)]`, alternating sum first, quadrature on cancellation.
    pub fn ln_moments(&self, kernel: Kernel<'_>) -> [f64; MOMENTS] {
        match self.ln_moments_alternating(kernel) {
            Ok(v) => v,
            Err(_) => self.ln_moments_quadrature(kernel),
        }
    }

    /// Trapezoid nodes `(ν_i, w_i)` in `ln ν` such that `Σ w_i f(ν_i) ≈ E[f(ν)]`
    /// for smooth `f` of at most quartic growth.
    pub fn nodes(&self, step: f64) -> Vec<(f64, f64)> {
        let ld = |u: f64| self.alpha * u - self.eta * u.exp() + self.ln_norm;
        let mode = (self.alpha / self.eta).ln();
        let top = ld(mode);
        let top4 =
            ld(((self.alpha + 4.0) / self.eta).ln()) + 4.0 * ((self.alpha + 4.0) / self.eta).ln();
        let mut lo = mode;
        while ld(lo) > top - TAIL_DROP {
            lo -= step;
        }
        let mut out = Vec::new();
        let mut u = lo;
        loop {
            let l = ld(u);
            out.push((u.exp(), l.exp() * step));
            if u > mode && l + 4.0 * u < top4 - TAIL_DROP {
                break;
            }
            u += step;
        }
        out
    }

    /// `ln E[ν^r exp(-ν B)] = α ln η + ln(α)_r - (α + r) ln(η + B)`.
    #[inline]
    pub fn ln_laplace(&self, r: usize, b: f64) -> f64 {
        self.alpha * self.eta.ln() + ln_rising(self.alpha, r as u32)
            - (self.alpha + r as f64) * (self.eta + b).ln()
    }

    /// Exact binomial expansion; fails with [`Error::Unstable`] on heavy cancellation.
    pub fn ln_moments_alternating(&self, kernel: Kernel<'_>) -> Result<[f64; MOMENTS]> {
        let factors: Vec<(f64, u32)> = kernel.factors.iter().copied().filter(|f| f.1 > 0).collect();
        let terms = factors
            .iter()
            .try_fold(1usize, |acc, f| acc.checked_mul(f.1 as usize + 1))
            .unwrap_or(usize::MAX);
        if terms > MAX_TERMS {
            return Err(Error::Unstable {
                condition: f64::INFINITY,
            });
        }
        // Collect (sign, ln|coef|, shift) for every multi-index.
        let mut entries: Vec<(bool, f64, f64)> = Vec::with_capacity(terms);
        let mut idx = vec![0u32; factors.len()];
        loop {
            let mut ln_c = 0.0;
            let mut shift = kernel.exposure;
            let mut odd = false;
            for (i, &(delta, c)) in idx.iter().zip(&factors) {
                ln_c += ln_binomial(c, *i);
                shift += f64::from(*i) * delta;
                odd ^= i % 2 == 1;
            }
            entries.push((odd, ln_c, shift));
            let mut pos = 0;
            loop {
                if pos == idx.len() {
                    return self.reduce_entries(&entries);
                }
                if idx[pos] < factors[pos].1 {
                    idx[pos] += 1;
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
        }
    }

    fn reduce_entries(&self, entries: &[(bool, f64, f64)]) -> Result<[f64; MOMENTS]> {
        let mut out = [0.0; MOMENTS];
        for (r, slot) in out.iter_mut().enumerate() {
            let logs: Vec<f64> = entries
                .iter()
                .map(|e| e.1 + self.ln_laplace(r, e.2))
                .collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut signed = KahanSum::new();
            let mut abs = 0.0;
            for (e, l) in entries.iter().zip(&logs) {
                let v = (l - max).exp();
                abs += v;
                signed.add(if e.0 { -v } else { v });
            }
            let s = signed.value();
            if !(s > 0.0) || abs / s > MAX_CONDITION {
                return Err(Error::Unstable {
                    condition: if s > 0.0 { abs / s } else { f64::INFINITY },
                });
            }
            *slot = max + s.ln();
        }
        Ok(out)
    }

    /// `ln` of the integrand of moment 0 in `u = ln ν`, without the normaliser.
    #[inline]
    fn log_integrand(&self, kernel: &Kernel<'_>, u: f64) -> f64 {
        let nu = u.exp();
        let mut l = self.alpha * u - (self.eta + kernel.exposure) * nu;
        for &(delta, c) in kernel.factors {
            if c > 0 {
                l += f64::from(c) * ln_one_minus_exp_neg(delta * nu);
            }
        }
        l
    }

    /// First and second derivative in `u` of the moment-`r` log integrand.
    fn log_integrand_derivs(&self, kernel: &Kernel<'_>, r: usize, u: f64) -> (f64, f64) {
        let nu = u.exp();
        let lin = (self.eta + kernel.exposure) * nu;
        let mut d1 = self.alpha + r as f64 - lin;
        let mut d2 = -lin;
        for &(delta, c) in kernel.factors {
            if c == 0 {
                continue;
            }
            let x = delta * nu;
            let c = f64::from(c);
            if x < 1e-8 {
                d1 += c * (1.0 - 0.5 * x);
                d2 += c * (-0.5 * x);
            } else if x > 700.0 {
                // x/(e^x - 1) underflows to zero with its derivative.
            } else {
                let em = x.exp_m1();
                d1 += c * x / em;
                d2 += c * x * (em - x * (em + 1.0)) / (em * em);
            }
        }
        (d1, d2)
    }

    fn mode(&self, kernel: &Kernel<'_>, r: usize) -> f64 {
        let c_sum: f64 = kernel.factors.iter().map(|f| f64::from(f.1)).sum();
        let scale = self.eta + kernel.exposure;
        let mut lo = ((self.alpha + r as f64) / scale).ln() - 1e-9;
        let mut hi = ((self.alpha + r as f64 + c_sum) / scale).ln() + 1e-9;
        let mut u = 0.5 * (lo + hi);
        for _ in 0..200 {
            let (d1, d2) = self.log_integrand_derivs(kernel, r, u);
            if d1 > 0.0 {
                lo = u;
            } else {
                hi = u;
            }
            let newton = u - d1 / d2;
            u = if d2 < 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-13 || d1.abs() < 1e-13 * (self.alpha + c_sum + r as f64) {
                break;
            }
        }
        u
    }

    /// Trapezoid rule in `ln ν`, accurate to near machine precision for these
    /// log-concave integrands.
    pub fn ln_moments_quadrature(&self, kernel: Kernel<'_>) -> [f64; MOMENTS] {
        let m0 = self.mode(&kernel, 0);
        let m2 = self.mode(&kernel, MOMENTS - 1);
        let curv = |u: f64| -self.log_integrand_derivs(&kernel, 0, u).1;
        let sigma = 1.0 / curv(m0).max(curv(m2)).sqrt();
        let step = (sigma / 3.0).min(0.2);

        let top0 = self.log_integrand(&kernel, m0);
        let top2 = self.log_integrand(&kernel, m2) + 2.0 * m2;
        let mut nodes: Vec<(f64, f64)> = Vec::with_capacity(128);
        let mut i = 0i64;
        loop {
            let u = m0 + i as f64 * step;
            let l = self.log_integrand(&kernel, u);
            nodes.push((u, l));
            if l < top0 - TAIL_DROP {
                break;
            }
            i -= 1;
        }
        let mut i = 1i64;
        loop {
            let u = m0 + i as f64 * step;
            let l = self.log_integrand(&kernel, u);
            nodes.push((u, l));
            if u > m2 && l + 2.0 * u < top2 - TAIL_DROP {
                break;
            }
            i += 1;
        }
        let mut out = [0.0; MOMENTS];
        for (r, slot) in out.iter_mut().enumerate() {
            let rf = r as f64;
            let max = nodes
                .iter()
                .map(|(u, l)| l + rf * u)
                .fold(f64::NEG_INFINITY, f64::max);
            let s: KahanSum = nodes
                .iter()
                .map(|(u, l)| (l + rf * u - max).exp())
                .collect();
            *slot = self.ln_norm + max + (s.value() * step).ln();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma};

    fn direct(g: &GammaMixture, k: Kernel<'_>, r: i32, nu: f64) -> f64 {
        let mut v = (-nu * k.exposure).exp() * nu.powi(r);
        for &(d, c) in k.factors {
            v *= (-(-nu * d).exp_m1()).powi(c as i32);
        }
        let _ = g;
        v
    }

    #[test]
    fn empty_kernel_gives_gamma_moments() {
        let g = GammaMixture::new(2.8, 1.3);
        let m = g.ln_moments(Kernel {
            exposure: 0.0,
            factors: &[],
        });
        assert!(m[0].abs() < 1e-14);
        assert!((m[1].exp() - 2.8 / 1.3).abs() < 1e-13);
        assert!((m[2].exp() - 2.8 * 3.8 / 1.69).abs() < 1e-12);
        let q = g.ln_moments_quadrature(Kernel {
            exposure: 0.0,
            factors: &[],
        });
        for r in 0..3 {
            assert!((q[r] - m[r]).abs() < 1e-12, "r={r} {} {}", q[r], m[r]);
        }
    }

    #[test]
    fn matches_monte_carlo() {
        let g = GammaMixture::new(2.8, 1.0);
        let factors = [(0.3, 2u32), (0.5, 1u32)];
        let k = Kernel {
            exposure: 1.1,
            factors: &factors,
        };
        let exact = g.ln_moments(k);
        let dist = Gamma::new(2.8, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 400_000;
        let mut acc = [0.0f64; 3];
        let mut acc2 = [0.0f64; 3];
        for _ in 0..n {
            let nu: f64 = dist.sample(&mut rng);
            for r in 0..3 {
                let v = direct(&g, k, r as i32, nu);
                acc[r] += v;
                acc2[r] += v * v;
            }
        }
        for r in 0..3 {
            let mean = acc[r] / n as f64;
            let se = ((acc2[r] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!((mean - exact[r].exp()).abs() < 4.0 * se, "r={r}");
        }
    }

    #[test]
    fn cancellation_is_detected() {
        let g = GammaMixture::new(2.8, 1.0);
        let factors = [(0.001, 30u32)];
        let k = Kernel {
            exposure: 0.0,
            factors: &factors,
        };
        assert!(matches!(
            g.ln_moments_alternating(k),
            Err(Error::Unstable { .. })
        ));
        let v = g.ln_moments(k);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    proptest! {
        #[test]
        fn quadrature_agrees_with_stable_expansion(
            alpha in 0.5f64..6.0,
            eta in 0.2f64..4.0,
            exposure in 0.0f64..5.0,
            d1 in 0.05f64..1.5,
            c1 in 0u32..6,
            d2 in 0.05f64..1.5,
            c2 in 0u32..4,
        ) {
            let g = GammaMixture::new(alpha, eta);
            let factors = [(d1, c1), (d2, c2)];
            let k = Kernel { exposure, factors: &factors };
            if let Ok(a) = g.ln_moments_alternating(k) {
                let q = g.ln_moments_quadrature(k);
                for r in 0..3 {
                    prop_assert!((a[r] - q[r]).abs() < 1e-9, "r={} alt={} quad={}", r, a[r], q[r]);
                }
            }
        }
    }
}
