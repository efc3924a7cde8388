//! Small numerical helpers shared across modules.

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma as statrs_ln_gamma;

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    statrs_ln_gamma(x)
}

#[inline]
pub fn ln_factorial(n: u32) -> f64 {
    statrs_ln_gamma(f64::from(n) + 1.0)
}

/// `ln C(n, k)`; `-inf` when `k > n`.
pub fn ln_binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// `ln Γ(a + r) - ln Γ(a)`, exact for small integer `r`.
pub fn ln_rising(a: f64, r: u32) -> f64 {
    if r <= 8 {
        (0..r).map(|i| (a + f64::from(i)).ln()).sum()
    } else {
        ln_gamma(a + f64::from(r)) - ln_gamma(a)
    }
}

/// Standard normal distribution function.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// `ln(1 - exp(-x))` for `x > 0`, accurate at both ends.
#[inline]
pub fn ln_one_minus_exp_neg(x: f64) -> f64 {
    if x < std::f64::consts::LN_2 {
        (-(-x).exp_m1()).ln()
    } else {
        (-(-x).exp()).ln_1p()
    }
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().collect::<KahanSum>().value()
}

/// `ln Σ exp(x_i)`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s = compensated_sum(values.iter().map(|v| (v - max).exp()));
    max + s.ln()
}

/// Calls `f` on every vector of `parts` non-negative integers summing to `total`,
/// in lexicographic order.
pub fn for_each_composition<F: FnMut(&[u32])>(total: u32, parts: usize, mut f: F) {
    if parts == 0 {
        if total == 0 {
            f(&[]);
        }
        return;
    }
    let mut buf = vec![0u32; parts];
    fn rec<F: FnMut(&[u32])>(buf: &mut [u32], pos: usize, remaining: u32, f: &mut F) {
        if pos + 1 == buf.len() {
            buf[pos] = remaining;
            f(buf);
            return;
        }
        for v in (0..=remaining).rev() {
            buf[pos] = v;
            rec(buf, pos + 1, remaining - v, f);
        }
    }
    rec(&mut buf, 0, total, &mut f);
}

/// Number of compositions of `total` into `parts` non-negative integers, `C(total+parts-1, parts-1)`.
pub fn composition_count(total: u32, parts: usize) -> f64 {
    if parts == 0 {
        return if total == 0 { 1.0 } else { 0.0 };
    }
    ln_binomial(total + parts as u32 - 1, parts as u32 - 1)
        .exp()
        .round()
}
