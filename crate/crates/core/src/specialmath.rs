//! Scalar kernels shared by the E-step updates: truncated-normal moments,
//! log interval probabilities, digamma and Beta log-moments.
//!
//! All truncated-normal quantities go through [`StdTruncMoments`], which
//! works on the standardized interval. Intervals lying entirely in one tail
//! are rescaled by the density at the inner bound and evaluated through the
//! Mills ratio, so nothing divides two underflowed probabilities.

use crate::error::{Error, Result};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Half-open interval `[lo, hi)` on the extended real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncInterval {
    lo: f64,
    hi: f64,
}

impl TruncInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::Domain(format!("empty truncation interval [{lo}, {hi})")));
        }
        Ok(Self { lo, hi })
    }

    pub fn unbounded() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x < self.hi
    }
}

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Mills ratio `R(x) = Q(x) / φ(x)` for `x >= 0`, with `Q` the upper tail.
pub fn mills_ratio(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x.is_infinite() {
        return 0.0;
    }
    if x < 5.0 {
        return 0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2) / normal_pdf(x);
    }
    // Laplace continued fraction 1/(x + 1/(x + 2/(x + 3/(x + ...)))).
    let mut t = x;
    for k in (1..=120).rev() {
        t = x + k as f64 / t;
    }
    1.0 / t
}

/// Moments of a standard normal truncated to `[a, b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StdTruncMoments {
    /// `log(Φ(b) − Φ(a))`.
    pub log_mass: f64,
    /// `E[z]`.
    pub mean: f64,
    /// `E[z²]`.
    pub second: f64,
}

impl StdTruncMoments {
    pub fn new(a: f64, b: f64) -> Self {
        debug_assert!(a < b);
        if a >= 0.0 {
            upper_tail(a, b)
        } else if b <= 0.0 {
            let m = upper_tail(-b, -a);
            Self {
                log_mass: m.log_mass,
                mean: -m.mean,
                second: m.second,
            }
        } else {
            straddling(a, b)
        }
    }

    /// Entropy of the truncated standard normal.
    pub fn entropy(&self) -> f64 {
        LN_SQRT_2PI + 0.5 * self.second + self.log_mass
    }
}

fn upper_tail(a: f64, b: f64) -> StdTruncMoments {
    // Everything is divided through by φ(a).
    let (ratio, b_ratio) = if b.is_infinite() {
        (0.0, 0.0)
    } else {
        let e = (-0.5 * (b - a) * (b + a)).exp();
        (e, b * e)
    };
    let tail_gap = if b.is_infinite() {
        1.0
    } else {
        -(-0.5 * (b - a) * (b + a)).exp_m1()
    };
    let ma = mills_ratio(a);
    let mb = if b.is_infinite() { 0.0 } else { mills_ratio(b) };
    let mut denom = ma - ratio * mb;
    if !(denom > 0.0) {
        // Width below rounding of the Mills ratios; midpoint rule on the density.
        denom = (b - a) * (-0.125 * (b - a) * (3.0 * a + b)).exp();
    }
    let log_mass = -0.5 * a * a - LN_SQRT_2PI + denom.ln();
    let mean = (tail_gap / denom).clamp(a, if b.is_finite() { b } else { f64::MAX });
    let second = 1.0 + (a - b_ratio) / denom;
    StdTruncMoments {
        log_mass,
        mean,
        second: second.max(mean * mean),
    }
}

fn straddling(a: f64, b: f64) -> StdTruncMoments {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mass = 0.5 * (libm::erf(b * s) - libm::erf(a * s));
    let (pa, apa) = if a.is_infinite() {
        (0.0, 0.0)
    } else {
        let p = normal_pdf(a);
        (p, a * p)
    };
    let (pb, bpb) = if b.is_infinite() {
        (0.0, 0.0)
    } else {
        let p = normal_pdf(b);
        (p, b * p)
    };
    let mean = (pa - pb) / mass;
    let second = 1.0 + (apa - bpb) / mass;
    StdTruncMoments {
        log_mass: mass.ln(),
        mean,
        second: second.max(mean * mean),
    }
}

/// Standardized moments for `N(mu, sigma²)` restricted to `iv`.
pub fn standardized(mu: f64, sigma: f64, iv: TruncInterval) -> StdTruncMoments {
    StdTruncMoments::new((iv.lo - mu) / sigma, (iv.hi - mu) / sigma)
}

/// Mean of `N(mu, sigma²)` truncated to `iv`; always strictly inside the
/// interval.
pub fn trunc_norm_mean(mu: f64, sigma: f64, iv: TruncInterval) -> f64 {
    debug_assert!(sigma > 0.0);
    let m = standardized(mu, sigma, iv);
    let v = mu + sigma * m.mean;
    if v <= iv.lo {
        iv.lo.next_up()
    } else if v >= iv.hi {
        iv.hi.next_down()
    } else {
        v
    }
}

/// Raw second moment `E[ξ²]` of `N(mu, sigma²)` truncated to `iv`.
pub fn trunc_norm_second_moment(mu: f64, sigma: f64, iv: TruncInterval) -> f64 {
    debug_assert!(sigma > 0.0);
    let m = standardized(mu, sigma, iv);
    let mean = trunc_norm_mean(mu, sigma, iv);
    let raw = mu * mu + 2.0 * mu * sigma * m.mean + sigma * sigma * m.second;
    raw.max(mean * mean)
}

/// `log(Φ((hi−mu)/sigma) − Φ((lo−mu)/sigma))`.
pub fn log_interval_prob(mu: f64, sigma: f64, iv: TruncInterval) -> f64 {
    standardized(mu, sigma, iv).log_mass
}

/// Digamma function on the positive half-line.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("digamma requires a finite positive argument, got {x}")));
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli-number asymptotic tail through x^-14.
    let tail = inv2
        * (-1.0 / 12.0
            + inv2
                * (1.0 / 120.0
                    + inv2
                        * (-1.0 / 252.0
                            + inv2
                                * (1.0 / 240.0
                                    + inv2 * (-1.0 / 132.0 + inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    Ok(acc + x.ln() - 0.5 * inv + tail)
}

/// `(⟨log π⟩, ⟨log(1−π)⟩)` for `π ~ Beta(a, b)`.
pub fn beta_log_moments(a: f64, b: f64) -> Result<(f64, f64)> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Domain(format!("Beta parameters must be positive, got ({a}, {b})")));
    }
    let total = digamma(a + b)?;
    Ok((digamma(a)? - total, digamma(b)? - total))
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Overflow-safe logistic function.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lo: f64, hi: f64) -> TruncInterval {
        TruncInterval::new(lo, hi).unwrap()
    }

    #[test]
    fn untruncated_moments() {
        let u = TruncInterval::unbounded();
        assert!(trunc_norm_mean(0.0, 1.0, u).abs() < 1e-15);
        assert!((trunc_norm_second_moment(0.0, 1.0, u) - 1.0).abs() < 1e-14);
        assert!(log_interval_prob(0.0, 1.0, u).abs() < 1e-15);
    }

    #[test]
    fn half_normal() {
        // sqrt(2/pi), from adaptive quadrature of the half-normal density.
        let m = trunc_norm_mean(0.0, 1.0, iv(0.0, f64::INFINITY));
        assert!((m - 0.797_884_560_802_865_4).abs() < 1e-10);
        let s = trunc_norm_second_moment(0.0, 1.0, iv(0.0, f64::INFINITY));
        assert!((s - 1.0).abs() < 1e-12);
        let lp = log_interval_prob(0.0, 1.0, iv(f64::NEG_INFINITY, 0.0));
        assert!((lp - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn symmetric_interval_keeps_mean() {
        assert!((trunc_norm_mean(2.0, 1.0, iv(1.0, 3.0)) - 2.0).abs() < 1e-14);
        let s = trunc_norm_second_moment(2.0, 1.0, iv(1.0, 3.0));
        // 4 + variance of N(0,1) on [-1,1] = 4 + 1 - 2φ(1)/(2Φ(1)-1).
        assert!((s - 4.291_125_094_772_793).abs() < 1e-12, "{s}");
    }

    #[test]
    fn upper_cutpoint_region() {
        // φ(1)/(1−Φ(1)) by quadrature.
        let m = trunc_norm_mean(0.0, 1.0, iv(1.0, f64::INFINITY));
        assert!((m - 1.525_135_276_160_981).abs() < 1e-12, "{m}");
        let r = trunc_norm_mean(0.0, 1.0, iv(f64::NEG_INFINITY, -1.0));
        assert!((r + m).abs() < 1e-15);
    }

    #[test]
    fn far_tail_stays_finite() {
        let lp = log_interval_prob(0.0, 1.0, iv(8.0, 9.0));
        // log(Φ(9) − Φ(8)), extended-precision erfc.
        assert!(((lp - -35.013_618_593_437_15) / lp).abs() < 1e-8, "{lp}");
        for a in [6.5, 12.0, 30.0, 37.0, 200.0] {
            let m = trunc_norm_mean(0.0, 1.0, iv(a, f64::INFINITY));
            assert!(m.is_finite() && m > a);
            let m = trunc_norm_mean(0.0, 1.0, iv(f64::NEG_INFINITY, -a));
            assert!(m.is_finite() && m < -a);
            let s = trunc_norm_second_moment(3.0, 0.5, iv(3.0 + 0.5 * a, 3.0 + 0.5 * a + 0.1));
            assert!(s.is_finite());
        }
    }

    #[test]
    fn narrow_interval_is_inside() {
        let i = iv(10.0, 10.0 + 1e-13);
        let m = trunc_norm_mean(0.0, 1.0, i);
        assert!(i.lo() < m && m < i.hi());
    }

    #[test]
    fn mills_ratio_branches_agree() {
        let direct = 0.5 * libm::erfc(5.0 * std::f64::consts::FRAC_1_SQRT_2) / normal_pdf(5.0);
        assert!((mills_ratio(5.0) - direct).abs() / direct < 1e-13);
        // R(10) from mpmath at 50 digits.
        assert!((mills_ratio(10.0) - 0.099_028_596_471_731_92).abs() < 1e-16);
    }

    #[test]
    fn digamma_values() {
        assert!((digamma(1.0).unwrap() + 0.577_215_664_901_532_9).abs() < 1e-13);
        assert!((digamma(2.0).unwrap() - 0.422_784_335_098_467_1).abs() < 1e-13);
        for x in [0.5, 1.0, 3.0, 1e-3, 17.5] {
            let d = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert!((d - 1.0 / x).abs() < 1e-12 * (1.0 / x).max(1.0), "{x}");
        }
        assert!(digamma(0.0).is_err());
        assert!(digamma(-2.0).is_err());
    }

    #[test]
    fn beta_log_moment_cases() {
        let (a, b) = beta_log_moments(1.0, 1.0).unwrap();
        assert!((a + 1.0).abs() < 1e-13 && (b + 1.0).abs() < 1e-13);
        let (a, b) = beta_log_moments(2.0, 1.0).unwrap();
        assert!((a + 0.5).abs() < 1e-13 && (b + 1.5).abs() < 1e-13);
        let (c, d) = beta_log_moments(1.0, 2.0).unwrap();
        assert_eq!((a, b), (d, c));
        assert!(beta_log_moments(0.0, 1.0).is_err());
    }

    #[test]
    fn logistic_saturates_cleanly() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(-800.0) >= 0.0);
        assert!(logistic(800.0) <= 1.0);
        assert!((logistic(3.0) + logistic(-3.0) - 1.0).abs() < 1e-15);
    }
}
