//! Chi-squared and Fisher quantiles, plus reproducible Gaussian noise.
//!
//! Quantiles invert the regularized incomplete gamma / beta functions with a
//! bracketing Newton iteration. The noise generator is ChaCha20
//! (`rand_chacha::ChaCha20Rng`, seeded through `SeedableRng::seed_from_u64`)
//! with one ChaCha stream id per substream, and standard normals come from the
//! ziggurat sampler `rand_distr::StandardNormal`. Both are portable, so a seed
//! reproduces the same draws on every platform.

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::prelude::*;
use crate::{Error, Result};

/// Absolute tolerance of the quantile inversions.
pub const QUANTILE_TOL: f64 = 1e-10;

/// Confidence level of a 2-sigma region.
pub const TWO_SIGMA_ALPHA: f64 = 0.9545;

/// A quantile query: confidence level and degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileRequest {
    pub alpha: f64,
    pub dof1: u32,
    /// Denominator degrees of freedom; ignored for chi-squared.
    pub dof2: u32,
}

impl QuantileRequest {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.dof1 == 0 || self.dof2 == 0 {
            return Err(Error::InvalidArgument("degrees of freedom must be >= 1".to_string()));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} outside [0, 1)")));
    }
    if alpha >= 1.0 {
        return Err(Error::Domain(format!("alpha = {alpha}: quantile is unbounded")));
    }
    Ok(())
}

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Gamma(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the approximation in its accurate range.
        let pi = core::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    let t = x + 7.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * core::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // Series representation.
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut denom = a;
        for _ in 0..10_000 {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() + log_prefactor).exp().min(1.0)
    } else {
        // Continued fraction for Q(a, x), modified Lentz.
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = (log_prefactor + h.ln()).exp();
        (1.0 - q).max(0.0)
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..100_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn beta_inc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() * beta_continued_fraction(a, b, x) / a).clamp(0.0, 1.0)
    } else {
        (1.0 - ln_front.exp() * beta_continued_fraction(b, a, 1.0 - x) / b).clamp(0.0, 1.0)
    }
}

pub fn chi2_cdf(x: f64, dof: u32) -> f64 {
    gamma_p(0.5 * dof as f64, 0.5 * x)
}

fn chi2_pdf(x: f64, dof: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = 0.5 * dof as f64;
    ((k - 1.0) * x.ln() - 0.5 * x - k * 2f64.ln() - ln_gamma(k)).exp()
}

pub fn f_cdf(x: f64, dof1: u32, dof2: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let (d1, d2) = (dof1 as f64, dof2 as f64);
    beta_inc(0.5 * d1, 0.5 * d2, d1 * x / (d1 * x + d2))
}

fn f_pdf(x: f64, dof1: u32, dof2: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let (d1, d2) = (dof1 as f64, dof2 as f64);
    let ln_beta = ln_gamma(0.5 * d1) + ln_gamma(0.5 * d2) - ln_gamma(0.5 * (d1 + d2));
    (0.5 * d1 * (d1 * x).ln() + 0.5 * d2 * d2.ln() - 0.5 * (d1 + d2) * (d1 * x + d2).ln() - x.ln() - ln_beta).exp()
}

/// Inverts a continuous CDF on `[0, inf)`: geometric bracketing, then Newton
/// steps kept inside the bracket (bisection when Newton leaves it).
fn invert_cdf(alpha: f64, cdf: impl Fn(f64) -> f64, pdf: impl Fn(f64) -> f64) -> f64 {
    if alpha == 0.0 {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while cdf(hi) < alpha {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = cdf(x) - alpha;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let density = pdf(x);
        let mut next = if density > 0.0 { x - f / density } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step < 0.25 * QUANTILE_TOL || hi - lo < QUANTILE_TOL {
            break;
        }
    }
    x
}

/// `x` with `P(chi2_dof <= x) = alpha`.
pub fn chi2_quantile(alpha: f64, dof: u32) -> Result<f64> {
    QuantileRequest {
        alpha,
        dof1: dof,
        dof2: 1,
    }
    .validate()?;
    Ok(invert_cdf(alpha, |x| chi2_cdf(x, dof), |x| chi2_pdf(x, dof)))
}

/// `x` with `P(F_{dof1, dof2} <= x) = alpha`.
pub fn f_quantile(alpha: f64, dof1: u32, dof2: u32) -> Result<f64> {
    QuantileRequest { alpha, dof1, dof2 }.validate()?;
    Ok(invert_cdf(alpha, |x| f_cdf(x, dof1, dof2), |x| f_pdf(x, dof1, dof2)))
}

/// A seeded stream of zero-mean Gaussian draws with per-output standard
/// deviations. Draw `i` uses `sigma[i % sigma.len()]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseStream {
    pub seed: u64,
    pub sigma: Vec<f64>,
    stream: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, sigma: Vec<f64>) -> Result<Self> {
        if sigma.is_empty() {
            return Err(Error::InvalidArgument("sigma must not be empty".to_string()));
        }
        if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidArgument("sigma must be finite and >= 0".to_string()));
        }
        Ok(Self { seed, sigma, stream: 0 })
    }

    /// Independent substream for `(seed, index)`, e.g. one per Monte Carlo trial.
    pub fn substream(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            sigma: self.sigma.clone(),
            stream: index,
        }
    }

    pub fn stream_index(&self) -> u64 {
        self.stream
    }

    fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// `count` draws from the stream, restarted from its beginning.
pub fn gaussian_draws(stream: &NoiseStream, count: usize) -> Vec<f64> {
    let mut rng = stream.rng();
    let n = stream.sigma.len();
    (0..count)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            stream.sigma[i % n] * z
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi2_closed_forms() {
        assert_eq!(chi2_quantile(0.0, 3).unwrap(), 0.0);
        let q = chi2_quantile(0.9545, 2).unwrap();
        assert!((q - (-2.0 * (1.0f64 - 0.9545).ln())).abs() < 1e-9);
        assert!((q - 6.18008).abs() < 1e-5);
        assert!((chi2_quantile(0.95, 1).unwrap() - 3.841_458_820_694_124).abs() < 1e-8);
    }

    #[test]
    fn f_closed_forms() {
        assert_eq!(f_quantile(0.0, 2, 5).unwrap(), 0.0);
        assert!((f_quantile(0.95, 2, 2).unwrap() - 19.0).abs() < 1e-8);
        assert!((f_quantile(0.9545, 2, 2).unwrap() - 0.9545 / 0.0455).abs() < 1e-8);
    }

    #[test]
    fn alpha_one_is_unbounded() {
        assert!(matches!(chi2_quantile(1.0, 2), Err(Error::Domain(_))));
        assert!(matches!(f_quantile(1.0, 2, 3), Err(Error::Domain(_))));
        assert!(chi2_quantile(-0.1, 2).is_err());
        assert!(chi2_quantile(0.5, 0).is_err());
    }

    #[test]
    fn ln_gamma_integers() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - core::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn draws_are_seed_reproducible() {
        let s = NoiseStream::new(42, vec![0.1]).unwrap();
        assert_eq!(gaussian_draws(&s, 64), gaussian_draws(&s, 64));
        assert_ne!(gaussian_draws(&s, 8), gaussian_draws(&s.substream(1), 8));
        let zero = NoiseStream::new(7, vec![0.0]).unwrap();
        assert!(gaussian_draws(&zero, 100).iter().all(|x| *x == 0.0));
    }
}
