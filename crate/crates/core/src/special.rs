//! Scalar special functions and the Beta/Gamma summaries used by the
//! stick-breaking and concentration posteriors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest argument accepted by [`digamma`] and [`log_gamma`].
pub const MIN_ARG: f64 = 1e-12;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const LN_2PI: f64 = 1.837_877_066_409_345_5;
const SHIFT_TO: f64 = 12.0;

// zeta(k) for k = 2..=31, indexed by k - 2.
const ZETA: [f64; 30] = [
    1.644_934_066_848_226_4,
    1.202_056_903_159_594_3,
    1.082_323_233_711_138_2,
    1.036_927_755_143_369_9,
    1.017_343_061_984_449_1,
    1.008_349_277_381_922_8,
    1.004_077_356_197_944_3,
    1.002_008_392_826_082_2,
    1.000_994_575_127_818_1,
    1.000_494_188_604_119_5,
    1.000_246_086_553_308,
    1.000_122_713_347_578_5,
    1.000_061_248_135_058_7,
    1.000_030_588_236_307,
    1.000_015_282_259_408_7,
    1.000_007_637_197_637_9,
    1.000_003_817_293_264_9,
    1.000_001_908_212_716_6,
    1.000_000_953_962_033_9,
    1.000_000_476_932_986_8,
    1.000_000_238_450_502_7,
    1.000_000_119_219_925_9,
    1.000_000_059_608_189,
    1.000_000_029_803_503_5,
    1.000_000_014_901_554_8,
    1.000_000_007_450_711_8,
    1.000_000_003_725_334,
    1.000_000_001_862_659_7,
    1.000_000_000_931_327_4,
    1.000_000_000_465_662_9,
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("{function}: argument {value} outside the supported domain")]
    Domain { function: &'static str, value: f64 },
    #[error("invalid {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

fn check_arg(function: &'static str, x: f64) -> Result<(), MathError> {
    if x.is_finite() && x >= MIN_ARG {
        Ok(())
    } else {
        Err(MathError::Domain { function, value: x })
    }
}

/// The digamma function ψ(x) = d/dx ln Γ(x) for x ≥ [`MIN_ARG`].
pub fn digamma(x: f64) -> Result<f64, MathError> {
    check_arg("digamma", x)?;
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < SHIFT_TO {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    let series = r2
        * (1.0 / 12.0
            - r2 * (1.0 / 120.0
                - r2 * (1.0 / 252.0
                    - r2 * (1.0 / 240.0
                        - r2 * (1.0 / 132.0 - r2 * (691.0 / 32760.0 - r2 / 12.0))))));
    acc + x.ln() - 0.5 * r - series
}

/// ln Γ(x) for x ≥ [`MIN_ARG`].
pub fn log_gamma(x: f64) -> Result<f64, MathError> {
    check_arg("log_gamma", x)?;
    Ok(log_gamma_unchecked(x))
}

pub(crate) fn log_gamma_unchecked(x: f64) -> f64 {
    // Taylor expansions around the two zeros keep relative accuracy there.
    if (x - 1.0).abs() <= 0.2 {
        return log_gamma_near_one(x - 1.0);
    }
    if (x - 2.0).abs() <= 0.2 {
        let eps = x - 2.0;
        return eps.ln_1p() + log_gamma_near_one(eps);
    }
    let mut z = x;
    let mut prod = 1.0;
    while z < SHIFT_TO {
        prod *= z;
        z += 1.0;
    }
    let r = 1.0 / z;
    let r2 = r * r;
    let series = r
        * (1.0 / 12.0
            - r2 * (1.0 / 360.0
                - r2 * (1.0 / 1260.0
                    - r2 * (1.0 / 1680.0
                        - r2 * (1.0 / 1188.0 - r2 * (691.0 / 360_360.0 - r2 / 156.0))))));
    let stirling = (z - 0.5) * z.ln() - z + 0.5 * LN_2PI + series;
    stirling - prod.ln()
}

// ln Γ(1 + eps) = -γ eps + Σ_{k≥2} (-1)^k ζ(k) eps^k / k, |eps| ≤ 0.2
fn log_gamma_near_one(eps: f64) -> f64 {
    let mut sum = 0.0;
    let mut pow = eps;
    for (i, zeta) in ZETA.iter().enumerate() {
        pow *= eps;
        let k = (i + 2) as f64;
        let term = zeta * pow / k;
        if i % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    sum - EULER_GAMMA * eps
}

/// ln B(a, b).
pub fn log_beta(a: f64, b: f64) -> Result<f64, MathError> {
    Ok(log_gamma(a)? + log_gamma(b)? - log_gamma(a + b)?)
}

/// ln Γ_D(a), the multivariate log-gamma function.
pub fn log_multigamma(a: f64, dim: usize) -> Result<f64, MathError> {
    let d = dim as f64;
    let mut acc = 0.25 * d * (d - 1.0) * PI.ln();
    for i in 0..dim {
        acc += log_gamma(a - 0.5 * i as f64)?;
    }
    Ok(acc)
}

/// Σ_{i=1}^{D} ψ((ν + 1 - i) / 2).
pub fn multi_digamma_sum(dof: f64, dim: usize) -> Result<f64, MathError> {
    (1..=dim).try_fold(0.0, |acc, i| Ok(acc + digamma(0.5 * (dof + 1.0 - i as f64))?))
}

/// Numerically stable ln Σ exp(v).
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Shape parameters of a Beta distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    /// Both shapes must be finite and at least [`MIN_ARG`].
    pub fn new(a: f64, b: f64) -> Result<Self, MathError> {
        if !(a.is_finite() && a >= MIN_ARG) {
            return Err(MathError::InvalidParameter { name: "beta shape a", value: a });
        }
        if !(b.is_finite() && b >= MIN_ARG) {
            return Err(MathError::InvalidParameter { name: "beta shape b", value: b });
        }
        Ok(Self { a, b })
    }

    /// Differential entropy.
    pub fn entropy(&self) -> f64 {
        let (a, b) = (self.a, self.b);
        log_gamma_unchecked(a) + log_gamma_unchecked(b) - log_gamma_unchecked(a + b)
            - (a - 1.0) * digamma_unchecked(a)
            - (b - 1.0) * digamma_unchecked(b)
            + (a + b - 2.0) * digamma_unchecked(a + b)
    }
}

/// Mean and variance of a Beta distribution.
pub fn beta_mean_var(p: &BetaParams) -> (f64, f64) {
    let s = p.a + p.b;
    (p.a / s, p.a * p.b / (s * s * (s + 1.0)))
}

/// `(E[ln v], E[ln(1 - v)])` for `v ~ Beta(a, b)`.
pub fn expected_log_stick(p: &BetaParams) -> (f64, f64) {
    let total = p.a + p.b;
    (digamma_diff(p.a, p.b, total), digamma_diff(p.b, p.a, total))
}

// ψ(x) - ψ(x + n) with `total = x + n`; a finite sum when n is a small integer.
fn digamma_diff(x: f64, n: f64, total: f64) -> f64 {
    if n.fract() == 0.0 && (1.0..=64.0).contains(&n) && x + n == total {
        -(0..n as usize).map(|j| 1.0 / (x + j as f64)).sum::<f64>()
    } else {
        digamma_unchecked(x) - digamma_unchecked(total)
    }
}

/// Shape/rate parameters of a Gamma distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self, MathError> {
        if !(shape.is_finite() && shape >= MIN_ARG) {
            return Err(MathError::InvalidParameter { name: "gamma shape", value: shape });
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(MathError::InvalidParameter { name: "gamma rate", value: rate });
        }
        Ok(Self { shape, rate })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    /// E[ln x].
    pub fn expected_log(&self) -> f64 {
        digamma_unchecked(self.shape) - self.rate.ln()
    }

    pub fn entropy(&self) -> f64 {
        self.shape - self.rate.ln()
            + log_gamma_unchecked(self.shape)
            + (1.0 - self.shape) * digamma_unchecked(self.shape)
    }

    /// E_q[ln p(x)] where q = `self` and p = `prior`.
    pub fn cross_log_density(&self, prior: &GammaParams) -> f64 {
        prior.shape * prior.rate.ln() - log_gamma_unchecked(prior.shape)
            + (prior.shape - 1.0) * self.expected_log()
            - prior.rate * self.mean()
    }

    /// KL(self || prior).
    pub fn kl_divergence(&self, prior: &GammaParams) -> f64 {
        -self.entropy() - self.cross_log_density(prior)
    }
}
