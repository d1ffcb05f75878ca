//! Gaussian clusters with conjugate Normal–Wishart priors.
//!
//! The Wishart part is parameterized by its inverse scale matrix (`scatter`),
//! so `E[Λ] = ν · scatter⁻¹`. The diagonal variant treats every feature
//! dimension as an independent one-dimensional Normal–Wishart (Normal–Gamma).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{digamma_unchecked, log_multigamma, multi_digamma_sum, MathError};

const LN_2: f64 = std::f64::consts::LN_2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Default prior scale κ₀.
pub const DEFAULT_PRIOR_SCALE: f64 = 1e-2;
const MIN_PRIOR_VARIANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LikelihoodError {
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("expected {expected} responsibilities, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("scatter matrix is not positive definite{}", cluster_suffix(*.cluster))]
    NotPositiveDefinite { cluster: Option<usize> },
    #[error("invalid {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("empty dataset")]
    Empty,
    #[error(transparent)]
    Math(#[from] MathError),
}

fn cluster_suffix(cluster: Option<usize>) -> String {
    cluster.map(|c| format!(" (cluster {c})")).unwrap_or_default()
}

impl LikelihoodError {
    pub fn for_cluster(self, index: usize) -> Self {
        match self {
            LikelihoodError::NotPositiveDefinite { .. } => {
                LikelihoodError::NotPositiveDefinite { cluster: Some(index) }
            }
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CovarianceKind {
    #[default]
    Full,
    Diagonal,
}

/// Normal–Wishart parameters (m, κ, ν, W⁻¹).
#[derive(Debug, Clone, PartialEq)]
pub struct NWParams {
    pub mean: DVector<f64>,
    pub scale: f64,
    pub dof: f64,
    pub scatter: DMatrix<f64>,
    pub kind: CovarianceKind,
}

impl NWParams {
    pub fn new(
        mean: DVector<f64>,
        scale: f64,
        dof: f64,
        scatter: DMatrix<f64>,
        kind: CovarianceKind,
    ) -> Result<Self, LikelihoodError> {
        let params = Self { mean, scale, dof, scatter, kind };
        params.validate()?;
        Ok(params)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<(), LikelihoodError> {
        let dim = self.dim();
        if dim == 0 {
            return Err(LikelihoodError::Empty);
        }
        if self.scatter.nrows() != dim || self.scatter.ncols() != dim {
            return Err(LikelihoodError::DimensionMismatch { expected: dim, got: self.scatter.nrows() });
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(LikelihoodError::InvalidParameter { name: "scale", value: self.scale });
        }
        let min_dof = match self.kind {
            CovarianceKind::Full => dim as f64 - 1.0,
            CovarianceKind::Diagonal => 0.0,
        };
        if !(self.dof.is_finite() && self.dof > min_dof) {
            return Err(LikelihoodError::InvalidParameter { name: "degrees of freedom", value: self.dof });
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(LikelihoodError::InvalidParameter { name: "mean", value: f64::NAN });
        }
        let asym = (&self.scatter - self.scatter.transpose()).amax();
        if !(asym <= 1e-9 * self.scatter.amax().max(1.0)) {
            return Err(LikelihoodError::NotPositiveDefinite { cluster: None });
        }
        match self.kind {
            CovarianceKind::Full => {
                self.cholesky()?;
            }
            CovarianceKind::Diagonal => {
                if self.scatter.diagonal().iter().any(|&s| !(s.is_finite() && s > 0.0)) {
                    return Err(LikelihoodError::NotPositiveDefinite { cluster: None });
                }
            }
        }
        Ok(())
    }

    fn cholesky(&self) -> Result<Cholesky<f64, Dyn>, LikelihoodError> {
        Cholesky::new(self.scatter.clone()).ok_or(LikelihoodError::NotPositiveDefinite { cluster: None })
    }

    /// Weakly informative prior centered on the data: m = sample mean,
    /// κ = 1e-2, ν = D + 2, scatter = diagonal sample covariance.
    pub fn default_prior(data: &[DVector<f64>], kind: CovarianceKind) -> Result<Self, LikelihoodError> {
        let first = data.first().ok_or(LikelihoodError::Empty)?;
        let dim = first.len();
        let n = data.len() as f64;
        let mut mean = DVector::zeros(dim);
        for y in data {
            if y.len() != dim {
                return Err(LikelihoodError::DimensionMismatch { expected: dim, got: y.len() });
            }
            mean += y;
        }
        mean /= n;
        let mut var = DVector::zeros(dim);
        for y in data {
            let d = y - &mean;
            var += d.component_mul(&d);
        }
        var /= n;
        let scatter = DMatrix::from_diagonal(&var.map(|v| v.max(MIN_PRIOR_VARIANCE)));
        Self::new(mean, DEFAULT_PRIOR_SCALE, dim as f64 + 2.0, scatter, kind)
    }

    /// Precomputes what repeated [`expected_log_lik`] calls need.
    pub fn evaluator(&self) -> Result<ExpectedLogLik, LikelihoodError> {
        let dim = self.dim();
        let d = dim as f64;
        match self.kind {
            CovarianceKind::Full => {
                let chol = self.cholesky()?;
                let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                let constant = 0.5 * (multi_digamma_sum(self.dof, dim)? + d * LN_2 - log_det)
                    - d / (2.0 * self.scale)
                    - 0.5 * d * LN_2PI;
                Ok(ExpectedLogLik {
                    mean: self.mean.clone(),
                    dof: self.dof,
                    constant,
                    form: Form::Full(chol.l()),
                })
            }
            CovarianceKind::Diagonal => {
                let diag = self.scatter.diagonal();
                let log_det: f64 = diag.iter().map(|s| s.ln()).sum();
                let constant = 0.5 * (d * digamma_unchecked(0.5 * self.dof) + d * LN_2 - log_det)
                    - d / (2.0 * self.scale)
                    - 0.5 * d * LN_2PI;
                Ok(ExpectedLogLik {
                    mean: self.mean.clone(),
                    dof: self.dof,
                    constant,
                    form: Form::Diagonal(diag.map(|s| 1.0 / s)),
                })
            }
        }
    }

    /// KL(self || prior).
    pub fn kl_divergence(&self, prior: &NWParams) -> Result<f64, LikelihoodError> {
        if self.dim() != prior.dim() {
            return Err(LikelihoodError::DimensionMismatch { expected: prior.dim(), got: self.dim() });
        }
        match self.kind {
            CovarianceKind::Full => kl_full(self, prior),
            CovarianceKind::Diagonal => {
                let mut total = 0.0;
                for i in 0..self.dim() {
                    total += kl_full(&self.marginal(i), &prior.marginal(i))?;
                }
                Ok(total)
            }
        }
    }

    fn marginal(&self, i: usize) -> NWParams {
        NWParams {
            mean: DVector::from_element(1, self.mean[i]),
            scale: self.scale,
            dof: self.dof,
            scatter: DMatrix::from_element(1, 1, self.scatter[(i, i)]),
            kind: CovarianceKind::Full,
        }
    }
}

fn kl_full(q: &NWParams, p: &NWParams) -> Result<f64, LikelihoodError> {
    let dim = q.dim();
    let d = dim as f64;
    let chol_q = q.cholesky()?;
    let chol_p = p.cholesky()?;
    let log_det_q = 2.0 * chol_q.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_det_p = 2.0 * chol_p.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    // E_q ln|Λ|
    let e_log_det = multi_digamma_sum(q.dof, dim)? + d * LN_2 - log_det_q;
    let delta = &q.mean - &p.mean;
    let quad = delta.dot(&chol_q.solve(&delta));
    let trace = chol_q.solve(&p.scatter).trace();
    // ln B(W, ν) with ln|W| = -ln det(scatter)
    let log_b = |dof: f64, log_det_scatter: f64| -> Result<f64, MathError> {
        Ok(0.5 * dof * log_det_scatter - 0.5 * dof * d * LN_2 - log_multigamma(0.5 * dof, dim)?)
    };
    let kl = 0.5 * d * (q.scale / p.scale).ln() - 0.5 * d
        + 0.5 * p.scale * (d / q.scale + q.dof * quad)
        + log_b(q.dof, log_det_q)?
        - log_b(p.dof, log_det_p)?
        + 0.5 * (q.dof - p.dof) * e_log_det
        - 0.5 * q.dof * d
        + 0.5 * q.dof * trace;
    Ok(kl)
}

#[derive(Debug, Clone)]
enum Form {
    Full(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

/// φ(y) = E_q[ln N(y | μ, Λ⁻¹)] for a fixed Normal–Wishart q.
#[derive(Debug, Clone)]
pub struct ExpectedLogLik {
    mean: DVector<f64>,
    dof: f64,
    constant: f64,
    form: Form,
}

impl ExpectedLogLik {
    pub fn eval(&self, y: &DVector<f64>) -> f64 {
        let diff = y - &self.mean;
        let quad = match &self.form {
            Form::Full(l) => {
                let z = l.solve_lower_triangular(&diff).expect("cholesky factor is invertible");
                z.norm_squared()
            }
            Form::Diagonal(inv) => diff.iter().zip(inv.iter()).map(|(d, w)| d * d * w).sum(),
        };
        self.constant - 0.5 * self.dof * quad
    }
}

/// E_q[ln N(y | μ, Λ⁻¹)] under the Normal–Wishart `post`.
pub fn expected_log_lik(post: &NWParams, y: &DVector<f64>) -> Result<f64, LikelihoodError> {
    if y.len() != post.dim() {
        return Err(LikelihoodError::DimensionMismatch { expected: post.dim(), got: y.len() });
    }
    Ok(post.evaluator()?.eval(y))
}

/// Responsibility-weighted zeroth, first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub weight: f64,
    pub weighted_sum: DVector<f64>,
    pub weighted_outer: DMatrix<f64>,
}

impl SufficientStats {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weight: 0.0,
            weighted_sum: DVector::zeros(dim),
            weighted_outer: DMatrix::zeros(dim, dim),
        }
    }

    pub fn add(&mut self, r: f64, y: &DVector<f64>) {
        if r == 0.0 {
            return;
        }
        self.weight += r;
        self.weighted_sum.axpy(r, y, 1.0);
        self.weighted_outer.ger(r, y, y, 1.0);
    }

    pub fn merge(&mut self, other: &SufficientStats) {
        self.weight += other.weight;
        self.weighted_sum += &other.weighted_sum;
        self.weighted_outer += &other.weighted_outer;
    }
}

/// Accumulates statistics in observation order.
pub fn accumulate_stats(
    responsibilities: &[f64],
    data: &[DVector<f64>],
) -> Result<SufficientStats, LikelihoodError> {
    if responsibilities.len() != data.len() {
        return Err(LikelihoodError::LengthMismatch { expected: data.len(), got: responsibilities.len() });
    }
    let dim = data.first().map_or(0, |y| y.len());
    let mut stats = SufficientStats::zeros(dim);
    for (&r, y) in responsibilities.iter().zip(data) {
        if y.len() != dim {
            return Err(LikelihoodError::DimensionMismatch { expected: dim, got: y.len() });
        }
        if !(0.0..=1.0).contains(&r) {
            return Err(LikelihoodError::InvalidParameter { name: "responsibility", value: r });
        }
        stats.add(r, y);
    }
    Ok(stats)
}

/// Conjugate Normal–Wishart update.
pub fn nw_posterior(prior: &NWParams, stats: &SufficientStats) -> Result<NWParams, LikelihoodError> {
    let dim = prior.dim();
    if stats.weighted_sum.len() != dim {
        return Err(LikelihoodError::DimensionMismatch { expected: dim, got: stats.weighted_sum.len() });
    }
    let w = stats.weight;
    if w <= 0.0 {
        return Ok(prior.clone());
    }
    let scale = prior.scale + w;
    let dof = prior.dof + w;
    let mean = (&prior.mean * prior.scale + &stats.weighted_sum) / scale;
    let ybar = &stats.weighted_sum / w;
    let within = &stats.weighted_outer - &stats.weighted_sum * stats.weighted_sum.transpose() / w;
    let shift = &ybar - &prior.mean;
    let mut scatter =
        &prior.scatter + within + &shift * shift.transpose() * (prior.scale * w / scale);
    match prior.kind {
        CovarianceKind::Full => scatter = (&scatter + scatter.transpose()) * 0.5,
        CovarianceKind::Diagonal => scatter = DMatrix::from_diagonal(&scatter.diagonal()),
    }
    NWParams::new(mean, scale, dof, scatter, prior.kind)
}
