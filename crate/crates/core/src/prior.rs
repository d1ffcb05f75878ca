//! Kernel functions, stick-breaking weights and the generalized Pólya urns
//! of the DP, PYP and kernel Pitman-Yor priors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{BetaParams, MathError};

/// Default lower clamp applied to kernel values.
pub const DEFAULT_KERNEL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PriorError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("location has no coordinates")]
    EmptyLocation,
    #[error("location coordinate {index} is not finite")]
    NonFiniteCoordinate { index: usize },
    #[error("invalid {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("stick {index} = {value} is outside [0, 1]")]
    StickOutOfRange { index: usize, value: f64 },
    #[error("truncated stick vector must end with 1, found {0}")]
    UnterminatedSticks(f64),
    #[error("cluster {index} has zero occupancy")]
    EmptyCluster { index: usize },
    #[error("expected {expected} kernel values, got {got}")]
    KernelCount { expected: usize, got: usize },
    #[error(transparent)]
    Math(#[from] MathError),
}

/// A position on the predictor lattice (pixel coordinates, time index, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location(Vec<f64>);

impl Location {
    pub fn new(coords: Vec<f64>) -> Result<Self, PriorError> {
        if coords.is_empty() {
            return Err(PriorError::EmptyLocation);
        }
        if let Some(index) = coords.iter().position(|c| !c.is_finite()) {
            return Err(PriorError::NonFiniteCoordinate { index });
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn squared_distance(&self, other: &Location) -> Result<f64, PriorError> {
        if self.dim() != other.dim() {
            return Err(PriorError::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    /// exp(-||x - center||² / width²)
    Rbf,
    /// Constant 1. Reduces the kernel Pitman-Yor prior to a Dirichlet process.
    Unit,
}

/// A bounded kernel centered at a cluster location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub center: Location,
    pub width: f64,
    pub floor: f64,
}

/// Kernel value together with the information the gradient code needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct KernelValue {
    pub value: f64,
    pub squared_distance: f64,
    /// The floor clamp is active, so the value is locally constant.
    pub clamped: bool,
}

impl KernelSpec {
    pub fn new(
        family: KernelFamily,
        center: Location,
        width: f64,
        floor: f64,
    ) -> Result<Self, PriorError> {
        if !(width.is_finite() && width > 0.0) {
            return Err(PriorError::InvalidParameter { name: "kernel width", value: width });
        }
        if !(floor > 0.0 && floor < 0.5) {
            return Err(PriorError::InvalidParameter { name: "kernel floor", value: floor });
        }
        Ok(Self { family, center, width, floor })
    }

    pub fn rbf(center: Location, width: f64) -> Result<Self, PriorError> {
        Self::new(KernelFamily::Rbf, center, width, DEFAULT_KERNEL_FLOOR)
    }

    /// Kernel value in `[floor, 1]`.
    pub fn eval(&self, x: &Location) -> Result<f64, PriorError> {
        Ok(self.eval_detailed(x)?.value)
    }

    pub(crate) fn eval_detailed(&self, x: &Location) -> Result<KernelValue, PriorError> {
        let squared_distance = self.center.squared_distance(x)?;
        Ok(match self.family {
            KernelFamily::Unit => KernelValue { value: 1.0, squared_distance, clamped: true },
            KernelFamily::Rbf => {
                let raw = (-squared_distance / (self.width * self.width)).exp();
                if raw <= self.floor {
                    KernelValue { value: self.floor, squared_distance, clamped: true }
                } else {
                    KernelValue { value: raw.min(1.0), squared_distance, clamped: false }
                }
            }
        })
    }
}

/// Evaluates `spec` at `x`.
pub fn kernel_eval(spec: &KernelSpec, x: &Location) -> Result<f64, PriorError> {
    spec.eval(x)
}

/// Stick variables of a truncated stick-breaking construction; the last stick is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct StickVector(Vec<f64>);

impl StickVector {
    pub fn new(v: Vec<f64>) -> Result<Self, PriorError> {
        if let Some((index, &value)) =
            v.iter().enumerate().find(|(_, x)| !(0.0..=1.0).contains(*x))
        {
            return Err(PriorError::StickOutOfRange { index, value });
        }
        match v.last() {
            Some(&last) if last == 1.0 => Ok(Self(v)),
            Some(&last) => Err(PriorError::UnterminatedSticks(last)),
            None => Err(PriorError::UnterminatedSticks(f64::NAN)),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Mixture weights ϖ_c = v_c ∏_{j<c} (1 - v_j); sums to one.
pub fn stick_weights(v: &StickVector) -> Vec<f64> {
    break_sticks(v.as_slice()).0
}

/// Breaks an arbitrary (not necessarily terminated) run of sticks.
///
/// Returns the weights and the unallocated remainder ∏_c (1 - v_c).
pub fn break_sticks(v: &[f64]) -> (Vec<f64>, f64) {
    let mut remaining = 1.0;
    let weights = v
        .iter()
        .map(|&vc| {
            let w = vc * remaining;
            remaining *= 1.0 - vc;
            w
        })
        .collect();
    (weights, remaining)
}

fn check_alpha(alpha: f64) -> Result<(), PriorError> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(PriorError::InvalidParameter { name: "innovation alpha", value: alpha })
    }
}

fn check_kernel_value(k: f64) -> Result<(), PriorError> {
    if k > 0.0 && k <= 1.0 {
        Ok(())
    } else {
        Err(PriorError::InvalidParameter { name: "kernel value", value: k })
    }
}

/// Prior of the `c`-th (1-based) stick: Beta(k, α + c(1 - k)).
pub fn kpyp_stick_prior(k_val: f64, alpha: f64, c: usize) -> Result<BetaParams, PriorError> {
    check_kernel_value(k_val)?;
    check_alpha(alpha)?;
    Ok(BetaParams::new(k_val, alpha + c as f64 * (1.0 - k_val))?)
}

/// Mean and variance of the `c`-th kernel Pitman-Yor stick.
pub fn kpyp_stick_moments(k_val: f64, alpha: f64, c: usize) -> Result<(f64, f64), PriorError> {
    check_kernel_value(k_val)?;
    check_alpha(alpha)?;
    let alpha_c = alpha + c as f64 * (1.0 - k_val);
    let s = k_val + alpha_c;
    Ok((k_val / s, k_val * alpha_c / (s * s * (s + 1.0))))
}

/// Mean and variance of a kernel stick-breaking stick `V k` with `V ~ Beta(1, α)`.
pub fn ksbp_stick_moments(k_val: f64, alpha: f64) -> Result<(f64, f64), PriorError> {
    if !(0.0..=1.0).contains(&k_val) {
        return Err(PriorError::InvalidParameter { name: "kernel value", value: k_val });
    }
    check_alpha(alpha)?;
    let s = 1.0 + alpha;
    Ok((k_val / s, k_val * k_val * alpha / (s * s * (alpha + 2.0))))
}

/// Draws `count` kernel Pitman-Yor sticks at a fixed kernel value.
pub fn sample_kpyp_sticks<R: Rng + ?Sized>(
    k_val: f64,
    alpha: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<f64>, PriorError> {
    (1..=count)
        .map(|c| {
            let p = kpyp_stick_prior(k_val, alpha, c)?;
            let beta = Beta::new(p.a, p.b)
                .map_err(|_| PriorError::InvalidParameter { name: "beta shape", value: p.a })?;
            Ok(beta.sample(rng))
        })
        .collect()
}

/// Draws `count` kernel stick-breaking sticks `V k`, `V ~ Beta(1, α)`.
pub fn sample_ksbp_sticks<R: Rng + ?Sized>(
    k_val: f64,
    alpha: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<f64>, PriorError> {
    check_alpha(alpha)?;
    let beta = Beta::new(1.0, alpha)
        .map_err(|_| PriorError::InvalidParameter { name: "innovation alpha", value: alpha })?;
    Ok((0..count).map(|_| k_val * beta.sample(rng)).collect())
}

/// Occupancy of the clusters created so far by an urn.
#[derive(Debug, Clone, PartialEq)]
pub struct UrnState {
    pub counts: Vec<u64>,
    pub innovation: f64,
}

impl UrnState {
    pub fn empty(innovation: f64) -> Self {
        Self { counts: Vec::new(), innovation }
    }

    /// Number of draws so far (M - 1).
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Which predictive rule an urn follows.
#[derive(Debug, Clone, PartialEq)]
pub enum UrnPrior {
    Dp,
    Pyp { discount: f64 },
    /// Kernel values k(x, x̂_c; ψ_c) of the existing clusters at the new draw's location.
    Kpyp { kernel: Vec<f64> },
}

// Per-cluster discounts: 0 for the DP, d for the PYP, 1 - k_c for the kernel prior.
fn urn_discounts(state: &UrnState, prior: &UrnPrior) -> Result<Vec<f64>, PriorError> {
    let clusters = state.counts.len();
    match prior {
        UrnPrior::Dp => {
            check_alpha(state.innovation)?;
            Ok(vec![0.0; clusters])
        }
        UrnPrior::Pyp { discount } => {
            let d = *discount;
            if !(0.0..1.0).contains(&d) {
                return Err(PriorError::InvalidParameter { name: "discount", value: d });
            }
            if !(state.innovation.is_finite() && state.innovation > -d) {
                return Err(PriorError::InvalidParameter {
                    name: "innovation alpha",
                    value: state.innovation,
                });
            }
            Ok(vec![d; clusters])
        }
        UrnPrior::Kpyp { kernel } => {
            check_alpha(state.innovation)?;
            if kernel.len() != clusters {
                return Err(PriorError::KernelCount { expected: clusters, got: kernel.len() });
            }
            kernel
                .iter()
                .map(|&k| {
                    check_kernel_value(k)?;
                    Ok(1.0 - k)
                })
                .collect()
        }
    }
}

/// Unnormalized mass of a fresh draw from the base measure: α + Σ_c δ_c.
fn new_draw_mass(innovation: f64, discounts: &[f64]) -> f64 {
    innovation + discounts.iter().sum::<f64>()
}

/// Predictive probabilities of the next draw: one entry per existing cluster,
/// followed by the probability of a new draw from the base measure.
pub fn urn_predictive(state: &UrnState, prior: &UrnPrior) -> Result<Vec<f64>, PriorError> {
    if let Some(index) = state.counts.iter().position(|&f| f == 0) {
        return Err(PriorError::EmptyCluster { index });
    }
    let discounts = urn_discounts(state, prior)?;
    if state.counts.is_empty() {
        return Ok(vec![1.0]);
    }
    let denom = state.innovation + state.total() as f64;
    let mut probs: Vec<f64> =
        state.counts.iter().zip(&discounts).map(|(&f, &d)| (f as f64 - d) / denom).collect();
    probs.push(new_draw_mass(state.innovation, &discounts) / denom);
    Ok(probs)
}

/// Prior driving a simulated urn path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum UrnPath {
    Dp,
    Pyp { discount: f64 },
    /// Draws land uniformly on `[0, 1]^dim`; each cluster is centered where it was created.
    Kpyp { width: f64, dim: usize, floor: f64 },
}

/// Simulates `draws` sequential draws and returns the number of distinct
/// clusters after each one.
pub fn sample_urn_path(
    path: &UrnPath,
    alpha: f64,
    draws: usize,
    seed: u64,
) -> Result<Vec<usize>, PriorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match path {
        UrnPath::Dp => count_process(alpha, 0.0, UrnPrior::Dp, draws, &mut rng),
        UrnPath::Pyp { discount } => {
            count_process(alpha, *discount, UrnPrior::Pyp { discount: *discount }, draws, &mut rng)
        }
        UrnPath::Kpyp { width, dim, floor } => {
            kernel_urn_path(alpha, *width, *dim, *floor, draws, &mut rng)
        }
    }
}

// For the DP and PYP the new-draw probability depends only on (C, M), so the
// cluster count is itself a Markov chain and assignments need not be tracked.
fn count_process(
    alpha: f64,
    discount: f64,
    prior: UrnPrior,
    draws: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, PriorError> {
    // validates parameters
    urn_discounts(&UrnState { counts: vec![1], innovation: alpha }, &prior)?;
    let mut clusters = 0usize;
    let mut out = Vec::with_capacity(draws);
    for m in 0..draws {
        let p_new = if m == 0 {
            1.0
        } else {
            new_draw_mass(alpha, &[discount * clusters as f64]) / (alpha + m as f64)
        };
        if rng.random::<f64>() < p_new {
            clusters += 1;
        }
        out.push(clusters);
    }
    Ok(out)
}

fn kernel_urn_path(
    alpha: f64,
    width: f64,
    dim: usize,
    floor: f64,
    draws: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, PriorError> {
    if dim == 0 {
        return Err(PriorError::EmptyLocation);
    }
    let mut kernels: Vec<KernelSpec> = Vec::new();
    let mut state = UrnState::empty(alpha);
    let mut out = Vec::with_capacity(draws);
    for _ in 0..draws {
        let x = Location::new((0..dim).map(|_| rng.random::<f64>()).collect())?;
        let kernel = kernels.iter().map(|k| k.eval(&x)).collect::<Result<Vec<_>, _>>()?;
        let probs = urn_predictive(&state, &UrnPrior::Kpyp { kernel })?;
        let choice = sample_categorical(&probs, rng.random::<f64>());
        if choice == state.counts.len() {
            kernels.push(KernelSpec::new(KernelFamily::Rbf, x, width, floor)?);
            state.counts.push(1);
        } else {
            state.counts[choice] += 1;
        }
        out.push(state.counts.len());
    }
    Ok(out)
}

fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let total: f64 = probs.iter().sum();
    let mut target = u * total;
    for (i, p) in probs.iter().enumerate() {
        if target < *p {
            return i;
        }
        target -= p;
    }
    probs.len() - 1
}

/// Mean cluster-count trajectory over `paths` independent seeds
/// (`seed`, `seed + 1`, ...).
pub fn mean_urn_path(
    path: &UrnPath,
    alpha: f64,
    draws: usize,
    paths: usize,
    seed: u64,
) -> Result<Vec<f64>, PriorError> {
    let run = |i: usize| sample_urn_path(path, alpha, draws, seed.wrapping_add(i as u64));
    #[cfg(feature = "parallel")]
    let all: Vec<Vec<usize>> = {
        use rayon::prelude::*;
        (0..paths).into_par_iter().map(run).collect::<Result<_, _>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let all: Vec<Vec<usize>> = (0..paths).map(run).collect::<Result<_, _>>()?;
    let mut mean = vec![0.0; draws];
    for trajectory in &all {
        for (m, &c) in mean.iter_mut().zip(trajectory) {
            *m += c as f64;
        }
    }
    let scale = 1.0 / paths.max(1) as f64;
    mean.iter_mut().for_each(|m| *m *= scale);
    Ok(mean)
}
