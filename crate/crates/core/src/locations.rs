//! Learning kernel centers and widths from the kernel-dependent part of the
//! free energy, plus random center selection.
//!
//! Per unique location ℓ and cluster c < C the objective is
//! `R(k,c) + (k-1)<ln v> + c(1-k)<ln(1-v)>` with `k = k_c(x_ℓ)`. Widths are
//! optimized as log ψ so they stay positive.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lbfgs::{minimize, LbfgsOptions};
use crate::par::map_indexed;
use crate::prior::{KernelSpec, Location, PriorError};
use crate::special::{expected_log_stick, BetaParams};
use crate::vb::{stick_offset, stick_offset_dk, LocationGroups};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocationError {
    #[error("non-finite location gradient for cluster {cluster}")]
    NonFiniteGradient { cluster: usize },
    #[error("non-finite location objective for cluster {cluster}")]
    NonFiniteObjective { cluster: usize },
    #[error("location parameters do not match the problem: {0}")]
    Shape(String),
    #[error(transparent)]
    Prior(#[from] PriorError),
}

/// Kernel centers (C × D) and log widths (C values, or one when shared).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationParams {
    pub centers: Vec<Vec<f64>>,
    pub log_widths: Vec<f64>,
}

impl LocationParams {
    /// Reads parameters off kernels; a shared width is the geometric mean.
    pub fn from_kernels(kernels: &[KernelSpec], shared_width: bool) -> Self {
        let centers = kernels.iter().map(|k| k.center.coords().to_vec()).collect();
        let logs: Vec<f64> = kernels.iter().map(|k| k.width.ln()).collect();
        let log_widths = if shared_width {
            vec![logs.iter().sum::<f64>() / logs.len().max(1) as f64]
        } else {
            logs
        };
        Self { centers, log_widths }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn shared_width(&self) -> bool {
        self.log_widths.len() == 1 && self.centers.len() != 1
    }

    pub fn log_width(&self, c: usize) -> f64 {
        if self.log_widths.len() == 1 {
            self.log_widths[0]
        } else {
            self.log_widths[c]
        }
    }

    pub fn width(&self, c: usize) -> f64 {
        self.log_width(c).exp()
    }

    /// Writes centers and widths into `kernels`.
    pub fn apply(&self, kernels: &mut [KernelSpec]) -> Result<(), LocationError> {
        if kernels.len() != self.centers.len() {
            return Err(LocationError::Shape(format!("{} kernels for {} centers", kernels.len(), self.centers.len())));
        }
        for (c, k) in kernels.iter_mut().enumerate() {
            let center = Location::new(self.centers[c].clone())?;
            *k = KernelSpec::new(k.family, center, self.width(c), k.floor)?;
        }
        Ok(())
    }

    fn pack(&self, centers: bool) -> Vec<f64> {
        let mut v: Vec<f64> = if centers { self.centers.concat() } else { Vec::new() };
        v.extend_from_slice(&self.log_widths);
        v
    }

    fn unpack(&self, v: &[f64], centers: bool) -> Self {
        let mut out = self.clone();
        let mut i = 0;
        if centers {
            for row in out.centers.iter_mut() {
                for x in row.iter_mut() {
                    *x = v[i];
                    i += 1;
                }
            }
        }
        out.log_widths.copy_from_slice(&v[i..]);
        out
    }
}

/// Gradient with the same layout as [`LocationParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct LocationGradient {
    pub centers: Vec<Vec<f64>>,
    pub log_widths: Vec<f64>,
}

impl LocationGradient {
    fn pack(&self, centers: bool) -> Vec<f64> {
        let mut v: Vec<f64> = if centers { self.centers.concat() } else { Vec::new() };
        v.extend_from_slice(&self.log_widths);
        v
    }
}

/// The location objective for fixed stick posteriors.
#[derive(Debug, Clone)]
pub struct LocationProblem<'a> {
    groups: &'a LocationGroups,
    /// `(<ln v>, <ln(1-v)>)` per `[group][c]`.
    elog: Vec<Vec<(f64, f64)>>,
    alpha_ref: f64,
    floor: f64,
    /// Offset at the floor, per cluster.
    floor_offset: Vec<f64>,
    shared_width: bool,
    learn_centers: bool,
}

impl<'a> LocationProblem<'a> {
    pub fn new(
        groups: &'a LocationGroups,
        sticks: &[Vec<BetaParams>],
        alpha_ref: f64,
        floor: f64,
        shared_width: bool,
        learn_centers: bool,
    ) -> Self {
        let elog: Vec<Vec<(f64, f64)>> =
            sticks.iter().map(|s| s.iter().map(expected_log_stick).collect()).collect();
        let sticks_per_group = sticks.first().map_or(0, |s| s.len());
        let floor_offset = (0..sticks_per_group).map(|c| stick_offset(floor, c + 1, alpha_ref)).collect();
        Self { groups, elog, alpha_ref, floor, floor_offset, shared_width, learn_centers }
    }

    pub fn learns_centers(&self) -> bool {
        self.learn_centers
    }

    fn check(&self, params: &LocationParams) -> Result<(), LocationError> {
        let c = self.elog.first().map_or(0, |s| s.len()) + 1;
        let expected_widths = if self.shared_width { 1 } else { c };
        if params.centers.len() != c || params.log_widths.len() != expected_widths {
            return Err(LocationError::Shape(format!(
                "{} centers and {} widths, expected {c} and {expected_widths}",
                params.centers.len(),
                params.log_widths.len()
            )));
        }
        let dim = self.groups.locations.first().map_or(0, |x| x.dim());
        if let Some(row) = params.centers.iter().find(|r| r.len() != dim) {
            return Err(LocationError::Shape(format!("center of dimension {}, expected {dim}", row.len())));
        }
        Ok(())
    }

    // Value and gradient contributions of cluster `c` (0-based, c < C-1).
    fn cluster_terms(&self, params: &LocationParams, c: usize, grad: bool) -> (f64, Vec<f64>, f64) {
        let center = &params.centers[c];
        let psi2 = params.width(c).powi(2);
        let cf = (c + 1) as f64;
        let mut value = 0.0;
        let mut g_center = vec![0.0; center.len()];
        let mut g_log_width = 0.0;
        for (g, x) in self.groups.locations.iter().enumerate() {
            let (lv, l1v) = self.elog[g][c];
            let d2: f64 = x.coords().iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            let raw = (-d2 / psi2).exp();
            if raw <= self.floor {
                let k = self.floor;
                value += self.floor_offset[c] + (k - 1.0) * lv + cf * (1.0 - k) * l1v;
                continue;
            }
            let k = raw.min(1.0);
            value += stick_offset(k, c + 1, self.alpha_ref) + (k - 1.0) * lv + cf * (1.0 - k) * l1v;
            if grad {
                let dk = stick_offset_dk(k, c + 1, self.alpha_ref) + lv - cf * l1v;
                let common = dk * k * 2.0 / psi2;
                for ((gj, xj), cj) in g_center.iter_mut().zip(x.coords()).zip(center) {
                    *gj += common * (xj - cj);
                }
                g_log_width += common * d2;
            }
        }
        (value, g_center, g_log_width)
    }

    fn evaluate(&self, params: &LocationParams, grad: bool) -> Result<(f64, LocationGradient), LocationError> {
        self.check(params)?;
        let c_max = params.centers.len();
        let parts = map_indexed(c_max - 1, true, |c| self.cluster_terms(params, c, grad));
        let mut value = 0.0;
        let mut gradient = LocationGradient {
            centers: params.centers.iter().map(|r| vec![0.0; r.len()]).collect(),
            log_widths: vec![0.0; params.log_widths.len()],
        };
        for (c, (v, gc, gw)) in parts.into_iter().enumerate() {
            if !v.is_finite() {
                return Err(LocationError::NonFiniteObjective { cluster: c });
            }
            if !(gw.is_finite() && gc.iter().all(|x| x.is_finite())) {
                return Err(LocationError::NonFiniteGradient { cluster: c });
            }
            value += v;
            gradient.centers[c] = gc;
            let w = if self.shared_width { 0 } else { c };
            gradient.log_widths[w] += gw;
        }
        Ok((value, gradient))
    }

    pub fn objective(&self, params: &LocationParams) -> Result<f64, LocationError> {
        self.evaluate(params, false).map(|(v, _)| v)
    }

    /// Objective value and its analytic gradient in (centers, log widths).
    pub fn objective_and_gradient(&self, params: &LocationParams) -> Result<(f64, LocationGradient), LocationError> {
        self.evaluate(params, true)
    }
}

/// Maximizes the location objective with at most `budget` L-BFGS iterations.
///
/// Never returns parameters worse than `start`.
pub fn optimize_locations(
    problem: &LocationProblem<'_>,
    start: &LocationParams,
    budget: usize,
) -> Result<LocationParams, LocationError> {
    let f0 = problem.objective(start)?;
    if budget == 0 {
        return Ok(start.clone());
    }
    let centers = problem.learn_centers;
    let x0 = start.pack(centers);
    let opts = LbfgsOptions { max_iters: budget, ..Default::default() };
    let result = minimize(
        |x| {
            let p = start.unpack(x, centers);
            let (v, g) = problem.objective_and_gradient(&p).ok()?;
            Some((-v, g.pack(centers).into_iter().map(|v| -v).collect()))
        },
        &x0,
        &opts,
    );
    if result.value < -f0 {
        Ok(start.unpack(&result.x, centers))
    } else {
        Ok(start.clone())
    }
}

/// Centers drawn from `lattice` without replacement (with replacement when `c` exceeds its size).
pub fn random_locations(lattice: &[Location], c: usize, width: f64, seed: u64) -> LocationParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = lattice.len();
    let picks: Vec<usize> = if n == 0 {
        Vec::new()
    } else if c <= n {
        index::sample(&mut rng, n, c).into_vec()
    } else {
        (0..c).map(|_| rng.random_range(0..n)).collect()
    };
    LocationParams {
        centers: picks.iter().map(|&i| lattice[i].coords().to_vec()).collect(),
        log_widths: vec![width.ln(); picks.len()],
    }
}
