//! Truncated variational Bayes for the kernel Pitman–Yor mixture.
//!
//! Sticks are indexed by unique location. The free energy is
//!
//! ```text
//! L = -KL(q(α)||p(α))
//!   + Σ_{ℓ, c<C} [ <ln α> + R(k,c) + (k-1)<ln v> + (<α> + c(1-k) - 1)<ln(1-v)> + H[q(v)] ]
//!   - Σ_c KL(q(θ_c)||p(θ_c))
//!   + Σ_{n,c} q(z_n=c) [ <ln ϖ_c(x_n)> - ln q(z_n=c) + φ_nc ]
//! ```
//!
//! where `R(k,c) = lnΓ(a+b+k) - lnΓ(k) - lnΓ(a+b) - ln a`, `b = c(1-k)` and
//! `a` is the prior mean of α, held fixed for the whole fit. `R` vanishes at
//! `k = 1`, where the stick term is the exact Beta(1, α) expectation. Every
//! closed-form update below is the exact coordinate maximizer of this bound.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::kmeans::{kmeans_labels, standardize};
use crate::likelihood::{accumulate_stats, nw_posterior, CovarianceKind, LikelihoodError, NWParams};
use crate::locations::{optimize_locations, random_locations, LocationError, LocationParams, LocationProblem};
use crate::par::map_indexed;
use crate::prior::{KernelFamily, KernelSpec, Location, PriorError, DEFAULT_KERNEL_FLOOR};
use crate::special::{
    digamma_unchecked, expected_log_stick, log_gamma_unchecked, BetaParams, GammaParams, MathError,
};

/// Components holding less than this fraction of the data are reported inactive.
pub const ACTIVE_FRACTION: f64 = 1e-3;
/// Clusters with less total responsibility keep their prior.
pub const DEGENERATE_WEIGHT: f64 = 1e-8;
const INIT_CONFIDENCE: f64 = 0.9;

#[derive(Debug, Error)]
pub enum VbError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no locations supplied")]
    NoLocations,
    #[error("location {index} has dimension {got}, expected {expected}")]
    LocationDim { index: usize, expected: usize, got: usize },
    #[error("{what} has shape {got_rows}x{got_cols}, expected {rows}x{cols}")]
    Shape { what: &'static str, rows: usize, cols: usize, got_rows: usize, got_cols: usize },
    #[error("observation {row}: every assignment has zero probability")]
    DegenerateRow { row: usize },
    #[error("free energy is not finite in the {term} term")]
    NonFinite { term: &'static str },
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Location(#[from] LocationError),
    #[error(transparent)]
    Math(#[from] MathError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LocationMode {
    /// Centers drawn from the observed locations; only widths are learned.
    Random,
    #[default]
    Optimized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VBConfig {
    pub truncation: usize,
    pub alpha_prior: GammaParams,
    pub max_iters: usize,
    pub free_energy_rel_tol: f64,
    pub seed: u64,
    pub location_mode: LocationMode,
    pub shared_width: bool,
    pub kernel_family: KernelFamily,
    pub kernel_floor: f64,
    /// Initial ψ; half the lattice diagonal when unset.
    pub initial_width: Option<f64>,
    /// Locations and widths are re-optimized every this many sweeps.
    pub location_every: usize,
    /// L-BFGS iterations per location update.
    pub location_budget: usize,
    pub covariance: CovarianceKind,
    /// Number of k-means clusters used to seed responsibilities (defaults to the truncation).
    pub init_clusters: Option<usize>,
    pub parallel: bool,
}

impl Default for VBConfig {
    fn default() -> Self {
        Self {
            truncation: 20,
            alpha_prior: GammaParams { shape: 1e-2, rate: 1e-2 },
            max_iters: 200,
            free_energy_rel_tol: 1e-6,
            seed: 0,
            location_mode: LocationMode::Optimized,
            shared_width: false,
            kernel_family: KernelFamily::Rbf,
            kernel_floor: DEFAULT_KERNEL_FLOOR,
            initial_width: None,
            location_every: 5,
            location_budget: 50,
            covariance: CovarianceKind::Full,
            init_clusters: None,
            parallel: true,
        }
    }
}

impl VBConfig {
    pub fn validate(&self) -> Result<(), VbError> {
        let bad = |msg: String| Err(VbError::Config(msg));
        if self.truncation < 2 {
            return bad(format!("truncation must be at least 2, got {}", self.truncation));
        }
        GammaParams::new(self.alpha_prior.shape, self.alpha_prior.rate)?;
        if !(self.free_energy_rel_tol > 0.0 && self.free_energy_rel_tol.is_finite()) {
            return bad(format!("free_energy_rel_tol must be positive, got {}", self.free_energy_rel_tol));
        }
        if !(self.kernel_floor > 0.0 && self.kernel_floor < 0.5) {
            return bad(format!("kernel_floor must lie in (0, 0.5), got {}", self.kernel_floor));
        }
        if let Some(w) = self.initial_width {
            if !(w > 0.0 && w.is_finite()) {
                return bad(format!("initial_width must be positive, got {w}"));
            }
        }
        if self.location_every == 0 {
            return bad("location_every must be at least 1".into());
        }
        if self.init_clusters == Some(0) {
            return bad("init_clusters must be at least 1".into());
        }
        Ok(())
    }

    fn learns_locations(&self) -> bool {
        self.kernel_family == KernelFamily::Rbf && self.location_budget > 0
    }
}

/// Unique locations in order of first appearance, with their member observations.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationGroups {
    pub locations: Vec<Location>,
    pub members: Vec<Vec<usize>>,
    /// Group index of each observation.
    pub group_of: Vec<usize>,
}

impl LocationGroups {
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
}

/// Groups observations whose coordinates are bitwise identical.
pub fn group_locations(xs: &[Location]) -> Result<LocationGroups, VbError> {
    let first = xs.first().ok_or(VbError::NoLocations)?;
    let dim = first.dim();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut groups = LocationGroups { locations: Vec::new(), members: Vec::new(), group_of: Vec::with_capacity(xs.len()) };
    for (i, x) in xs.iter().enumerate() {
        if x.dim() != dim {
            return Err(VbError::LocationDim { index: i, expected: dim, got: x.dim() });
        }
        let key: Vec<u64> = x.coords().iter().map(|v| v.to_bits()).collect();
        let g = *index.entry(key).or_insert_with(|| {
            groups.locations.push(x.clone());
            groups.members.push(Vec::new());
            groups.locations.len() - 1
        });
        groups.members[g].push(i);
        groups.group_of.push(g);
    }
    Ok(groups)
}

/// Kernel values `[group][cluster]`.
pub fn kernel_table(kernels: &[KernelSpec], groups: &LocationGroups) -> Result<Vec<Vec<f64>>, PriorError> {
    groups
        .locations
        .iter()
        .map(|x| kernels.iter().map(|k| k.eval(x)).collect())
        .collect()
}

/// The α-free normalizer correction `R(k, c)` (`c` is 1-based).
pub fn stick_offset(k: f64, c: usize, alpha_ref: f64) -> f64 {
    if k == 1.0 {
        return 0.0;
    }
    let b = alpha_ref + c as f64 * (1.0 - k);
    log_gamma_unchecked(b + k) - log_gamma_unchecked(k) - log_gamma_unchecked(b) - alpha_ref.ln()
}

/// `dR/dk`.
pub fn stick_offset_dk(k: f64, c: usize, alpha_ref: f64) -> f64 {
    let cf = c as f64;
    let b = alpha_ref + cf * (1.0 - k);
    (1.0 - cf) * digamma_unchecked(b + k) - digamma_unchecked(k) + cf * digamma_unchecked(b)
}

fn group_sums(resp: &DMatrix<f64>, groups: &LocationGroups) -> Vec<Vec<f64>> {
    let c = resp.ncols();
    groups
        .members
        .iter()
        .map(|members| {
            let mut s = vec![0.0; c];
            for &m in members {
                for (j, sj) in s.iter_mut().enumerate() {
                    *sj += resp[(m, j)];
                }
            }
            s
        })
        .collect()
}

/// Stick posteriors `[group][c]` for `c < C`.
pub fn update_sticks(
    resp: &DMatrix<f64>,
    groups: &LocationGroups,
    kernels: &[Vec<f64>],
    alpha_mean: f64,
) -> Vec<Vec<BetaParams>> {
    let c_max = resp.ncols();
    group_sums(resp, groups)
        .iter()
        .zip(kernels)
        .map(|(sums, ks)| {
            let mut suffix = vec![0.0; c_max + 1];
            for c in (0..c_max).rev() {
                suffix[c] = suffix[c + 1] + sums[c];
            }
            (0..c_max - 1)
                .map(|c| {
                    let k = ks[c];
                    BetaParams { a: k + sums[c], b: alpha_mean + (c + 1) as f64 * (1.0 - k) + suffix[c + 1] }
                })
                .collect()
        })
        .collect()
}

/// Closed-form Gamma posterior of α given the stick posteriors.
pub fn update_alpha(prior: &GammaParams, sticks: &[Vec<BetaParams>]) -> GammaParams {
    let mut count = 0usize;
    let mut sum = 0.0;
    for s in sticks.iter().flatten() {
        count += 1;
        sum += expected_log_stick(s).1;
    }
    GammaParams { shape: prior.shape + count as f64, rate: prior.rate - sum }
}

/// `<ln ϖ_c>` for `c = 1..=C`, with the last stick fixed at one.
pub fn expected_log_weights(sticks: &[BetaParams]) -> Vec<f64> {
    let mut out = Vec::with_capacity(sticks.len() + 1);
    let mut acc = 0.0;
    for s in sticks {
        let (lv, l1v) = expected_log_stick(s);
        out.push(acc + lv);
        acc += l1v;
    }
    out.push(acc);
    out
}

/// φ_nc, the expected log-likelihood of every observation under every cluster.
pub fn expected_log_likelihoods(
    clusters: &[NWParams],
    data: &Dataset,
    parallel: bool,
) -> Result<Vec<Vec<f64>>, VbError> {
    let evaluators = clusters
        .iter()
        .enumerate()
        .map(|(i, c)| c.evaluator().map_err(|e| e.for_cluster(i)))
        .collect::<Result<Vec<_>, _>>()?;
    let y = data.features();
    Ok(map_indexed(y.len(), parallel, |n| evaluators.iter().map(|e| e.eval(&y[n])).collect()))
}

fn normalize_row(logits: &mut [f64], row: usize) -> Result<(), VbError> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(VbError::DegenerateRow { row });
    }
    let mut total = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    logits.iter_mut().for_each(|v| *v /= total);
    Ok(())
}

/// Responsibilities from stick posteriors and φ.
pub fn update_responsibilities(
    sticks: &[Vec<BetaParams>],
    phi: &[Vec<f64>],
    groups: &LocationGroups,
    parallel: bool,
) -> Result<DMatrix<f64>, VbError> {
    let n = phi.len();
    let c = sticks.first().map_or(0, |s| s.len() + 1);
    let log_w: Vec<Vec<f64>> = sticks.iter().map(|s| expected_log_weights(s)).collect();
    let rows = map_indexed(n, parallel, |i| {
        let lw = &log_w[groups.group_of[i]];
        let mut row: Vec<f64> = lw.iter().zip(&phi[i]).map(|(a, b)| a + b).collect();
        normalize_row(&mut row, i).map(|_| row)
    });
    let mut resp = DMatrix::zeros(n, c);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row?.into_iter().enumerate() {
            resp[(i, j)] = v;
        }
    }
    Ok(resp)
}

/// Normal–Wishart posteriors per cluster; near-empty clusters keep the prior.
pub fn update_clusters(
    prior: &NWParams,
    resp: &DMatrix<f64>,
    data: &Dataset,
    parallel: bool,
) -> Result<Vec<NWParams>, VbError> {
    let y = data.features();
    map_indexed(resp.ncols(), parallel, |c| {
        let col = resp.column(c);
        let stats = accumulate_stats(col.as_slice(), y).map_err(|e| e.for_cluster(c))?;
        if stats.weight < DEGENERATE_WEIGHT {
            return Ok(prior.clone());
        }
        nw_posterior(prior, &stats).map_err(|e| e.for_cluster(c))
    })
    .into_iter()
    .map(|r| r.map_err(VbError::from))
    .collect()
}

/// One record of the free-energy trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub free_energy: f64,
    pub alpha_mean: f64,
    pub active: usize,
    pub locations_updated: bool,
}

/// Free energy split by term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeEnergy {
    pub total: f64,
    pub alpha: f64,
    pub sticks: f64,
    pub clusters: f64,
    pub assignments: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VBState {
    /// N×C, rows sum to one.
    pub responsibilities: DMatrix<f64>,
    /// `[group][c]` for `c < C`.
    pub stick_post: Vec<Vec<BetaParams>>,
    pub alpha_post: GammaParams,
    pub clusters: Vec<NWParams>,
    pub kernels: Vec<KernelSpec>,
    pub free_energy_trace: Vec<TraceRecord>,
}

impl VBState {
    pub fn truncation(&self) -> usize {
        self.responsibilities.ncols()
    }

    /// Row argmax, lowest index on ties (0-based).
    pub fn hard_labels(&self) -> Vec<usize> {
        self.responsibilities
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Total responsibility per cluster.
    pub fn cluster_mass(&self) -> Vec<f64> {
        self.responsibilities.column_iter().map(|c| c.sum()).collect()
    }

    pub fn active_count(&self) -> usize {
        let n = self.responsibilities.nrows() as f64;
        self.cluster_mass().iter().filter(|&&m| m >= ACTIVE_FRACTION * n).count()
    }

    pub fn alpha_mean(&self) -> f64 {
        self.alpha_post.mean()
    }
}

/// Evaluates the free energy of `state`.
pub fn free_energy(
    state: &VBState,
    data: &Dataset,
    groups: &LocationGroups,
    cluster_prior: &NWParams,
    alpha_prior: &GammaParams,
    alpha_ref: f64,
    parallel: bool,
) -> Result<FreeEnergy, VbError> {
    let check = |v: f64, term: &'static str| if v.is_finite() { Ok(v) } else { Err(VbError::NonFinite { term }) };

    let alpha = check(-state.alpha_post.kl_divergence(alpha_prior), "alpha")?;

    let kernels = kernel_table(&state.kernels, groups)?;
    let e_log_alpha = state.alpha_post.expected_log();
    let e_alpha = state.alpha_post.mean();
    let stick_terms = map_indexed(groups.len(), parallel, |g| {
        state.stick_post[g]
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let k = kernels[g][c];
                let cf = (c + 1) as f64;
                let (lv, l1v) = expected_log_stick(s);
                e_log_alpha + stick_offset(k, c + 1, alpha_ref) + (k - 1.0) * lv
                    + (e_alpha + cf * (1.0 - k) - 1.0) * l1v
                    + s.entropy()
            })
            .sum::<f64>()
    });
    let sticks = check(stick_terms.iter().sum(), "stick")?;

    let mut clusters = 0.0;
    for (i, q) in state.clusters.iter().enumerate() {
        clusters -= q.kl_divergence(cluster_prior).map_err(|e| e.for_cluster(i))?;
    }
    let clusters = check(clusters, "cluster")?;

    let phi = expected_log_likelihoods(&state.clusters, data, parallel)?;
    let log_w: Vec<Vec<f64>> = state.stick_post.iter().map(|s| expected_log_weights(s)).collect();
    let resp = &state.responsibilities;
    let rows = map_indexed(data.len(), parallel, |n| {
        let lw = &log_w[groups.group_of[n]];
        (0..resp.ncols())
            .map(|c| {
                let r = resp[(n, c)];
                if r > 0.0 {
                    r * (lw[c] - r.ln() + phi[n][c])
                } else {
                    0.0
                }
            })
            .sum::<f64>()
    });
    let assignments = check(rows.iter().sum(), "assignment")?;

    let total = check(alpha + sticks + clusters + assignments, "total")?;
    Ok(FreeEnergy { total, alpha, sticks, clusters, assignments })
}

/// Outcome of [`VbModel::run`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: VBState,
    pub converged: bool,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

/// A fit in progress: data, configuration and the current variational state.
#[derive(Debug, Clone)]
pub struct VbModel<'a> {
    data: &'a Dataset,
    groups: LocationGroups,
    config: VBConfig,
    prior: NWParams,
    alpha_ref: f64,
    state: VBState,
    warnings: Vec<String>,
}

/// Responsibilities seeded by k-means++ on standardized features and locations.
pub fn kmeans_responsibilities(data: &Dataset, truncation: usize, clusters: usize, seed: u64) -> DMatrix<f64> {
    let mut rows: Vec<Vec<f64>> = data
        .features()
        .iter()
        .zip(data.locations())
        .map(|(y, x)| y.iter().chain(x.coords()).copied().collect())
        .collect();
    standardize(&mut rows);
    let labels = kmeans_labels(&rows, clusters.min(truncation), seed);
    soft_responsibilities(&labels, truncation)
}

/// 0.9 on the given label, the rest spread uniformly.
pub fn soft_responsibilities(labels: &[usize], truncation: usize) -> DMatrix<f64> {
    let rest = (1.0 - INIT_CONFIDENCE) / (truncation - 1) as f64;
    DMatrix::from_fn(labels.len(), truncation, |n, c| if c == labels[n] { INIT_CONFIDENCE } else { rest })
}

fn initial_width(config: &VBConfig, groups: &LocationGroups) -> f64 {
    if let Some(w) = config.initial_width {
        return w;
    }
    let dim = groups.locations[0].dim();
    let mut diag = 0.0;
    for j in 0..dim {
        let (lo, hi) = groups
            .locations
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x.coords()[j]), hi.max(x.coords()[j])));
        diag += (hi - lo) * (hi - lo);
    }
    let half = 0.5 * f64::sqrt(diag);
    if half > 0.0 {
        half
    } else {
        1.0
    }
}

/// Kernels centered at responsibility-weighted mean locations (or random draws in random mode).
pub fn initial_kernels(
    data: &Dataset,
    groups: &LocationGroups,
    config: &VBConfig,
    resp: &DMatrix<f64>,
) -> Result<Vec<KernelSpec>, VbError> {
    let width = initial_width(config, groups);
    let c_max = resp.ncols();
    let centers: Vec<Location> = match config.location_mode {
        LocationMode::Random => random_locations(&groups.locations, c_max, width, config.seed)
            .centers
            .into_iter()
            .map(Location::new)
            .collect::<Result<_, _>>()?,
        LocationMode::Optimized => {
            let dim = data.location_dim();
            (0..c_max)
                .map(|c| {
                    let mut acc = vec![0.0; dim];
                    let mut total = 0.0;
                    for (n, x) in data.locations().iter().enumerate() {
                        let r = resp[(n, c)];
                        total += r;
                        acc.iter_mut().zip(x.coords()).for_each(|(a, v)| *a += r * v);
                    }
                    if total > 0.0 {
                        acc.iter_mut().for_each(|a| *a /= total);
                    } else {
                        acc = groups.locations[0].coords().to_vec();
                    }
                    Location::new(acc)
                })
                .collect::<Result<_, _>>()?
        }
    };
    centers
        .into_iter()
        .map(|x| KernelSpec::new(config.kernel_family, x, width, config.kernel_floor).map_err(VbError::from))
        .collect()
}

impl<'a> VbModel<'a> {
    /// Default initialization: k-means++ responsibilities, weighted-mean centers.
    pub fn new(data: &'a Dataset, config: VBConfig) -> Result<Self, VbError> {
        config.validate()?;
        let k = config.init_clusters.unwrap_or(config.truncation);
        let resp = kmeans_responsibilities(data, config.truncation, k, config.seed);
        Self::from_responsibilities(data, config, resp)
    }

    /// Starts from the given responsibilities; kernels follow the configured initialization.
    pub fn from_responsibilities(data: &'a Dataset, config: VBConfig, resp: DMatrix<f64>) -> Result<Self, VbError> {
        config.validate()?;
        let groups = group_locations(data.locations())?;
        let kernels = initial_kernels(data, &groups, &config, &resp)?;
        let prior = NWParams::default_prior(data.features(), config.covariance)?;
        Self::from_parts(data, config, prior, resp, kernels)
    }

    /// Starts from explicit responsibilities, kernels and cluster prior.
    pub fn from_parts(
        data: &'a Dataset,
        config: VBConfig,
        prior: NWParams,
        resp: DMatrix<f64>,
        kernels: Vec<KernelSpec>,
    ) -> Result<Self, VbError> {
        config.validate()?;
        let c = config.truncation;
        if resp.nrows() != data.len() || resp.ncols() != c {
            return Err(VbError::Shape {
                what: "responsibility matrix",
                rows: data.len(),
                cols: c,
                got_rows: resp.nrows(),
                got_cols: resp.ncols(),
            });
        }
        if kernels.len() != c {
            return Err(PriorError::KernelCount { expected: c, got: kernels.len() }.into());
        }
        let groups = group_locations(data.locations())?;
        let mut warnings = Vec::new();
        if data.len() < c {
            warnings.push(format!("{} observations for truncation {c}", data.len()));
        }
        let alpha_ref = config.alpha_prior.mean();
        let clusters = update_clusters(&prior, &resp, data, config.parallel)?;
        let table = kernel_table(&kernels, &groups)?;
        let alpha_post = config.alpha_prior;
        let stick_post = update_sticks(&resp, &groups, &table, alpha_post.mean());
        let state = VBState {
            responsibilities: resp,
            stick_post,
            alpha_post,
            clusters,
            kernels,
            free_energy_trace: Vec::new(),
        };
        let mut model = Self { data, groups, config, prior, alpha_ref, state, warnings };
        let l0 = model.free_energy()?.total;
        let record = model.record(0, l0, false);
        model.state.free_energy_trace.push(record);
        Ok(model)
    }

    pub fn state(&self) -> &VBState {
        &self.state
    }

    pub fn groups(&self) -> &LocationGroups {
        &self.groups
    }

    pub fn config(&self) -> &VBConfig {
        &self.config
    }

    pub fn cluster_prior(&self) -> &NWParams {
        &self.prior
    }

    pub fn alpha_ref(&self) -> f64 {
        self.alpha_ref
    }

    pub fn into_state(self) -> VBState {
        self.state
    }

    pub fn free_energy(&self) -> Result<FreeEnergy, VbError> {
        free_energy(
            &self.state,
            self.data,
            &self.groups,
            &self.prior,
            &self.config.alpha_prior,
            self.alpha_ref,
            self.config.parallel,
        )
    }

    pub fn step_sticks(&mut self) -> Result<(), VbError> {
        let table = kernel_table(&self.state.kernels, &self.groups)?;
        self.state.stick_post =
            update_sticks(&self.state.responsibilities, &self.groups, &table, self.state.alpha_post.mean());
        Ok(())
    }

    pub fn step_alpha(&mut self) {
        self.state.alpha_post = update_alpha(&self.config.alpha_prior, &self.state.stick_post);
    }

    pub fn step_responsibilities(&mut self) -> Result<(), VbError> {
        let phi = expected_log_likelihoods(&self.state.clusters, self.data, self.config.parallel)?;
        self.state.responsibilities =
            update_responsibilities(&self.state.stick_post, &phi, &self.groups, self.config.parallel)?;
        Ok(())
    }

    pub fn step_clusters(&mut self) -> Result<(), VbError> {
        self.state.clusters =
            update_clusters(&self.prior, &self.state.responsibilities, self.data, self.config.parallel)?;
        Ok(())
    }

    /// The location objective for the current stick posteriors.
    pub fn location_problem(&self) -> LocationProblem<'_> {
        LocationProblem::new(
            &self.groups,
            &self.state.stick_post,
            self.alpha_ref,
            self.config.kernel_floor,
            self.config.shared_width,
            self.config.location_mode == LocationMode::Optimized,
        )
    }

    /// Re-optimizes kernel centers and widths. Returns whether anything changed.
    pub fn step_locations(&mut self) -> Result<bool, VbError> {
        if !self.config.learns_locations() {
            return Ok(false);
        }
        let start = LocationParams::from_kernels(&self.state.kernels, self.config.shared_width);
        let problem = self.location_problem();
        let best = optimize_locations(&problem, &start, self.config.location_budget)?;
        if best == start {
            return Ok(false);
        }
        best.apply(&mut self.state.kernels)?;
        Ok(true)
    }

    fn record(&self, iter: usize, free_energy: f64, locations_updated: bool) -> TraceRecord {
        TraceRecord {
            iter,
            free_energy,
            alpha_mean: self.state.alpha_mean(),
            active: self.state.active_count(),
            locations_updated,
        }
    }

    /// One full sweep; appends and returns its trace record.
    pub fn sweep(&mut self, iter: usize, with_locations: bool) -> Result<TraceRecord, VbError> {
        self.step_sticks()?;
        self.step_alpha();
        self.step_responsibilities()?;
        self.step_clusters()?;
        let moved = with_locations && self.step_locations()?;
        let l = self.free_energy()?.total;
        let record = self.record(iter, l, moved);
        self.state.free_energy_trace.push(record);
        Ok(record)
    }

    /// Sweeps until the relative free-energy change drops below tolerance.
    ///
    /// When locations are learned, convergence additionally requires the
    /// last sweep to have included a location update.
    pub fn run(mut self) -> Result<FitResult, VbError> {
        let learns = self.config.learns_locations();
        let every = self.config.location_every;
        let mut previous = self.state.free_energy_trace.last().map(|r| r.free_energy).unwrap_or(f64::NEG_INFINITY);
        let mut force_locations = false;
        let mut converged = false;
        let mut iterations = 0;
        for iter in 1..=self.config.max_iters {
            iterations = iter;
            let with_locations = learns && (force_locations || iter % every == 0);
            let record = self.sweep(iter, with_locations)?;
            let change = (record.free_energy - previous).abs();
            let small = change < self.config.free_energy_rel_tol * previous.abs().max(f64::MIN_POSITIVE);
            previous = record.free_energy;
            if small {
                if !learns || with_locations {
                    converged = true;
                    break;
                }
                force_locations = true;
            } else {
                force_locations = false;
            }
        }
        Ok(FitResult { state: self.state, converged, iterations, warnings: self.warnings })
    }
}

/// Fits the model with the default initialization.
pub fn fit(data: &Dataset, config: &VBConfig) -> Result<FitResult, VbError> {
    VbModel::new(data, config.clone())?.run()
}
