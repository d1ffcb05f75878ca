//! Summary of a finished fit.

use serde::{Deserialize, Serialize};

use crate::metrics::{adjusted_rand_index, normalized_mutual_info, MetricError};
use crate::vb::FitResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub ari: f64,
    pub nmi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Row argmax of the responsibilities, 1-based, lowest index on ties.
    pub hard_labels: Vec<usize>,
    pub active_clusters: usize,
    pub free_energy: f64,
    pub alpha_mean: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_secs: f64,
    pub metrics: Option<Scores>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(fit: &FitResult, truth: Option<&[usize]>, wall_time_secs: f64) -> Result<Self, MetricError> {
        let labels = fit.state.hard_labels();
        let metrics = truth
            .map(|t| {
                Ok::<_, MetricError>(Scores {
                    ari: adjusted_rand_index(&labels, t)?,
                    nmi: normalized_mutual_info(&labels, t)?,
                })
            })
            .transpose()?;
        Ok(Self {
            hard_labels: labels.iter().map(|l| l + 1).collect(),
            active_clusters: fit.state.active_count(),
            free_energy: fit.state.free_energy_trace.last().map_or(f64::NAN, |r| r.free_energy),
            alpha_mean: fit.state.alpha_mean(),
            iterations: fit.iterations,
            converged: fit.converged,
            wall_time_secs,
            metrics,
            warnings: fit.warnings.clone(),
        })
    }
}
