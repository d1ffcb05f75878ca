//! Kernel Pitman–Yor mixtures with truncated variational inference.

pub mod config;
pub mod data;
pub mod io;
pub mod kmeans;
pub mod lbfgs;
pub mod likelihood;
pub mod locations;
pub mod metrics;
mod par;
pub mod prior;
pub mod report;
pub mod special;
pub mod vb;

pub use data::Dataset;
pub use vb::{fit, FitResult, VBConfig, VBState, VbModel};
