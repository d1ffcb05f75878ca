#![allow(dead_code)]

pub mod dp_oracle;

use kpyp::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian blobs in `dim` features with `groups` distinct locations in `[0,1]^loc_dim`.
pub fn random_dataset(seed: u64, n: usize, dim: usize, blobs: usize, groups: usize, loc_dim: usize) -> Dataset {
    let mut r = rng(seed);
    let centers: Vec<Vec<f64>> = (0..blobs).map(|_| (0..dim).map(|_| r.random_range(-5.0..5.0)).collect()).collect();
    let sites: Vec<Vec<f64>> = (0..groups).map(|_| (0..loc_dim).map(|_| r.random::<f64>()).collect()).collect();
    let mut features = Vec::with_capacity(n);
    let mut locations = Vec::with_capacity(n);
    for i in 0..n {
        let c = &centers[i % blobs];
        features.push(c.iter().map(|m| {
            let z: f64 = StandardNormal.sample(&mut r);
            m + z
        }).collect::<Vec<f64>>());
        locations.push(sites[r.random_range(0..groups)].clone());
    }
    Dataset::from_rows(&features, &locations).unwrap()
}

/// Random row-stochastic N×C matrix with entries bounded away from zero.
pub fn random_responsibilities(seed: u64, n: usize, c: usize) -> nalgebra::DMatrix<f64> {
    let mut r = rng(seed);
    let mut m = nalgebra::DMatrix::from_fn(n, c, |_, _| 0.05 + r.random::<f64>());
    for mut row in m.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    m
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
