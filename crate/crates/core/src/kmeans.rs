//! Seeded k-means++ used to initialize responsibilities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LLOYD_ITERS: usize = 25;
const RESTARTS: u64 = 10;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Standardizes each column to zero mean and unit variance (constant columns are zeroed).
pub fn standardize(rows: &mut [Vec<f64>]) {
    let Some(first) = rows.first() else { return };
    let n = rows.len() as f64;
    for j in 0..first.len() {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for r in rows.iter_mut() {
            r[j] = if sd > 0.0 { (r[j] - mean) / sd } else { 0.0 };
        }
    }
}

/// Best of several k-means++ runs by within-cluster sum of squares; returns a label in `0..k` per row.
pub fn kmeans_labels(rows: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let mut best = (f64::INFINITY, Vec::new());
    for restart in 0..RESTARTS {
        let (inertia, labels) = kmeans_once(rows, k, seed.wrapping_mul(RESTARTS).wrapping_add(restart));
        if inertia < best.0 || best.1.is_empty() {
            best = (inertia, labels);
        }
    }
    best.1
}

fn kmeans_once(rows: &[Vec<f64>], k: usize, seed: u64) -> (f64, Vec<usize>) {
    let n = rows.len();
    if n == 0 || k == 0 {
        return (0.0, vec![0; n]);
    }
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = vec![rows[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(rows[next].clone());
        let c = centers.last().unwrap();
        for (d, r) in nearest.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, c));
        }
    }

    let assign = |centers: &[Vec<f64>]| -> Vec<usize> {
        rows.iter()
            .map(|r| {
                let mut best = (0, f64::INFINITY);
                for (j, c) in centers.iter().enumerate() {
                    let d = sq_dist(r, c);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best.0
            })
            .collect()
    };
    let mut labels = assign(&centers);
    for _ in 0..LLOYD_ITERS {
        let dim = rows[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in rows.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(r).for_each(|(s, v)| *s += v);
        }
        for ((c, s), &m) in centers.iter_mut().zip(sums).zip(&counts) {
            if m > 0 {
                *c = s.into_iter().map(|v| v / m as f64).collect();
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    let inertia = rows.iter().zip(&labels).map(|(r, &l)| sq_dist(r, &centers[l])).sum();
    (inertia, labels)
}
