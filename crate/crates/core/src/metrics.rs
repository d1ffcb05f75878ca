//! Partition agreement scores.

use std::collections::HashMap;
use std::hash::Hash;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("labelings have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

struct Contingency {
    cells: Vec<f64>,
    rows: Vec<f64>,
    cols: Vec<f64>,
    n: f64,
}

fn contingency<A: Eq + Hash, B: Eq + Hash>(a: &[A], b: &[B]) -> Result<Contingency, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    let (ra, na) = dense_codes(a);
    let (rb, nb) = dense_codes(b);
    let mut cells = vec![0.0; na * nb];
    let mut rows = vec![0.0; na];
    let mut cols = vec![0.0; nb];
    for (&i, &j) in ra.iter().zip(&rb) {
        cells[i * nb + j] += 1.0;
        rows[i] += 1.0;
        cols[j] += 1.0;
    }
    Ok(Contingency { cells, rows, cols, n: a.len() as f64 })
}

fn dense_codes<T: Eq + Hash>(xs: &[T]) -> (Vec<usize>, usize) {
    let mut seen: HashMap<&T, usize> = HashMap::new();
    let codes = xs
        .iter()
        .map(|x| {
            let next = seen.len();
            *seen.entry(x).or_insert(next)
        })
        .collect();
    (codes, seen.len())
}

/// Adjusted Rand index. When the expected and maximal indices coincide
/// (both partitions trivial) the result is 1.
pub fn adjusted_rand_index<A, B>(a: &[A], b: &[B]) -> Result<f64, MetricError>
where
    A: Eq + Hash,
    B: Eq + Hash,
{
    let t = contingency(a, b)?;
    // exact integer pair counts, so the one division at the end is the only rounding
    let pairs = |x: &f64| -> i128 {
        let x = *x as i128;
        x * (x - 1) / 2
    };
    let index: i128 = t.cells.iter().map(pairs).sum();
    let sa: i128 = t.rows.iter().map(pairs).sum();
    let sb: i128 = t.cols.iter().map(pairs).sum();
    let total = pairs(&t.n);
    let num = 2 * (index * total - sa * sb);
    let den = (sa + sb) * total - 2 * sa * sb;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    counts.iter().filter(|&&c| c > 0.0).map(|&c| -(c / n) * (c / n).ln()).sum()
}

/// Mutual information normalized by the arithmetic mean of the two
/// entropies. Two single-cluster partitions score 1; a single-cluster
/// partition against a non-trivial one scores 0.
pub fn normalized_mutual_info<A, B>(a: &[A], b: &[B]) -> Result<f64, MetricError>
where
    A: Eq + Hash,
    B: Eq + Hash,
{
    let t = contingency(a, b)?;
    if t.n == 0.0 {
        return Ok(1.0);
    }
    let (ha, hb) = (entropy(&t.rows, t.n), entropy(&t.cols, t.n));
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    let nb = t.cols.len();
    let mut mi = 0.0;
    for (i, &ri) in t.rows.iter().enumerate() {
        for (j, &cj) in t.cols.iter().enumerate() {
            let nij = t.cells[i * nb + j];
            if nij > 0.0 {
                mi += nij / t.n * (t.n * nij / (ri * cj)).ln();
            }
        }
    }
    Ok((mi / (0.5 * (ha + hb))).clamp(0.0, 1.0))
}
