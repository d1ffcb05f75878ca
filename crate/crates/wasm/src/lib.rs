//! Browser bindings: prior urn trajectories, stick moments and small-image segmentation.
//!
//! The exported functions are thin wrappers over plain Rust functions so the
//! logic can be tested on the host.

use kpyp::io::{image_dataset, label_color, Image, ImageFeatures};
use kpyp::prior::{kpyp_stick_moments, ksbp_stick_moments, mean_urn_path, UrnPath, DEFAULT_KERNEL_FLOOR};
use kpyp::special::GammaParams;
use kpyp::{fit, VBConfig};
use wasm_bindgen::prelude::*;

/// Mean number of clusters after each draw, averaged over `paths` runs.
pub fn urn_curve(
    prior: &str,
    alpha: f64,
    discount: f64,
    width: f64,
    draws: usize,
    paths: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let path = match prior {
        "dp" => UrnPath::Dp,
        "pyp" => UrnPath::Pyp { discount },
        "kpyp" => UrnPath::Kpyp { width, dim: 2, floor: DEFAULT_KERNEL_FLOOR },
        other => return Err(format!("unknown prior '{other}'")),
    };
    mean_urn_path(&path, alpha, draws, paths, seed).map_err(|e| e.to_string())
}

/// For each kernel value: `[kpyp mean, kpyp var, ksbp mean, ksbp var]`, flattened.
pub fn moment_table(kernel_values: &[f64], alpha: f64, c: usize) -> Result<Vec<f64>, String> {
    let mut out = Vec::with_capacity(kernel_values.len() * 4);
    for &k in kernel_values {
        let (km, kv) = kpyp_stick_moments(k, alpha, c).map_err(|e| e.to_string())?;
        let (sm, sv) = ksbp_stick_moments(k, alpha).map_err(|e| e.to_string())?;
        out.extend([km, kv, sm, sv]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub struct Segmentation {
    rgba: Vec<u8>,
    clusters: usize,
    iterations: usize,
    converged: bool,
    alpha: f64,
}

#[wasm_bindgen]
impl Segmentation {
    /// Label map as RGBA bytes, same size as the input.
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn clusters(&self) -> usize {
        self.clusters
    }

    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    #[wasm_bindgen(getter)]
    pub fn converged(&self) -> bool {
        self.converged
    }

    #[wasm_bindgen(getter)]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Fits a KPYP mixture to an RGBA buffer. `alpha` sets the mean of a fairly
/// tight Gamma prior on the concentration (a vague one runs away on flat regions).
pub fn segment_rgba(
    rgba: &[u8],
    width: usize,
    height: usize,
    truncation: usize,
    alpha: f64,
    max_iters: usize,
    seed: u64,
) -> Result<Segmentation, String> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(format!("alpha must be positive, got {alpha}"));
    }
    let image = Image::from_rgba(width, height, rgba).map_err(|e| e.to_string())?;
    let data = image_dataset(&image, ImageFeatures::default()).map_err(|e| e.to_string())?;
    let config = VBConfig {
        truncation,
        alpha_prior: GammaParams { shape: 1000.0, rate: 1000.0 / alpha },
        max_iters,
        seed,
        parallel: false,
        ..Default::default()
    };
    let result = fit(&data, &config).map_err(|e| e.to_string())?;
    let labels = result.state.hard_labels();
    let rgba = labels.iter().flat_map(|&l| {
        let [r, g, b] = label_color(l);
        [r, g, b, 255]
    });
    Ok(Segmentation {
        rgba: rgba.collect(),
        clusters: result.state.active_count(),
        iterations: result.iterations,
        converged: result.converged,
        alpha: result.state.alpha_mean(),
    })
}

#[wasm_bindgen(js_name = urnCurve)]
pub fn urn_curve_js(
    prior: &str,
    alpha: f64,
    discount: f64,
    width: f64,
    draws: usize,
    paths: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    urn_curve(prior, alpha, discount, width, draws, paths, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = momentTable)]
pub fn moment_table_js(kernel_values: &[f64], alpha: f64, c: usize) -> Result<Vec<f64>, JsError> {
    moment_table(kernel_values, alpha, c).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = segment)]
pub fn segment_js(
    rgba: &[u8],
    width: usize,
    height: usize,
    truncation: usize,
    alpha: f64,
    max_iters: usize,
    seed: u32,
) -> Result<Segmentation, JsError> {
    segment_rgba(rgba, width, height, truncation, alpha, max_iters, seed.into()).map_err(|e| JsError::new(&e))
}
