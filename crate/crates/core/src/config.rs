//! Flat `key = value` run configuration.
//!
//! The same [`RunConfig::set`] handles file entries and command-line
//! overrides, so every key can be given either way.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::io::{ColorMode, ColumnRef};
use crate::likelihood::CovarianceKind;
use crate::prior::KernelFamily;
use crate::special::GammaParams;
use crate::vb::{LocationMode, VBConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}` ({reason})")]
    Value { key: String, value: String, reason: String },
    #[error("{path}: {reason}")]
    Read { path: String, reason: String },
}

/// Model settings plus the input and output options shared by the subcommands.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub vb: VBConfig,
    pub features: Vec<ColumnRef>,
    pub locations: Vec<ColumnRef>,
    pub label: Option<ColumnRef>,
    pub header: bool,
    pub color: ColorMode,
    pub window_stats: bool,
    pub write_responsibilities: bool,
    /// Worker threads; 0 lets the runtime decide.
    pub jobs: usize,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            vb: VBConfig::default(),
            features: Vec::new(),
            locations: Vec::new(),
            label: None,
            header: true,
            color: ColorMode::Rgb,
            window_stats: false,
            write_responsibilities: false,
            jobs: 0,
            deterministic: false,
        }
    }
}

pub const KEYS: &[&str] = &[
    "truncation",
    "alpha_shape",
    "alpha_rate",
    "max_iters",
    "tol",
    "seed",
    "location_mode",
    "shared_width",
    "kernel",
    "kernel_floor",
    "initial_width",
    "location_every",
    "location_budget",
    "covariance",
    "init_clusters",
    "features",
    "locations",
    "label",
    "header",
    "color",
    "feature",
    "responsibilities",
    "jobs",
    "deterministic",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(invalid(key, value, "expected true or false")),
    }
}

fn invalid(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::Value { key: key.to_string(), value: value.to_string(), reason: reason.to_string() }
}

// `none` or an empty value clears an optional setting.
fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: Display,
{
    if value.is_empty() || value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    /// Applies one setting. Keys accept `-` in place of `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let k = key.as_str();
        let vb = &mut self.vb;
        match k {
            "truncation" => vb.truncation = parse(k, value)?,
            "alpha_shape" => vb.alpha_prior = GammaParams { shape: parse(k, value)?, ..vb.alpha_prior },
            "alpha_rate" => vb.alpha_prior = GammaParams { rate: parse(k, value)?, ..vb.alpha_prior },
            "max_iters" => vb.max_iters = parse(k, value)?,
            "tol" => vb.free_energy_rel_tol = parse(k, value)?,
            "seed" => vb.seed = parse(k, value)?,
            "location_mode" => {
                vb.location_mode = match value.to_ascii_lowercase().as_str() {
                    "random" => LocationMode::Random,
                    "optimized" => LocationMode::Optimized,
                    _ => return Err(invalid(k, value, "expected random or optimized")),
                }
            }
            "shared_width" => vb.shared_width = parse_bool(k, value)?,
            "kernel" => {
                vb.kernel_family = match value.to_ascii_lowercase().as_str() {
                    "rbf" => KernelFamily::Rbf,
                    "unit" | "dp" => KernelFamily::Unit,
                    _ => return Err(invalid(k, value, "expected rbf or unit")),
                }
            }
            "kernel_floor" => vb.kernel_floor = parse(k, value)?,
            "initial_width" => vb.initial_width = optional(k, value)?,
            "location_every" => vb.location_every = parse(k, value)?,
            "location_budget" => vb.location_budget = parse(k, value)?,
            "covariance" => {
                vb.covariance = match value.to_ascii_lowercase().as_str() {
                    "full" => CovarianceKind::Full,
                    "diagonal" | "diag" => CovarianceKind::Diagonal,
                    _ => return Err(invalid(k, value, "expected full or diagonal")),
                }
            }
            "init_clusters" => vb.init_clusters = optional(k, value)?,
            "features" => self.features = ColumnRef::parse_list(value),
            "locations" => self.locations = ColumnRef::parse_list(value),
            "label" => {
                self.label = (!value.is_empty() && !value.eq_ignore_ascii_case("none")).then(|| ColumnRef::parse(value))
            }
            "header" => self.header = parse_bool(k, value)?,
            "color" => {
                self.color = match value.to_ascii_lowercase().as_str() {
                    "rgb" => ColorMode::Rgb,
                    "gray" | "grey" => ColorMode::Gray,
                    _ => return Err(invalid(k, value, "expected rgb or gray")),
                }
            }
            "feature" => {
                self.window_stats = match value.to_ascii_lowercase().as_str() {
                    "raw" | "rgb" | "gray" => false,
                    "window_mean_std" | "window-mean-std" => true,
                    _ => return Err(invalid(k, value, "expected raw or window-mean-std")),
                }
            }
            "responsibilities" => self.write_responsibilities = parse_bool(k, value)?,
            "jobs" => self.jobs = parse(k, value)?,
            "deterministic" => self.deterministic = parse_bool(k, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies every `key = value` line; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
            if key.trim().is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), reason: e.to_string() })?;
        self.apply_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        config.apply_text(text)?;
        Ok(config)
    }
}
