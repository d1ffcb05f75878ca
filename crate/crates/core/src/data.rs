//! Observations paired with predictor locations.

use nalgebra::DVector;
use thiserror::Error;

use crate::prior::{Location, PriorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("dataset is empty")]
    Empty,
    #[error("{features} feature rows but {locations} locations")]
    RowCount { features: usize, locations: usize },
    #[error("row {row}: expected {expected} {what}, got {got}")]
    Ragged { row: usize, what: &'static str, expected: usize, got: usize },
    #[error("row {row}: non-finite feature value")]
    NonFinite { row: usize },
    #[error("{labels} labels for {rows} rows")]
    LabelCount { labels: usize, rows: usize },
    #[error(transparent)]
    Location(#[from] PriorError),
}

/// N feature vectors y_n with their locations x_n.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<DVector<f64>>,
    locations: Vec<Location>,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(features: Vec<DVector<f64>>, locations: Vec<Location>) -> Result<Self, DataError> {
        if features.is_empty() {
            return Err(DataError::Empty);
        }
        if features.len() != locations.len() {
            return Err(DataError::RowCount { features: features.len(), locations: locations.len() });
        }
        let f = features[0].len();
        let d = locations[0].dim();
        for (row, (y, x)) in features.iter().zip(&locations).enumerate() {
            if y.len() != f {
                return Err(DataError::Ragged { row, what: "features", expected: f, got: y.len() });
            }
            if x.dim() != d {
                return Err(DataError::Ragged { row, what: "location coordinates", expected: d, got: x.dim() });
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFinite { row });
            }
        }
        if f == 0 {
            return Err(DataError::Ragged { row: 0, what: "features", expected: 1, got: 0 });
        }
        Ok(Self { features, locations, labels: None })
    }

    /// Builds a dataset from row-major feature and location slices.
    pub fn from_rows(features: &[Vec<f64>], locations: &[Vec<f64>]) -> Result<Self, DataError> {
        let feats = features.iter().map(|r| DVector::from_column_slice(r)).collect();
        let locs = locations
            .iter()
            .map(|r| Location::new(r.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(feats, locs)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self, DataError> {
        if labels.len() != self.len() {
            return Err(DataError::LabelCount { labels: labels.len(), rows: self.len() });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn location_dim(&self) -> usize {
        self.locations[0].dim()
    }

    pub fn features(&self) -> &[DVector<f64>] {
        &self.features
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Returns the dataset with rows reordered so that new row `i` is old row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            features: order.iter().map(|&i| self.features[i].clone()).collect(),
            locations: order.iter().map(|&i| self.locations[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| order.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Per-axis (min, max) of the locations.
    pub fn location_bounds(&self) -> Vec<(f64, f64)> {
        let d = self.location_dim();
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
        for x in &self.locations {
            for (b, &c) in bounds.iter_mut().zip(x.coords()) {
                b.0 = b.0.min(c);
                b.1 = b.1.max(c);
            }
        }
        bounds
    }

    /// Length of the diagonal of the locations' bounding box.
    pub fn lattice_diagonal(&self) -> f64 {
        self.location_bounds().iter().map(|(lo, hi)| (hi - lo) * (hi - lo)).sum::<f64>().sqrt()
    }
}
