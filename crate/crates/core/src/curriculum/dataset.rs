use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::Matrix;

/// Feature matrix plus integer class labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::dim("label count", features.rows(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Bounds {
                index: bad,
                len: n_classes,
            });
        }
        if !features.is_finite() {
            return Err(Error::Numeric("dataset features contain NaN or infinity".into()));
        }
        Ok(Dataset {
            features,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let features = self.features.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Dataset {
            features,
            labels,
            n_classes: self.n_classes,
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Per-column z-score parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fit on `features`. Zero-variance columns keep a unit scale so they map to 0.
    pub fn fit(features: &Matrix) -> Self {
        let mean = features.column_means();
        let n = features.rows();
        let mut var = vec![0.0; features.cols()];
        for row in features.row_iter() {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / (n.max(2) - 1) as f64).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn transform(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.mean.len() {
            return Err(Error::dim("standardizer width", self.mean.len(), features.cols()));
        }
        let mut out = features.clone();
        for r in 0..out.rows() {
            for ((x, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        Ok(out)
    }
}
