//! Difficulty scoring and curriculum batch formation.
//!
//! Rows are optionally embedded with a denoising autoencoder, scored by
//! Mahalanobis distance to the sample mean (or by cosine dissimilarity to a
//! reference direction), sorted easy-to-hard and split into batches.

mod dae;
mod dataset;
pub mod ingest;
mod moments;
mod plan;

pub use dae::{train_dae, Autoencoder, DaeConfig};
pub use dataset::{Dataset, Standardizer};
pub use moments::{cosine_scores, fit_moments, MomentModel, Ridge};
pub use plan::{BatchMode, BatchPlan};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    Mahalanobis,
    Cosine,
}

impl std::str::FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mahalanobis" => Ok(Scorer::Mahalanobis),
            "cosine" => Ok(Scorer::Cosine),
            other => Err(Error::Config(format!("unknown scorer `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSpec {
    pub scorer: Scorer,
    /// Embed with a denoising autoencoder before scoring.
    pub use_dae: bool,
    pub dae: DaeConfig,
    pub n_batches: usize,
    pub mode: BatchMode,
}

impl Default for CurriculumSpec {
    fn default() -> Self {
        CurriculumSpec {
            scorer: Scorer::Mahalanobis,
            use_dae: true,
            dae: DaeConfig::default(),
            n_batches: 100,
            mode: BatchMode::Disjoint,
        }
    }
}

/// Cosine reference: column mean of the representation, or the all-ones
/// direction when that mean vanishes (as it does for standardized raw features).
pub fn default_cosine_reference(rep: &Matrix) -> Vec<f64> {
    let mean = rep.column_means();
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-8 {
        mean
    } else {
        vec![1.0; rep.cols()]
    }
}

/// Difficulty score per row of `train` (expected standardized).
pub fn score_dataset(train: &Dataset, spec: &CurriculumSpec) -> Result<Vec<f64>> {
    let rep = if spec.use_dae {
        train_dae(train, &spec.dae)?.encode(&train.features)?
    } else {
        train.features.clone()
    };
    match spec.scorer {
        Scorer::Mahalanobis => fit_moments(&rep, Ridge::Auto)?.score_rows(&rep),
        Scorer::Cosine => cosine_scores(&rep, &default_cosine_reference(&rep)),
    }
}

/// Score, sort and split the training set.
pub fn build_plan(train: &Dataset, spec: &CurriculumSpec) -> Result<BatchPlan> {
    BatchPlan::new(score_dataset(train, spec)?, spec.n_batches, spec.mode)
}
