//! Dataset generation, stratified splits and the prepared curriculum.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{DataSource, ExperimentConfig, SplitSpec};
use crate::curriculum::ingest::{read_csv_path, IngestOptions};
use crate::curriculum::{build_plan, Dataset, Standardizer};
use crate::env::CurriculumData;
use crate::error::{Error, Result};
use crate::nncore::Matrix;

/// Gaussian clusters. Class `k` is centred at `(1 + k / dim)` on axis `k % dim`.
pub fn synth_blobs(n_classes: usize, n_per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if n_classes == 0 || n_per_class == 0 || dim == 0 {
        return Err(Error::Config("blob counts must be >= 1".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Config(format!("spread must be finite and >= 0, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = n_classes * n_per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n_classes {
        let mut mean = vec![0.0; dim];
        mean[k % dim] = 1.0 + (k / dim) as f64;
        for _ in 0..n_per_class {
            data.extend(mean.iter().map(|m| m + spread * normal.sample(&mut rng)));
            labels.push(k);
        }
    }
    Dataset::new(Matrix::from_vec(n, dim, data)?, labels, n_classes)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split. Each class is shuffled and cut by the fractions; with
/// `balance_train` the train part of every class is cut to the smallest one.
pub fn split(dataset: &Dataset, spec: &SplitSpec, seed: u64) -> Result<SplitIndices> {
    spec.validate()?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes];
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = Vec::new();
    for (class, rows) in by_class.iter_mut().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < 5 {
            return Err(Error::Config(format!(
                "class {class} has {} rows, need at least 5 to split",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        let n = rows.len() as f64;
        let n_train = (spec.train * n).round() as usize;
        let n_val = (spec.validation * n).round() as usize;
        let (tr, rest) = rows.split_at(n_train);
        let (va, te) = rest.split_at(n_val.min(rest.len()));
        parts.push((tr.to_vec(), va.to_vec(), te.to_vec()));
    }
    if spec.balance_train {
        let smallest = parts.iter().map(|p| p.0.len()).min().unwrap_or(0);
        for p in &mut parts {
            p.0.truncate(smallest);
        }
    }
    let mut out = SplitIndices {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (tr, va, te) in parts {
        out.train.extend(tr);
        out.validation.extend(va);
        out.test.extend(te);
    }
    out.train.sort_unstable();
    out.validation.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Read or generate the configured dataset. Returns the data and feature names.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Vec<String>)> {
    match &cfg.dataset {
        DataSource::Csv {
            path,
            label_column,
            one_hot,
        } => {
            let opts = IngestOptions {
                label_column: label_column.clone(),
                one_hot: one_hot.clone(),
            };
            let ing = read_csv_path(path, &opts)?;
            Ok((ing.dataset, ing.feature_names))
        }
        DataSource::Synthetic(s) => {
            let d = synth_blobs(s.n_classes, s.n_per_class, s.dim, s.spread, cfg.seeds.data())?;
            let names = (0..s.dim).map(|i| format!("x{i}")).collect();
            Ok((d, names))
        }
    }
}

/// Split, standardize with train statistics, and build the curriculum plan.
pub fn prepare_data(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<CurriculumData> {
    let cfg = cfg.resolved();
    let idx = split(dataset, &cfg.split, cfg.seeds.data())?;
    let train = dataset.subset(&idx.train)?;
    let scaler = Standardizer::fit(&train.features);
    let scale = |d: Dataset| -> Result<Dataset> {
        let features = scaler.transform(&d.features)?;
        Dataset::new(features, d.labels, d.n_classes)
    };
    let train = scale(train)?;
    let validation = scale(dataset.subset(&idx.validation)?)?;
    let test = scale(dataset.subset(&idx.test)?)?;
    let plan = build_plan(&train, &cfg.curriculum)?;
    CurriculumData::new(train, validation, test, plan)
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Arc<CurriculumData>> {
    let (dataset, _) = load_dataset(cfg)?;
    Ok(Arc::new(prepare_data(&dataset, cfg)?))
}
