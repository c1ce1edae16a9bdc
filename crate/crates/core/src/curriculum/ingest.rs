//! CSV ingestion: one named label column, numeric features, optional one-hot expansion.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nncore::Matrix;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub label_column: String,
    /// Columns expanded to one indicator per category, categories in lexicographic order.
    pub one_hot: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ingested {
    pub dataset: Dataset,
    pub feature_names: Vec<String>,
    /// Original label text for each class id.
    pub class_names: Vec<String>,
}

pub fn read_csv_path(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Ingested> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, opts)
}

/// Parse a headed CSV. Empty cells are rejected. Labels that all parse as
/// non-negative integers keep their value as class id; otherwise label strings
/// are numbered in lexicographic order.
pub fn read_csv<R: Read>(reader: R, opts: &IngestOptions) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let label_idx = headers
        .iter()
        .position(|h| *h == opts.label_column)
        .ok_or_else(|| Error::Config(format!("label column `{}` not found in header", opts.label_column)))?;
    for col in &opts.one_hot {
        if !headers.contains(col) {
            return Err(Error::Config(format!("one-hot column `{col}` not found in header")));
        }
        if *col == opts.label_column {
            return Err(Error::Config("the label column cannot be one-hot expanded".into()));
        }
    }

    let mut records: Vec<Vec<String>> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Config(format!("row {} has {} fields, header has {}", line + 1, rec.len(), headers.len())));
        }
        if let Some(col) = rec.iter().position(str::is_empty) {
            return Err(Error::Config(format!(
                "missing value in row {} column `{}`",
                line + 1,
                headers[col]
            )));
        }
        records.push(rec.iter().map(str::to_owned).collect());
    }
    if records.is_empty() {
        return Err(Error::Config("CSV has no data rows".into()));
    }

    let mut categories: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for col in &opts.one_hot {
        let idx = headers.iter().position(|h| h == col).unwrap();
        let set: BTreeSet<&str> = records.iter().map(|r| r[idx].as_str()).collect();
        categories.insert(idx, set.into_iter().map(str::to_owned).collect());
    }

    let mut feature_names = Vec::new();
    for (idx, name) in headers.iter().enumerate() {
        if idx == label_idx {
            continue;
        }
        match categories.get(&idx) {
            Some(cats) => feature_names.extend(cats.iter().map(|c| format!("{name}={c}"))),
            None => feature_names.push(name.clone()),
        }
    }

    let mut data = Vec::with_capacity(records.len() * feature_names.len());
    for (line, rec) in records.iter().enumerate() {
        for (idx, cell) in rec.iter().enumerate() {
            if idx == label_idx {
                continue;
            }
            match categories.get(&idx) {
                Some(cats) => data.extend(cats.iter().map(|c| if c == cell { 1.0 } else { 0.0 })),
                None => {
                    let v: f64 = cell.parse().map_err(|_| {
                        Error::Config(format!(
                            "non-numeric value `{cell}` in row {} column `{}`",
                            line + 1,
                            headers[idx]
                        ))
                    })?;
                    data.push(v);
                }
            }
        }
    }

    let raw_labels: Vec<&str> = records.iter().map(|r| r[label_idx].as_str()).collect();
    let numeric: Option<Vec<usize>> = raw_labels.iter().map(|l| l.parse::<usize>().ok()).collect();
    let (labels, class_names) = match numeric {
        Some(ids) => {
            let n = ids.iter().max().map_or(0, |m| m + 1);
            (ids, (0..n).map(|i| i.to_string()).collect())
        }
        None => {
            let names: Vec<String> = raw_labels
                .iter()
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .map(str::to_owned)
                .collect();
            let ids = raw_labels
                .iter()
                .map(|l| names.iter().position(|n| n == l).unwrap())
                .collect();
            (ids, names)
        }
    };

    let features = Matrix::from_vec(records.len(), feature_names.len(), data)?;
    let dataset = Dataset::new(features, labels, class_names.len())?;
    Ok(Ingested {
        dataset,
        feature_names,
        class_names,
    })
}

/// Write numeric features plus a trailing `label` column.
pub fn write_csv<W: Write>(writer: W, dataset: &Dataset, feature_names: &[String]) -> Result<()> {
    if feature_names.len() != dataset.n_features() {
        return Err(Error::dim("feature name count", dataset.n_features(), feature_names.len()));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = feature_names.iter().map(String::as_str).collect();
    header.push("label");
    w.write_record(&header)?;
    for (row, label) in dataset.features.row_iter().zip(&dataset.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
