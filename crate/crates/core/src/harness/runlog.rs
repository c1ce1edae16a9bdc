//! JSON-lines run logs and the per-iteration policy table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::EpisodeRecord;
use crate::error::{Error, Result};

/// Final line of a run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub record: String,
    pub experiment: String,
    pub best_test_acc: Option<f64>,
    pub best_val_acc: Option<f64>,
    pub best_iter: Option<usize>,
    pub config_hash: String,
    pub meta: BTreeMap<String, Value>,
}

impl RunSummary {
    pub fn new(experiment: &str, config_hash: &str) -> Self {
        RunSummary {
            record: "summary".into(),
            experiment: experiment.into(),
            best_test_acc: None,
            best_val_acc: None,
            best_iter: None,
            config_hash: config_hash.into(),
            meta: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub records: Vec<EpisodeRecord>,
    pub summary: RunSummary,
}

impl RunLog {
    /// Stamp the config hash on every record.
    pub fn new(mut records: Vec<EpisodeRecord>, summary: RunSummary) -> Self {
        for r in &mut records {
            r.config_hash = Some(summary.config_hash.clone());
        }
        RunLog { records, summary }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.summary)?);
        out.push('\n');
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut summary = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let v: Value = serde_json::from_str(line)?;
            if v.get("record").and_then(Value::as_str) == Some("summary") {
                summary = Some(serde_json::from_value(v)?);
            } else {
                records.push(serde_json::from_value(v)?);
            }
        }
        let summary = summary.ok_or_else(|| Error::Precondition("run log has no summary record".into()))?;
        Ok(RunLog { records, summary })
    }
}

/// Serialize any records as JSON lines (used for training logs).
pub fn records_to_jsonl(records: &[EpisodeRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub iter: usize,
    pub center_or_action: Option<usize>,
    pub width: Option<usize>,
    pub reward: f64,
    pub test_acc: f64,
}

pub fn policy_rows(records: &[EpisodeRecord]) -> Vec<PolicyRow> {
    let mut rows: Vec<PolicyRow> = records
        .iter()
        .map(|r| PolicyRow {
            iter: r.iter,
            center_or_action: r.center.or(r.action_id),
            width: r.width,
            reward: r.reward,
            test_acc: r.test_acc,
        })
        .collect();
    rows.sort_by_key(|r| r.iter);
    rows
}

/// CSV with columns `iter, center_or_action, width, reward, test_acc`, sorted by iteration.
pub fn emit_policy_table(records: &[EpisodeRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Precondition("policy table needs at least one record".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in policy_rows(records) {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_policy_table(text: &str) -> Result<Vec<PolicyRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Selection, StepOutcome};

    fn rec(iter: usize, sel: Selection) -> EpisodeRecord {
        let o = StepOutcome {
            reward: 0.1 * iter as f64 - 0.3,
            train_acc: 0.5,
            val_acc: 0.25,
            test_acc: 1.0 / (iter + 3) as f64,
        };
        EpisodeRecord::new(0, iter, sel, &o, "greedy")
    }

    #[test]
    fn jsonl_round_trip_and_hash_stamp() {
        let records = vec![rec(0, Selection::Window { center: 3, width: 2 }), rec(1, Selection::Batch(4))];
        let mut s = RunSummary::new("train", "abc");
        s.best_test_acc = Some(0.75);
        s.meta.insert("lr_ratio".into(), Value::from(10.0));
        let log = RunLog::new(records, s);
        assert!(log.records.iter().all(|r| r.config_hash.as_deref() == Some("abc")));
        let text = log.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(RunLog::from_jsonl(&text).unwrap(), log);
    }

    #[test]
    fn table_rows_sorted_and_round_trip() {
        let records: Vec<EpisodeRecord> = [4, 0, 2, 1, 3]
            .iter()
            .map(|&i| rec(i, Selection::Window { center: i * 7, width: i }))
            .collect();
        let text = emit_policy_table(&records).unwrap();
        assert!(text.starts_with("iter,center_or_action,width,reward,test_acc\n"));
        let rows = parse_policy_table(&text).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows, policy_rows(&records));
        assert!(rows.windows(2).all(|w| w[0].iter < w[1].iter));
        assert!(emit_policy_table(&[]).is_err());
    }
}
