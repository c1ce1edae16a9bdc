use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// Contiguous non-overlapping chunks of the sorted order.
    Disjoint,
    /// `B_0 ⊂ B_1 ⊂ ... ⊂ B_{N-1}`, the last being the whole set.
    Cumulative,
}

impl std::str::FromStr for BatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disjoint" | "1" => Ok(BatchMode::Disjoint),
            "cumulative" | "2" => Ok(BatchMode::Cumulative),
            other => Err(Error::Config(format!("unknown batch mode `{other}`"))),
        }
    }
}

/// Training indices sorted easy-to-hard and split into `n_batches` batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub mode: BatchMode,
    pub n_batches: usize,
    /// Permutation of `0..n` sorted ascending by score.
    pub order: Vec<usize>,
    /// Score of each original index (not permuted).
    pub scores: Vec<f64>,
}

impl BatchPlan {
    /// Sort by score (stable on original index) and fix the batch layout.
    pub fn new(scores: Vec<f64>, n_batches: usize, mode: BatchMode) -> Result<Self> {
        let n = scores.len();
        if n_batches == 0 {
            return Err(Error::Config("number of batches must be >= 1".into()));
        }
        if n_batches > n {
            return Err(Error::Config(format!(
                "cannot form {n_batches} batches from {n} training rows"
            )));
        }
        if let Some(i) = scores.iter().position(|s| s.is_nan()) {
            return Err(Error::Numeric(format!("score for row {i} is NaN")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        Ok(BatchPlan {
            mode,
            n_batches,
            order,
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Exclusive end position of batch `i` in the cumulative layout: `ceil((i+1) n / N)`.
    fn boundary(&self, i: usize) -> usize {
        let n = self.order.len();
        (i * n).div_ceil(self.n_batches)
    }

    /// Positions (into `order`) covered by batch `i`.
    pub fn batch_range(&self, i: usize) -> Result<std::ops::Range<usize>> {
        if i >= self.n_batches {
            return Err(Error::Bounds {
                index: i,
                len: self.n_batches,
            });
        }
        let end = self.boundary(i + 1);
        Ok(match self.mode {
            BatchMode::Disjoint => self.boundary(i)..end,
            BatchMode::Cumulative => 0..end,
        })
    }

    /// Dataset indices in batch `i`.
    pub fn batch(&self, i: usize) -> Result<&[usize]> {
        Ok(&self.order[self.batch_range(i)?])
    }

    /// Window of `width` positions in the sorted order around position `center`.
    ///
    /// Covers positions `center - floor(w/2) ..= center + ceil(w/2) - 1`, clamped to
    /// the order without wrapping; a zero width selects only `order[center]`.
    pub fn slice_window(&self, center: usize, width: usize) -> Result<&[usize]> {
        let n = self.order.len();
        if center >= n {
            return Err(Error::Bounds { index: center, len: n });
        }
        if width == 0 {
            return Ok(&self.order[center..=center]);
        }
        let lo = center.saturating_sub(width / 2);
        let hi = (center + width.div_ceil(2) - 1).min(n - 1);
        Ok(&self.order[lo..=hi])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: BatchPlan = serde_json::from_str(text)?;
        let mut seen = vec![false; plan.scores.len()];
        if plan.order.len() != plan.scores.len() {
            return Err(Error::dim("plan order length", plan.scores.len(), plan.order.len()));
        }
        for &i in &plan.order {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Config("plan order is not a permutation".into()));
            }
        }
        if plan.n_batches == 0 || plan.n_batches > plan.order.len() {
            return Err(Error::Config("plan batch count out of range".into()));
        }
        Ok(plan)
    }
}
