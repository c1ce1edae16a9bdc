//! The environment a teacher acts in: a student being trained on a curriculum.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::{BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::student::{init_student, reward, ReferenceVectors, StateVector, Student, StudentConfig};

/// What the teacher asked the student to train on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    /// Window over the sorted order centred at a position.
    Window { center: usize, width: usize },
    /// One of the plan's precomputed batches.
    Batch(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

pub trait Environment {
    fn state_dim(&self) -> usize;
    /// Number of positions in the sorted training order.
    fn curriculum_len(&self) -> usize;
    fn n_batches(&self) -> usize;
    /// Start a fresh student.
    fn reset(&mut self, student_id: usize) -> Result<()>;
    fn state(&self) -> Result<StateVector>;
    fn step(&mut self, selection: Selection) -> Result<StepOutcome>;
}

/// One iteration of an episode, as written to the JSON-lines log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub student_id: usize,
    pub iter: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub center: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub action_id: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epsilon: Option<f64>,
    pub reward: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config_hash: Option<String>,
}

impl EpisodeRecord {
    pub fn new(student_id: usize, iter: usize, selection: Selection, outcome: &StepOutcome, mode: &str) -> Self {
        let (center, width, action_id) = match selection {
            Selection::Window { center, width } => (Some(center), Some(width), None),
            Selection::Batch(id) => (None, None, Some(id)),
        };
        EpisodeRecord {
            student_id,
            iter,
            center,
            width,
            action_id,
            epsilon: None,
            reward: outcome.reward,
            train_acc: outcome.train_acc,
            val_acc: outcome.val_acc,
            test_acc: outcome.test_acc,
            mode: mode.to_owned(),
            config_hash: None,
        }
    }
}

/// Which held-out accuracy decides the saved best student.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectOn {
    Test,
    Validation,
}

/// Train / validation / test splits plus the curriculum over the train split.
#[derive(Clone, Debug)]
pub struct CurriculumData {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub plan: BatchPlan,
}

impl CurriculumData {
    pub fn new(train: Dataset, validation: Dataset, test: Dataset, plan: BatchPlan) -> Result<Self> {
        if plan.len() != train.len() {
            return Err(Error::dim("plan length vs train rows", train.len(), plan.len()));
        }
        for d in [&validation, &test] {
            if d.n_features() != train.n_features() {
                return Err(Error::dim("split feature count", train.n_features(), d.n_features()));
            }
            if d.n_classes != train.n_classes {
                return Err(Error::dim("split class count", train.n_classes, d.n_classes));
            }
        }
        Ok(CurriculumData {
            train,
            validation,
            test,
            plan,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BestStudent {
    pub iter: usize,
    pub score: f64,
    pub test_acc: f64,
    pub val_acc: f64,
    pub student: Student,
}

/// Largest training subsample used for the per-step training accuracy.
pub const TRAIN_PROBE_MAX: usize = 1024;

/// Real student environment. Reward is `(delta_t - delta_{t-1}) * A_v`, with `delta`
/// measured on a fixed seeded subsample of the training split.
pub struct StudentEnv {
    data: Arc<CurriculumData>,
    config: StudentConfig,
    probe: Dataset,
    select_on: SelectOn,
    refs: Option<ReferenceVectors>,
    student: Option<Student>,
    prev_train_acc: f64,
    iter: usize,
    best: Option<BestStudent>,
}

impl StudentEnv {
    /// `probe_seed` fixes which training rows feed the training accuracy.
    pub fn new(data: Arc<CurriculumData>, config: StudentConfig, probe_seed: u64, select_on: SelectOn) -> Result<Self> {
        if data.train.is_empty() || data.validation.is_empty() || data.test.is_empty() {
            return Err(Error::Precondition("every split must be nonempty".into()));
        }
        let n = data.train.len();
        let probe = if n <= TRAIN_PROBE_MAX {
            data.train.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
            let mut idx = sample(&mut rng, n, TRAIN_PROBE_MAX).into_vec();
            idx.sort_unstable();
            data.train.subset(&idx)?
        };
        Ok(StudentEnv {
            data,
            config,
            probe,
            select_on,
            refs: None,
            student: None,
            prev_train_acc: 0.0,
            iter: 0,
            best: None,
        })
    }

    pub fn data(&self) -> &CurriculumData {
        &self.data
    }

    pub fn config(&self) -> &StudentConfig {
        &self.config
    }

    pub fn student(&self) -> Option<&Student> {
        self.student.as_ref()
    }

    pub fn best(&self) -> Option<&BestStudent> {
        self.best.as_ref()
    }

    fn indices_for(&self, selection: Selection) -> Result<Vec<usize>> {
        let plan = &self.data.plan;
        Ok(match selection {
            Selection::Window { center, width } => plan.slice_window(center, width)?.to_vec(),
            Selection::Batch(id) => plan.batch(id)?.to_vec(),
        })
    }

    /// Train on explicit training-set indices, bypassing the plan (used by baselines).
    pub fn step_indices(&mut self, indices: &[usize]) -> Result<StepOutcome> {
        let data = Arc::clone(&self.data);
        let student = self
            .student
            .as_mut()
            .ok_or_else(|| Error::Precondition("environment stepped before reset".into()))?;
        student.train_on_indices(&data.train, indices)?;
        let train_acc = student.accuracy(&self.probe)?;
        let val_acc = student.accuracy(&data.validation)?;
        let test_acc = student.accuracy(&data.test)?;
        let r = reward(train_acc, self.prev_train_acc, val_acc)?;
        self.prev_train_acc = train_acc;

        let score = match self.select_on {
            SelectOn::Test => test_acc,
            SelectOn::Validation => val_acc,
        };
        if self.best.as_ref().is_none_or(|b| score > b.score) {
            self.best = Some(BestStudent {
                iter: self.iter,
                score,
                test_acc,
                val_acc,
                student: student.clone(),
            });
        }
        self.iter += 1;
        Ok(StepOutcome {
            reward: r,
            train_acc,
            val_acc,
            test_acc,
        })
    }
}

impl Environment for StudentEnv {
    fn state_dim(&self) -> usize {
        self.config.state_dim()
    }

    fn curriculum_len(&self) -> usize {
        self.data.train.len()
    }

    fn n_batches(&self) -> usize {
        self.data.plan.n_batches
    }

    fn reset(&mut self, student_id: usize) -> Result<()> {
        let cfg = StudentConfig {
            seed: self.config.seed.wrapping_add(student_id as u64),
            ..self.config.clone()
        };
        let student = init_student(&cfg, self.data.train.n_features(), self.data.train.n_classes)?;
        self.prev_train_acc = student.accuracy(&self.probe)?;
        if self.refs.is_none() {
            self.refs = Some(ReferenceVectors::for_student(&student));
        }
        self.student = Some(student);
        self.iter = 0;
        self.best = None;
        Ok(())
    }

    fn state(&self) -> Result<StateVector> {
        let student = self
            .student
            .as_ref()
            .ok_or_else(|| Error::Precondition("environment observed before reset".into()))?;
        student.encode_state(self.refs.as_ref().expect("set on reset"))
    }

    fn step(&mut self, selection: Selection) -> Result<StepOutcome> {
        let indices = self.indices_for(selection)?;
        self.step_indices(&indices)
    }
}
