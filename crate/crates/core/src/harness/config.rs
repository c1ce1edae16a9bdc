//! Flat `section.key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curriculum::{BatchMode, CurriculumSpec, Scorer};
use crate::env::SelectOn;
use crate::error::{Error, Result};
use crate::student::StudentConfig;
use crate::teacher_ddpg::DdpgConfig;
use crate::teacher_dqn::DqnConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub dim: usize,
    pub spread: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_classes: 4,
            n_per_class: 500,
            dim: 8,
            spread: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: String,
        label_column: String,
        one_hot: Vec<String>,
    },
    Synthetic(SynthSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    /// Downsample the train split to equal per-class counts.
    pub balance_train: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
            balance_train: false,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Config("split fractions must lie in (0, 1)".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    Ddpg,
    Dqn,
    None,
}

impl FromStr for TeacherKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpg" => Ok(TeacherKind::Ddpg),
            "dqn" => Ok(TeacherKind::Dqn),
            "none" => Ok(TeacherKind::None),
            other => Err(Error::Config(format!("unknown teacher kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Train,
    BaselineBatchwise,
    BaselineCurriculum,
    Constrain,
    Perturb,
    Transfer,
    SlowLr,
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => ExperimentKind::Train,
            "baseline_batchwise" | "batchwise" => ExperimentKind::BaselineBatchwise,
            "baseline_curriculum" | "curriculum" => ExperimentKind::BaselineCurriculum,
            "constrain" => ExperimentKind::Constrain,
            "perturb" => ExperimentKind::Perturb,
            "transfer" => ExperimentKind::Transfer,
            "slow_lr" | "slow-lr" => ExperimentKind::SlowLr,
            other => return Err(Error::Config(format!("unknown experiment kind `{other}`"))),
        })
    }
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::BaselineBatchwise => "baseline_batchwise",
            ExperimentKind::BaselineCurriculum => "baseline_curriculum",
            ExperimentKind::Constrain => "constrain",
            ExperimentKind::Perturb => "perturb",
            ExperimentKind::Transfer => "transfer",
            ExperimentKind::SlowLr => "slow_lr",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub global: u64,
    pub student: Option<u64>,
    pub teacher: Option<u64>,
    pub data: Option<u64>,
}

impl Seeds {
    pub fn student(&self) -> u64 {
        self.student.unwrap_or(self.global)
    }
    pub fn teacher(&self) -> u64 {
        self.teacher.unwrap_or(self.global)
    }
    pub fn data(&self) -> u64 {
        self.data.unwrap_or(self.global)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub kind: ExperimentKind,
    /// Training students `X`.
    pub students: usize,
    /// Iterations per student `I`; also the step budget of baselines.
    pub iterations: usize,
    pub select_on: SelectOn,
    /// Batchwise baseline batch size; `None` means `n_train / n_batches`.
    pub batch_size: Option<usize>,
    pub perturb_sigma: f64,
    pub lr_divisor: f64,
    /// Teacher checkpoint for transfer (required) and perturb (optional).
    pub checkpoint: Option<String>,
    /// Keep every k-th record in the run log.
    pub log_every: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            kind: ExperimentKind::Train,
            students: 10,
            iterations: 100,
            select_on: SelectOn::Test,
            batch_size: None,
            perturb_sigma: 0.1,
            lr_divisor: 10.0,
            checkpoint: None,
            log_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DataSource,
    pub split: SplitSpec,
    pub curriculum: CurriculumSpec,
    pub student: StudentConfig,
    pub teacher_kind: TeacherKind,
    pub ddpg: DdpgConfig,
    pub dqn: DqnConfig,
    pub experiment: ExperimentSettings,
    pub seeds: Seeds,
    /// Where artifacts go; not part of the config hash.
    #[serde(skip)]
    pub output_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DataSource::Synthetic(SynthSpec::default()),
            split: SplitSpec::default(),
            curriculum: CurriculumSpec::default(),
            student: StudentConfig::default(),
            teacher_kind: TeacherKind::Ddpg,
            ddpg: DdpgConfig::default(),
            dqn: DqnConfig::default(),
            experiment: ExperimentSettings::default(),
            seeds: Seeds {
                global: 0,
                student: None,
                teacher: None,
                data: None,
            },
            output_dir: None,
        }
    }
}

struct Kv {
    map: BTreeMap<String, String>,
}

impl Kv {
    fn parse<T: FromStr>(key: &str, raw: &str) -> Result<T> {
        raw.parse()
            .map_err(|_| Error::Config(format!("cannot parse `{raw}` for key `{key}`")))
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(raw) = self.map.remove(key) {
            *slot = Self::parse(key, &raw)?;
        }
        Ok(())
    }

    fn set_opt<T: FromStr>(&mut self, key: &str, slot: &mut Option<T>) -> Result<()> {
        if let Some(raw) = self.map.remove(key) {
            *slot = match raw.as_str() {
                "" | "none" | "auto" => None,
                v => Some(Self::parse(key, v)?),
            };
        }
        Ok(())
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        self.map.keys().any(|k| k.starts_with(prefix))
    }
}

fn parse_select_on(raw: &str) -> Result<SelectOn> {
    match raw {
        "test" => Ok(SelectOn::Test),
        "validation" => Ok(SelectOn::Validation),
        other => Err(Error::Config(format!("unknown select_on `{other}`"))),
    }
}

impl ExperimentConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parse `key = value` lines; `#` starts a comment. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            if map.insert(k.trim().to_owned(), v.trim().to_owned()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{}`", n + 1, k.trim())));
            }
        }
        let mut kv = Kv { map };
        let mut c = ExperimentConfig::default();

        let source = kv.map.remove("dataset.source");
        let path = kv.map.remove("dataset.path");
        let has_synth = kv.has_prefix("synthetic.");
        c.dataset = match (source.as_deref(), path) {
            (Some("csv") | None, Some(path)) => {
                if has_synth {
                    return Err(Error::Config("give exactly one dataset source (csv path or synthetic.*)".into()));
                }
                let mut label_column = "label".to_owned();
                kv.set("dataset.label_column", &mut label_column)?;
                let one_hot = kv
                    .map
                    .remove("dataset.one_hot")
                    .map(|v| v.split(',').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect())
                    .unwrap_or_default();
                DataSource::Csv {
                    path,
                    label_column,
                    one_hot,
                }
            }
            (Some("csv"), None) => return Err(Error::Config("csv source needs dataset.path".into())),
            (Some("synthetic") | None, None) => {
                let mut s = SynthSpec::default();
                kv.set("synthetic.n_classes", &mut s.n_classes)?;
                kv.set("synthetic.n_per_class", &mut s.n_per_class)?;
                kv.set("synthetic.dim", &mut s.dim)?;
                kv.set("synthetic.spread", &mut s.spread)?;
                DataSource::Synthetic(s)
            }
            (Some("synthetic"), Some(_)) => {
                return Err(Error::Config("give exactly one dataset source (csv path or synthetic.*)".into()))
            }
            (Some(other), _) => return Err(Error::Config(format!("unknown dataset source `{other}`"))),
        };

        kv.set("split.train", &mut c.split.train)?;
        kv.set("split.validation", &mut c.split.validation)?;
        kv.set("split.test", &mut c.split.test)?;
        kv.set("split.balance_train", &mut c.split.balance_train)?;

        let cur = &mut c.curriculum;
        kv.set::<Scorer>("curriculum.scorer", &mut cur.scorer)?;
        kv.set("curriculum.use_dae", &mut cur.use_dae)?;
        kv.set("curriculum.n_batches", &mut cur.n_batches)?;
        kv.set::<BatchMode>("curriculum.mode", &mut cur.mode)?;
        kv.set("dae.latent_dim", &mut cur.dae.latent_dim)?;
        kv.set("dae.hidden", &mut cur.dae.hidden)?;
        kv.set("dae.noise", &mut cur.dae.noise)?;
        kv.set("dae.epochs", &mut cur.dae.epochs)?;
        kv.set("dae.learning_rate", &mut cur.dae.learning_rate)?;
        kv.set("dae.momentum", &mut cur.dae.momentum)?;
        kv.set("dae.batch_size", &mut cur.dae.batch_size)?;

        kv.set("student.hidden_layers", &mut c.student.hidden_layers)?;
        kv.set("student.hidden_nodes", &mut c.student.hidden_nodes)?;
        kv.set("student.learning_rate", &mut c.student.learning_rate)?;

        kv.set::<TeacherKind>("teacher.kind", &mut c.teacher_kind)?;
        let d = &mut c.ddpg;
        kv.set("teacher.gamma", &mut d.gamma)?;
        kv.set("teacher.tau", &mut d.tau)?;
        kv.set("teacher.update_frequency", &mut d.update_frequency)?;
        kv.set("teacher.replay_batch", &mut d.replay_batch)?;
        kv.set("teacher.replay_every", &mut d.replay_every)?;
        kv.set("teacher.buffer_capacity", &mut d.buffer_capacity)?;
        kv.set("teacher.hidden_layers", &mut d.hidden_layers)?;
        kv.set("teacher.hidden_nodes", &mut d.hidden_nodes)?;
        kv.set("teacher.dropout", &mut d.dropout)?;
        kv.set("teacher.momentum", &mut d.momentum)?;
        kv.set("teacher.learning_rate", &mut d.learning_rate)?;
        kv.set("teacher.critic_heads", &mut d.critic_heads)?;
        kv.set("teacher.noise_theta", &mut d.noise_theta)?;
        kv.set("teacher.noise_sigma", &mut d.noise_sigma)?;
        kv.set("teacher.noise_sigma_end", &mut d.noise_sigma_end)?;
        kv.set_opt("teacher.width_max", &mut d.width_max)?;
        kv.set("teacher.constrain_prob", &mut d.constrain_prob)?;
        let q = &mut c.dqn;
        kv.set("dqn.epsilon_start", &mut q.epsilon_start)?;
        kv.set("dqn.epsilon_end", &mut q.epsilon_end)?;
        kv.set("dqn.period", &mut q.period)?;
        kv.set("dqn.gamma", &mut q.gamma)?;
        kv.set("dqn.hidden_layers", &mut q.hidden_layers)?;
        kv.set("dqn.hidden_nodes", &mut q.hidden_nodes)?;
        kv.set("dqn.dropout", &mut q.dropout)?;
        kv.set("dqn.momentum", &mut q.momentum)?;
        kv.set("dqn.learning_rate", &mut q.learning_rate)?;
        kv.set("dqn.buffer_capacity", &mut q.buffer_capacity)?;

        let e = &mut c.experiment;
        kv.set::<ExperimentKind>("experiment.kind", &mut e.kind)?;
        kv.set("experiment.students", &mut e.students)?;
        kv.set("experiment.iterations", &mut e.iterations)?;
        if let Some(raw) = kv.map.remove("experiment.select_on") {
            e.select_on = parse_select_on(&raw)?;
        }
        kv.set_opt("experiment.batch_size", &mut e.batch_size)?;
        kv.set("experiment.perturb_sigma", &mut e.perturb_sigma)?;
        kv.set("experiment.lr_divisor", &mut e.lr_divisor)?;
        kv.set_opt("experiment.checkpoint", &mut e.checkpoint)?;
        kv.set("experiment.log_every", &mut e.log_every)?;

        kv.set("seed.global", &mut c.seeds.global)?;
        kv.set_opt("seed.student", &mut c.seeds.student)?;
        kv.set_opt("seed.teacher", &mut c.seeds.teacher)?;
        kv.set_opt("seed.data", &mut c.seeds.data)?;
        kv.set_opt("output.dir", &mut c.output_dir)?;

        if let Some(k) = kv.map.keys().next() {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        c.validate()?;
        Ok(c)
    }

    /// Copy the seed block and the plan size into the component configs.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.student.seed = self.seeds.student();
        c.ddpg.seed = self.seeds.teacher();
        c.dqn.seed = self.seeds.teacher();
        c.curriculum.dae.seed = self.seeds.data();
        c.dqn.n_actions = self.curriculum.n_batches;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.resolved();
        c.split.validate()?;
        if c.curriculum.n_batches == 0 {
            return Err(Error::Config("curriculum.n_batches must be >= 1".into()));
        }
        if c.curriculum.use_dae {
            c.curriculum.dae.validate()?;
        }
        if c.student.hidden_layers == 0 || c.student.hidden_nodes == 0 {
            return Err(Error::Config("student needs at least one hidden layer".into()));
        }
        if !(c.student.learning_rate > 0.0) {
            return Err(Error::Config("student learning rate must be > 0".into()));
        }
        c.ddpg.validate()?;
        c.dqn.validate()?;
        if let DataSource::Synthetic(s) = &c.dataset {
            if s.n_classes == 0 || s.n_per_class == 0 || s.dim == 0 || !(s.spread >= 0.0) {
                return Err(Error::Config("synthetic counts must be >= 1 and spread >= 0".into()));
            }
        }
        let e = &c.experiment;
        if e.iterations == 0 || e.students == 0 || e.log_every == 0 {
            return Err(Error::Config("students, iterations and log_every must be >= 1".into()));
        }
        if !(e.lr_divisor > 0.0) || !(e.perturb_sigma >= 0.0) {
            return Err(Error::Config("lr_divisor must be > 0 and perturb_sigma >= 0".into()));
        }
        if e.kind == ExperimentKind::Transfer && e.checkpoint.is_none() {
            return Err(Error::Config("transfer needs experiment.checkpoint".into()));
        }
        Ok(())
    }

    /// Hex sha256 of the resolved configuration (output directory excluded).
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.resolved()).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
