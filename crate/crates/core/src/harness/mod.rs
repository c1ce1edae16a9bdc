//! Experiment plumbing: configuration, data preparation, baselines, the
//! experiment suite and its logs.

mod config;
mod data;
mod runlog;

pub use config::{DataSource, ExperimentConfig, ExperimentKind, ExperimentSettings, Seeds, SplitSpec, SynthSpec, TeacherKind};
pub use data::{load_dataset, prepare, prepare_data, split, synth_blobs, SplitIndices};
pub use runlog::{emit_policy_table, parse_policy_table, policy_rows, records_to_jsonl, PolicyRow, RunLog, RunSummary};

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::curriculum::{BatchMode, BatchPlan};
use crate::env::{CurriculumData, EpisodeRecord, Environment, Selection, StudentEnv};
use crate::error::{Error, Result};
use crate::student::{argmax_lowest, StateVector, StudentConfig};
use crate::teacher_ddpg::{perturb_state, scale_action, DdpgCheckpoint, DdpgTeacher, EpisodeMode, TrainingRun};
use crate::teacher_dqn::{q_values, DqnCheckpoint, DqnTeacher};

/// Student id used for every evaluation episode and baseline, so that all
/// methods start from the same initial student.
pub const EVAL_STUDENT: usize = 1_000_000;

fn no_selection_record(iter: usize, outcome: &crate::env::StepOutcome, mode: &str) -> EpisodeRecord {
    let mut r = EpisodeRecord::new(EVAL_STUDENT, iter, Selection::Batch(0), outcome, mode);
    r.action_id = None;
    r
}

/// Uniform random mini-batches without replacement within a batch.
pub fn baseline_batchwise(env: &mut StudentEnv, batch_size: usize, steps: usize, seed: u64) -> Result<Vec<EpisodeRecord>> {
    let n = env.curriculum_len();
    if batch_size == 0 || batch_size > n {
        return Err(Error::Precondition(format!("batch size must lie in 1..={n}, got {batch_size}")));
    }
    env.reset(EVAL_STUDENT)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(steps);
    for iter in 0..steps {
        let idx = sample(&mut rng, n, batch_size).into_vec();
        let outcome = env.step_indices(&idx)?;
        records.push(no_selection_record(iter, &outcome, "batchwise"));
    }
    Ok(records)
}

/// Batch shown at step `t` of `steps` when `n_batches` share the budget equally.
pub fn curriculum_batch_at(t: usize, steps: usize, n_batches: usize) -> usize {
    (t * n_batches / steps).min(n_batches - 1)
}

/// Present the plan's batches in order, each for an equal share of the steps.
pub fn baseline_curriculum(env: &mut StudentEnv, plan: &BatchPlan, steps: usize) -> Result<Vec<EpisodeRecord>> {
    if plan.len() != env.curriculum_len() {
        return Err(Error::dim("curriculum plan", env.curriculum_len(), plan.len()));
    }
    env.reset(EVAL_STUDENT)?;
    let mut records = Vec::with_capacity(steps);
    for iter in 0..steps {
        let id = curriculum_batch_at(iter, steps, plan.n_batches);
        let outcome = env.step_indices(plan.batch(id)?)?;
        records.push(EpisodeRecord::new(EVAL_STUDENT, iter, Selection::Batch(id), &outcome, "curriculum"));
    }
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherCheckpoint {
    Ddpg(DdpgCheckpoint),
    Dqn(DqnCheckpoint),
}

impl TeacherCheckpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    /// Hex sha256 of the serialized checkpoint.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }
}

pub enum Teacher {
    Ddpg(DdpgTeacher),
    Dqn(DqnTeacher),
}

impl Teacher {
    pub fn new(cfg: &ExperimentConfig, state_dim: usize) -> Result<Self> {
        let cfg = cfg.resolved();
        match cfg.teacher_kind {
            TeacherKind::Ddpg => Ok(Teacher::Ddpg(DdpgTeacher::new(cfg.ddpg, state_dim)?)),
            TeacherKind::Dqn => Ok(Teacher::Dqn(DqnTeacher::new(cfg.dqn, state_dim)?)),
            TeacherKind::None => Err(Error::Config("this experiment needs teacher.kind = ddpg or dqn".into())),
        }
    }

    pub fn from_checkpoint(ck: &TeacherCheckpoint) -> Result<Self> {
        Ok(match ck {
            TeacherCheckpoint::Ddpg(c) => Teacher::Ddpg(DdpgTeacher::from_checkpoint(c)?),
            TeacherCheckpoint::Dqn(c) => Teacher::Dqn(DqnTeacher::from_checkpoint(c)?),
        })
    }

    pub fn checkpoint(&self) -> TeacherCheckpoint {
        match self {
            Teacher::Ddpg(t) => TeacherCheckpoint::Ddpg(t.checkpoint()),
            Teacher::Dqn(t) => TeacherCheckpoint::Dqn(t.checkpoint()),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Teacher::Ddpg(t) => t.state_dim(),
            Teacher::Dqn(t) => t.state_dim(),
        }
    }

    pub fn train<E: Environment + ?Sized>(&mut self, env: &mut E, students: usize, iterations: usize, constrained: bool) -> Result<TrainingRun> {
        match self {
            Teacher::Ddpg(t) => t.train(env, students, iterations, constrained),
            Teacher::Dqn(_) if constrained => Err(Error::Config("constrained mode needs the ddpg teacher".into())),
            Teacher::Dqn(t) => t.train(env, students, iterations),
        }
    }

    /// Greedy episode with no teacher updates.
    pub fn evaluate<E: Environment + ?Sized>(&mut self, env: &mut E, iterations: usize, constrained: bool, student_id: usize) -> Result<Vec<EpisodeRecord>> {
        match self {
            Teacher::Ddpg(t) => {
                let mode = if constrained {
                    EpisodeMode::GREEDY.constrained()
                } else {
                    EpisodeMode::GREEDY
                };
                t.run_episode(env, iterations, mode, student_id)
            }
            Teacher::Dqn(_) if constrained => Err(Error::Config("constrained mode needs the ddpg teacher".into())),
            Teacher::Dqn(t) => t.run_episode(env, iterations, false, student_id),
        }
    }

    /// Noise-free choice for a state.
    pub fn greedy_selection<E: Environment + ?Sized>(&self, state: &StateVector, env: &E) -> Result<Selection> {
        match self {
            Teacher::Ddpg(t) => {
                let n = env.curriculum_len();
                let (center, width) = scale_action(t.policy(state)?, n, t.config.width_max_for(n));
                Ok(Selection::Window { center, width })
            }
            Teacher::Dqn(t) => Ok(Selection::Batch(argmax_lowest(&q_values(&t.qnet, state)?))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbRow {
    pub iter: usize,
    pub center_or_action: usize,
    pub width: usize,
    pub center_or_action_perturbed: usize,
    pub width_perturbed: usize,
}

fn selection_parts(s: Selection) -> (usize, usize) {
    match s {
        Selection::Window { center, width } => (center, width),
        Selection::Batch(id) => (id, 0),
    }
}

/// Greedy episode; at each visited state also record the action chosen for a
/// noisy copy of that state. The student follows the clean actions.
pub fn perturbed_pairs<E: Environment + ?Sized>(
    teacher: &Teacher,
    env: &mut E,
    iterations: usize,
    sigma: f64,
    seed: u64,
    student_id: usize,
) -> Result<(Vec<EpisodeRecord>, Vec<PerturbRow>)> {
    if env.state_dim() != teacher.state_dim() {
        return Err(Error::Transfer {
            checkpoint: teacher.state_dim(),
            dataset: env.state_dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    env.reset(student_id)?;
    let mut records = Vec::with_capacity(iterations);
    let mut rows = Vec::with_capacity(iterations);
    for iter in 0..iterations {
        let state = env.state()?;
        let clean = teacher.greedy_selection(&state, env)?;
        let noisy = teacher.greedy_selection(&perturb_state(&state, sigma, &mut rng)?, env)?;
        let outcome = env.step(clean)?;
        let (c, w) = selection_parts(clean);
        let (cp, wp) = selection_parts(noisy);
        rows.push(PerturbRow {
            iter,
            center_or_action: c,
            width: w,
            center_or_action_perturbed: cp,
            width_perturbed: wp,
        });
        records.push(EpisodeRecord::new(student_id, iter, clean, &outcome, "perturb"));
    }
    Ok((records, rows))
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

pub fn perturb_table(rows: &[PerturbRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub struct RunOutput {
    pub log: RunLog,
    /// Per-iteration records of the teacher's training students.
    pub training: Vec<EpisodeRecord>,
    pub teacher: Option<TeacherCheckpoint>,
    /// Extra CSV artifacts keyed by file name.
    pub tables: BTreeMap<String, String>,
}

impl RunOutput {
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("run_log.jsonl"), self.log.to_jsonl()?)?;
        if !self.log.records.is_empty() {
            std::fs::write(dir.join("policy.csv"), emit_policy_table(&self.log.records)?)?;
        }
        if !self.training.is_empty() {
            std::fs::write(dir.join("training_log.jsonl"), records_to_jsonl(&self.training)?)?;
        }
        if let Some(ck) = &self.teacher {
            std::fs::write(dir.join("teacher.json"), ck.to_json()?)?;
        }
        for (name, text) in &self.tables {
            std::fs::write(dir.join(name), text)?;
        }
        Ok(())
    }
}

/// Validate, load and prepare the data, then run the configured experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    run_on(cfg, data)
}

fn new_env(cfg: &ExperimentConfig, data: Arc<CurriculumData>, student: StudentConfig) -> Result<StudentEnv> {
    StudentEnv::new(data, student, cfg.seeds.data(), cfg.experiment.select_on)
}

fn fill_best(summary: &mut RunSummary, env: &StudentEnv) {
    if let Some(b) = env.best() {
        summary.best_test_acc = Some(b.test_acc);
        summary.best_val_acc = Some(b.val_acc);
        summary.best_iter = Some(b.iter);
    }
}

/// Run the configured experiment on prepared data.
pub fn run_on(cfg: &ExperimentConfig, data: Arc<CurriculumData>) -> Result<RunOutput> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let e = &cfg.experiment;
    let iters = e.iterations;
    let mut summary = RunSummary::new(e.kind.name(), &cfg.hash());
    let mut training = Vec::new();
    let mut teacher_ck = None;
    let mut tables = BTreeMap::new();
    let meta = &mut summary.meta;
    meta.insert("iterations".into(), Value::from(iters));
    meta.insert("n_train".into(), Value::from(data.train.len()));
    meta.insert("n_features".into(), Value::from(data.train.n_features()));

    let (records, env) = match e.kind {
        ExperimentKind::BaselineBatchwise => {
            let mut env = new_env(&cfg, data.clone(), cfg.student.clone())?;
            let bs = e.batch_size.unwrap_or((data.train.len() / data.plan.n_batches).max(1));
            meta.insert("batch_size".into(), Value::from(bs));
            (baseline_batchwise(&mut env, bs, iters, cfg.seeds.student())?, env)
        }
        ExperimentKind::BaselineCurriculum => {
            let mut env = new_env(&cfg, data.clone(), cfg.student.clone())?;
            let plan = BatchPlan::new(data.plan.scores.clone(), data.plan.n_batches, BatchMode::Cumulative)?;
            meta.insert("n_batches".into(), Value::from(plan.n_batches));
            (baseline_curriculum(&mut env, &plan, iters)?, env)
        }
        ExperimentKind::Train | ExperimentKind::Constrain | ExperimentKind::SlowLr => {
            let mut student = cfg.student.clone();
            if e.kind == ExperimentKind::SlowLr {
                student.learning_rate /= e.lr_divisor;
                meta.insert("lr_ratio".into(), Value::from(e.lr_divisor));
                meta.insert("base_learning_rate".into(), Value::from(cfg.student.learning_rate));
                meta.insert("student_learning_rate".into(), Value::from(student.learning_rate));
            }
            let constrained = e.kind == ExperimentKind::Constrain;
            let mut env = new_env(&cfg, data.clone(), student)?;
            let mut teacher = Teacher::new(&cfg, env.state_dim())?;
            describe_teacher(meta, &teacher, &env);
            meta.insert("students".into(), Value::from(e.students));
            let run = teacher.train(&mut env, e.students, iters, constrained)?;
            let train_best: Vec<Value> = run.students.iter().map(|s| Value::from(s.best_test_acc)).collect();
            meta.insert("training_best_test_acc".into(), Value::from(train_best));
            training = run.records;
            let records = teacher.evaluate(&mut env, iters, constrained, EVAL_STUDENT)?;
            teacher_ck = Some(teacher.checkpoint());
            (records, env)
        }
        ExperimentKind::Transfer => {
            let path = e.checkpoint.as_ref().expect("validated");
            let ck = TeacherCheckpoint::from_json(&std::fs::read_to_string(path)?)?;
            let before = ck.hash()?;
            let mut teacher = Teacher::from_checkpoint(&ck)?;
            let mut env = new_env(&cfg, data.clone(), cfg.student.clone())?;
            describe_teacher(meta, &teacher, &env);
            let records = teacher.evaluate(&mut env, iters, false, EVAL_STUDENT)?;
            let after = teacher.checkpoint().hash()?;
            meta.insert("checkpoint_hash_before".into(), Value::from(before.clone()));
            meta.insert("checkpoint_hash_after".into(), Value::from(after.clone()));
            meta.insert("checkpoint_unchanged".into(), Value::from(before == after));
            (records, env)
        }
        ExperimentKind::Perturb => {
            let mut env = new_env(&cfg, data.clone(), cfg.student.clone())?;
            let teacher = match &e.checkpoint {
                Some(path) => Teacher::from_checkpoint(&TeacherCheckpoint::from_json(&std::fs::read_to_string(path)?)?)?,
                None => {
                    let mut t = Teacher::new(&cfg, env.state_dim())?;
                    training = t.train(&mut env, e.students, iters, false)?.records;
                    t
                }
            };
            describe_teacher(meta, &teacher, &env);
            let seed = cfg.seeds.teacher().wrapping_add(1);
            let (records, rows) = perturbed_pairs(&teacher, &mut env, iters, e.perturb_sigma, seed, EVAL_STUDENT)?;
            let col = |f: fn(&PerturbRow) -> usize| rows.iter().map(|r| f(r) as f64).collect::<Vec<_>>();
            let corr_c = pearson(&col(|r| r.center_or_action), &col(|r| r.center_or_action_perturbed));
            let corr_w = pearson(&col(|r| r.width), &col(|r| r.width_perturbed));
            let agree = rows
                .iter()
                .filter(|r| r.center_or_action == r.center_or_action_perturbed && r.width == r.width_perturbed)
                .count() as f64
                / rows.len() as f64;
            meta.insert("perturb_sigma".into(), Value::from(e.perturb_sigma));
            meta.insert("center_correlation".into(), corr_c.map_or(Value::Null, Value::from));
            meta.insert("width_correlation".into(), corr_w.map_or(Value::Null, Value::from));
            meta.insert("identical_fraction".into(), Value::from(agree));
            tables.insert("perturb_pairs.csv".into(), perturb_table(&rows)?);
            teacher_ck = Some(teacher.checkpoint());
            (records, env)
        }
    };

    fill_best(&mut summary, &env);
    let records: Vec<EpisodeRecord> = records.into_iter().filter(|r| r.iter % e.log_every == 0).collect();
    Ok(RunOutput {
        log: RunLog::new(records, summary),
        training,
        teacher: teacher_ck,
        tables,
    })
}

fn describe_teacher(meta: &mut BTreeMap<String, Value>, teacher: &Teacher, env: &StudentEnv) {
    meta.insert("state_dim".into(), Value::from(teacher.state_dim()));
    match teacher {
        Teacher::Ddpg(t) => {
            let c = &t.config;
            meta.insert("teacher".into(), Value::from("ddpg"));
            meta.insert("width_max".into(), Value::from(c.width_max_for(env.curriculum_len())));
            meta.insert(
                "replay_schedule".into(),
                Value::from(format!(
                    "every {} env steps: one update on the {} most recent transitions, then one on {} uniform replay samples; soft target update (tau {}) every {} updates",
                    c.replay_every, c.replay_batch, c.replay_batch, c.tau, c.update_frequency
                )),
            );
        }
        Teacher::Dqn(t) => {
            meta.insert("teacher".into(), Value::from("dqn"));
            meta.insert(
                "replay_schedule".into(),
                Value::from(format!(
                    "online update every step; every {} steps: update on {} uniform replay samples, then hard target copy",
                    t.config.period, t.config.period
                )),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(kind: &str) -> ExperimentConfig {
        ExperimentConfig::parse(&format!(
            "synthetic.n_classes = 3\nsynthetic.n_per_class = 40\nsynthetic.dim = 4\nsynthetic.spread = 0.5\n\
             curriculum.n_batches = 6\ndae.epochs = 3\nstudent.hidden_nodes = 6\nstudent.learning_rate = 0.05\n\
             teacher.hidden_nodes = 8\nteacher.hidden_layers = 2\ndqn.hidden_nodes = 8\ndqn.hidden_layers = 2\n\
             experiment.students = 2\nexperiment.iterations = 12\nexperiment.kind = {kind}\n"
        ))
        .unwrap()
    }

    #[test]
    fn curriculum_order_is_nondecreasing_with_equal_shares() {
        let ids: Vec<usize> = (0..20).map(|t| curriculum_batch_at(t, 20, 5)).collect();
        assert!(ids.windows(2).all(|w| w[0] <= w[1]));
        for b in 0..5 {
            assert_eq!(ids.iter().filter(|&&i| i == b).count(), 4);
        }
        assert!((0..7).all(|t| curriculum_batch_at(t, 7, 1) == 0));
    }

    #[test]
    fn zero_step_baseline_has_only_summary() {
        let cfg = small_cfg("batchwise");
        let data = prepare(&cfg).unwrap();
        let mut env = StudentEnv::new(data, cfg.student.clone(), 0, crate::env::SelectOn::Test).unwrap();
        let recs = baseline_batchwise(&mut env, 5, 0, 0).unwrap();
        assert!(recs.is_empty());
        let log = RunLog::new(recs, RunSummary::new("baseline_batchwise", "h"));
        assert_eq!(log.to_jsonl().unwrap().lines().count(), 1);
        assert!(baseline_batchwise(&mut env, 10_000, 1, 0).is_err());
    }

    #[test]
    fn every_kind_runs_and_repeats_exactly() {
        for kind in ["train", "batchwise", "curriculum", "constrain", "perturb", "slow_lr"] {
            let cfg = small_cfg(kind);
            let a = run(&cfg).unwrap();
            let b = run(&cfg).unwrap();
            assert_eq!(a.log.to_jsonl().unwrap(), b.log.to_jsonl().unwrap(), "{kind}");
            assert_eq!(a.log.records.len(), 12, "{kind}");
            assert!(a.log.summary.best_test_acc.is_some());
        }
    }

    #[test]
    fn dqn_train_runs() {
        let mut cfg = small_cfg("train");
        cfg.teacher_kind = TeacherKind::Dqn;
        let out = run(&cfg).unwrap();
        assert!(out.log.records.iter().all(|r| r.action_id.unwrap() < 6));
        assert!(matches!(out.teacher, Some(TeacherCheckpoint::Dqn(_))));
    }

    #[test]
    fn slow_lr_records_ratio() {
        let out = run(&small_cfg("slow_lr")).unwrap();
        assert_eq!(out.log.summary.meta["lr_ratio"], Value::from(10.0));
    }

    #[test]
    fn zero_sigma_pairs_are_identical() {
        let mut cfg = small_cfg("perturb");
        cfg.experiment.perturb_sigma = 0.0;
        let out = run(&cfg).unwrap();
        assert_eq!(out.log.summary.meta["identical_fraction"], Value::from(1.0));
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
    }
}
