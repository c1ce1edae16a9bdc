//! Discrete-action teacher: a Q-network scores the `N` precomputed curriculum
//! batches and an ε-greedy policy picks one per iteration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EpisodeRecord, Environment, Selection};
use crate::error::{Error, Result};
use crate::nncore::{DenseNet, DenseNetSpec, Matrix, NetCheckpoint, OutputHead, SgdMomentum};
use crate::replay::{DqnTransition, ReplayBuffer};
use crate::student::{argmax_lowest, StateVector};
use crate::teacher_ddpg::{StudentSummary, TrainingRun};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub n_actions: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Replay batch size and target sync period.
    pub period: usize,
    pub gamma: f64,
    pub hidden_layers: usize,
    pub hidden_nodes: usize,
    pub dropout: f64,
    pub momentum: f64,
    pub learning_rate: f64,
    pub buffer_capacity: usize,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            n_actions: 100,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            period: 10,
            gamma: 0.95,
            hidden_layers: 3,
            hidden_nodes: 50,
            dropout: 0.2,
            momentum: 0.9,
            learning_rate: 0.01,
            buffer_capacity: 1_000_000,
            seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_actions == 0 {
            return fail("need at least one action".into());
        }
        if !(0.0 <= self.epsilon_end && self.epsilon_end <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return fail(format!(
                "need 0 <= epsilon_end <= epsilon_start <= 1, got {} and {}",
                self.epsilon_end, self.epsilon_start
            ));
        }
        if self.period == 0 {
            return fail("period must be >= 1".into());
        }
        if self.buffer_capacity < self.period {
            return fail("buffer must hold at least one replay batch".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if self.hidden_layers == 0 || self.hidden_nodes == 0 {
            return fail("teacher needs at least one hidden layer".into());
        }
        Ok(())
    }
}

/// Linear decay from `epsilon_start` at `i = 0` to `epsilon_end` at `i = iterations`.
pub fn epsilon_at(i: usize, iterations: usize, cfg: &DqnConfig) -> f64 {
    if iterations == 0 {
        return cfg.epsilon_start;
    }
    if i >= iterations {
        return cfg.epsilon_end;
    }
    cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * i as f64 / iterations as f64
}

/// Q-values for one state, dropout off.
pub fn q_values(qnet: &DenseNet, state: &StateVector) -> Result<Vec<f64>> {
    if state.len() != qnet.input_size() {
        return Err(Error::dim("dqn state", qnet.input_size(), state.len()));
    }
    Ok(qnet.predict(&state.to_row())?.into_data())
}

/// ε-greedy choice; greedy ties go to the lowest id.
pub fn select_batch<R: Rng + ?Sized>(qnet: &DenseNet, state: &StateVector, epsilon: f64, rng: &mut R) -> Result<usize> {
    let q = q_values(qnet, state)?;
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..q.len()));
    }
    Ok(argmax_lowest(&q))
}

/// TD targets `r + gamma * max_a' Q_T(s', a')`.
pub fn td_targets(target: &DenseNet, batch: &[&DqnTransition], gamma: f64) -> Result<Vec<f64>> {
    let next = stack(target.input_size(), batch.iter().map(|t| &t.next_state))?;
    let q_next = target.predict(&next)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(r, t)| {
            let best = q_next.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            t.reward + gamma * best
        })
        .collect())
}

fn stack<'a>(dim: usize, states: impl Iterator<Item = &'a StateVector>) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut n = 0;
    for s in states {
        if s.len() != dim {
            return Err(Error::dim("dqn state", dim, s.len()));
        }
        data.extend_from_slice(s.as_slice());
        n += 1;
    }
    Matrix::from_vec(n, dim, data)
}

/// Loss `mean_b (y_b - Q(s_b, a_b))^2` and its parameter gradients. Only the taken
/// action's head carries gradient.
pub fn dqn_gradients<R: Rng>(
    qnet: &DenseNet,
    target: &DenseNet,
    batch: &[&DqnTransition],
    gamma: f64,
    rng: &mut R,
) -> Result<(f64, crate::nncore::Gradients)> {
    if batch.is_empty() {
        return Err(Error::Precondition("dqn batch is empty".into()));
    }
    let n_actions = qnet.output_size();
    if let Some(t) = batch.iter().find(|t| t.action >= n_actions) {
        return Err(Error::Bounds {
            index: t.action,
            len: n_actions,
        });
    }
    let y = td_targets(target, batch, gamma)?;
    let states = stack(qnet.input_size(), batch.iter().map(|t| &t.state))?;
    let acts = qnet.forward(&states, true, rng)?;
    let b = batch.len() as f64;
    let mut d_out = Matrix::zeros(batch.len(), n_actions);
    let mut loss = 0.0;
    for (r, t) in batch.iter().enumerate() {
        let err = acts.output().get(r, t.action) - y[r];
        loss += err * err;
        d_out.set(r, t.action, 2.0 * err / b);
    }
    loss /= b;
    if !loss.is_finite() {
        return Err(Error::Numeric("dqn loss is not finite".into()));
    }
    let (grads, _) = qnet.backward_from_output(&acts, &d_out)?;
    Ok((loss, grads))
}

/// One optimizer step on the TD loss. Returns the loss before the step.
pub fn dqn_update<R: Rng>(
    qnet: &mut DenseNet,
    opt: &mut SgdMomentum,
    target: &DenseNet,
    batch: &[&DqnTransition],
    gamma: f64,
    rng: &mut R,
) -> Result<f64> {
    let (loss, grads) = dqn_gradients(qnet, target, batch, gamma, rng)?;
    opt.step(qnet, &grads)?;
    Ok(loss)
}

/// Hard copy of the online parameters into the target.
pub fn target_sync(qnet: &DenseNet, target: &mut DenseNet) -> Result<()> {
    if !qnet.same_shape(target) {
        return Err(Error::Precondition("target shape differs from online network".into()));
    }
    target.clone_from(qnet);
    Ok(())
}

pub struct DqnTeacher {
    pub config: DqnConfig,
    pub qnet: DenseNet,
    pub target: DenseNet,
    pub opt: SgdMomentum,
    pub replay: ReplayBuffer<DqnTransition>,
    pub rng: ChaCha8Rng,
    pub updates: u64,
    pub env_steps: u64,
    /// Iteration index within the current episode.
    pub episode_iter: usize,
}

impl DqnTeacher {
    pub fn new(config: DqnConfig, state_dim: usize) -> Result<Self> {
        config.validate()?;
        if state_dim == 0 {
            return Err(Error::Precondition("state dimension must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut sizes = vec![state_dim];
        sizes.extend(vec![config.hidden_nodes; config.hidden_layers]);
        sizes.push(config.n_actions);
        let qnet = DenseNet::new(DenseNetSpec::new(sizes, OutputHead::Linear, config.dropout)?, &mut rng)?;
        let opt = SgdMomentum::new(config.learning_rate, config.momentum, &qnet)?;
        Ok(DqnTeacher {
            target: qnet.clone(),
            qnet,
            opt,
            replay: ReplayBuffer::new(config.buffer_capacity)?,
            rng,
            config,
            updates: 0,
            env_steps: 0,
            episode_iter: 0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.qnet.input_size()
    }

    pub fn update(&mut self, batch: &[&DqnTransition]) -> Result<f64> {
        let loss = dqn_update(&mut self.qnet, &mut self.opt, &self.target, batch, self.config.gamma, &mut self.rng)?;
        self.updates += 1;
        Ok(loss)
    }

    /// Run one student. With `learn` off the policy is greedy (ε = 0 after the
    /// random first batch) and nothing is stored.
    pub fn run_episode<E: Environment + ?Sized>(
        &mut self,
        env: &mut E,
        iterations: usize,
        learn: bool,
        student_id: usize,
    ) -> Result<Vec<EpisodeRecord>> {
        if iterations == 0 {
            return Err(Error::Precondition("episode needs at least one iteration".into()));
        }
        if env.state_dim() != self.state_dim() {
            return Err(Error::Transfer {
                checkpoint: self.state_dim(),
                dataset: env.state_dim(),
            });
        }
        if env.n_batches() != self.config.n_actions {
            return Err(Error::dim("dqn actions vs plan batches", self.config.n_actions, env.n_batches()));
        }
        env.reset(student_id)?;
        let m = self.config.period;
        let mode = if learn { "dqn_train" } else { "dqn_greedy" };
        let mut state = env.state()?;
        let mut records = Vec::with_capacity(iterations);
        for i in 0..iterations {
            if learn {
                self.episode_iter = i;
            }
            let epsilon = if learn {
                epsilon_at(i, iterations, &self.config)
            } else {
                0.0
            };
            let action = if i == 0 {
                self.rng.random_range(0..self.config.n_actions)
            } else {
                select_batch(&self.qnet, &state, epsilon, &mut self.rng)?
            };
            let outcome = env.step(Selection::Batch(action))?;
            let next_state = env.state()?;
            if learn {
                let t = DqnTransition {
                    state: state.clone(),
                    action,
                    reward: outcome.reward,
                    next_state: next_state.clone(),
                };
                self.update(&[&t])?;
                self.replay.push(t);
                self.env_steps += 1;
                if i % m == 0 && self.replay.len() >= m {
                    let sampled: Vec<DqnTransition> = self.replay.sample(m, &mut self.rng)?.into_iter().cloned().collect();
                    self.update(&sampled.iter().collect::<Vec<_>>())?;
                    target_sync(&self.qnet, &mut self.target)?;
                }
            }
            let mut rec = EpisodeRecord::new(student_id, i, Selection::Batch(action), &outcome, mode);
            rec.epsilon = Some(epsilon);
            records.push(rec);
            state = next_state;
        }
        Ok(records)
    }

    pub fn train<E: Environment + ?Sized>(&mut self, env: &mut E, students: usize, iterations: usize) -> Result<TrainingRun> {
        if students == 0 {
            return Err(Error::Precondition("need at least one student".into()));
        }
        let mut run = TrainingRun::default();
        for student_id in 0..students {
            let records = self.run_episode(env, iterations, true, student_id)?;
            run.students.push(StudentSummary::from_records(student_id, &records));
            run.records.extend(records);
        }
        Ok(run)
    }

    pub fn checkpoint(&self) -> DqnCheckpoint {
        DqnCheckpoint {
            format_version: DQN_FORMAT_VERSION,
            config: self.config.clone(),
            qnet: NetCheckpoint::capture(&self.qnet, Some(&self.opt)),
            target: NetCheckpoint::capture(&self.target, None),
            episode_iter: self.episode_iter,
            updates: self.updates,
            env_steps: self.env_steps,
        }
    }

    pub fn from_checkpoint(ck: &DqnCheckpoint) -> Result<Self> {
        if ck.format_version != DQN_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported dqn format version {}", ck.format_version)));
        }
        ck.config.validate()?;
        let (qnet, opt) = ck.qnet.restore()?;
        let (target, _) = ck.target.restore()?;
        if !qnet.same_shape(&target) || qnet.output_size() != ck.config.n_actions {
            return Err(Error::Checkpoint("network shapes are inconsistent".into()));
        }
        let opt = match opt {
            Some(o) => o,
            None => SgdMomentum::new(ck.config.learning_rate, ck.config.momentum, &qnet)?,
        };
        Ok(DqnTeacher {
            config: ck.config.clone(),
            qnet,
            target,
            opt,
            replay: ReplayBuffer::new(ck.config.buffer_capacity)?,
            rng: ChaCha8Rng::seed_from_u64(ck.config.seed ^ ck.env_steps.rotate_left(32)),
            updates: ck.updates,
            env_steps: ck.env_steps,
            episode_iter: ck.episode_iter,
        })
    }
}

pub const DQN_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqnCheckpoint {
    pub format_version: u32,
    pub config: DqnConfig,
    pub qnet: NetCheckpoint,
    pub target: NetCheckpoint,
    pub episode_iter: usize,
    pub updates: u64,
    pub env_steps: u64,
}
