//! Continuous-action teacher trained with deep deterministic policy gradients.
//!
//! The actor maps a student state to a raw pair in `[-1, 1]^2` that is scaled to a
//! window `(center, width)` over the sorted curriculum. The critic sees the state
//! concatenated with the raw action and has one Q head per action coordinate by
//! default. Target copies of both networks track the online ones by soft updates.

mod noise;

pub use noise::OuNoise;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{EpisodeRecord, Environment, Selection};
use crate::error::{Error, Result};
use crate::nncore::{DenseNet, DenseNetSpec, Loss, Matrix, NetCheckpoint, OutputHead, SgdMomentum};
use crate::replay::{ReplayBuffer, Transition};
use crate::student::StateVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub tau: f64,
    /// Soft-update both targets after this many online updates.
    pub update_frequency: u64,
    pub replay_batch: usize,
    /// Environment steps between learning rounds.
    pub replay_every: u64,
    pub buffer_capacity: usize,
    pub hidden_layers: usize,
    pub hidden_nodes: usize,
    pub dropout: f64,
    pub momentum: f64,
    pub learning_rate: f64,
    /// 2 = one Q head per action coordinate; 1 = scalar critic.
    pub critic_heads: usize,
    pub noise_theta: f64,
    pub noise_sigma: f64,
    pub noise_sigma_end: f64,
    /// Largest window width; `None` means `ceil(n_train / 10)`.
    pub width_max: Option<usize>,
    /// Probability that constrained mode forces the width to zero.
    pub constrain_prob: f64,
    pub seed: u64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            gamma: 0.95,
            tau: 0.005,
            update_frequency: 20,
            replay_batch: 10,
            replay_every: 10,
            buffer_capacity: 1_000_000,
            hidden_layers: 3,
            hidden_nodes: 50,
            dropout: 0.2,
            momentum: 0.9,
            learning_rate: 0.01,
            critic_heads: 2,
            noise_theta: 0.15,
            noise_sigma: 0.2,
            noise_sigma_end: 0.02,
            width_max: None,
            constrain_prob: 0.999,
            seed: 0,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.replay_batch == 0 || self.buffer_capacity < self.replay_batch {
            return fail("replay batch must be >= 1 and no larger than the buffer".into());
        }
        if self.update_frequency == 0 || self.replay_every == 0 {
            return fail("update periods must be >= 1".into());
        }
        if !(self.critic_heads == 1 || self.critic_heads == 2) {
            return fail(format!("critic heads must be 1 or 2, got {}", self.critic_heads));
        }
        if !(0.0..=1.0).contains(&self.constrain_prob) {
            return fail("constrain probability must lie in [0, 1]".into());
        }
        if self.hidden_layers == 0 || self.hidden_nodes == 0 {
            return fail("teacher needs at least one hidden layer".into());
        }
        Ok(())
    }

    pub fn width_max_for(&self, n_train: usize) -> usize {
        self.width_max.unwrap_or_else(|| n_train.div_ceil(10))
    }

    fn hidden(&self) -> Vec<usize> {
        vec![self.hidden_nodes; self.hidden_layers]
    }
}

/// Raw pair to `(center, width)`:
/// `center = round((raw0 + 1) / 2 * (n_train - 1))`, `width = round((raw1 + 1) / 2 * width_max)`.
pub fn scale_action(raw: [f64; 2], n_train: usize, width_max: usize) -> (usize, usize) {
    let unit = |x: f64| ((x.clamp(-1.0, 1.0) + 1.0) / 2.0).clamp(0.0, 1.0);
    let last = n_train.saturating_sub(1);
    let center = ((unit(raw[0]) * last as f64).round() as usize).min(last);
    let width = ((unit(raw[1]) * width_max as f64).round() as usize).min(width_max);
    (center, width)
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut DenseNet, online: &DenseNet, tau: f64) -> Result<()> {
    target.blend_toward(online, tau)
}

/// Add iid `N(0, sigma^2)` to every entry.
pub fn perturb_state<R: Rng + ?Sized>(state: &StateVector, sigma: f64, rng: &mut R) -> Result<StateVector> {
    if !(sigma >= 0.0) {
        return Err(Error::Precondition(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(state.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(StateVector(state.0.iter().map(|x| x + normal.sample(rng)).collect()))
}

/// How an episode is run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeMode {
    /// Add exploration noise to actions.
    pub explore: bool,
    /// Store transitions and update the networks.
    pub learn: bool,
    /// Force width 0 with probability `constrain_prob`.
    pub constrained: bool,
}

impl EpisodeMode {
    pub const TRAIN: EpisodeMode = EpisodeMode {
        explore: true,
        learn: true,
        constrained: false,
    };
    pub const GREEDY: EpisodeMode = EpisodeMode {
        explore: false,
        learn: false,
        constrained: false,
    };

    pub fn constrained(self) -> Self {
        EpisodeMode {
            constrained: true,
            ..self
        }
    }

    pub fn label(&self) -> &'static str {
        match (self.learn, self.constrained) {
            (true, false) => "train",
            (false, false) => "greedy",
            (true, true) => "constrained_train",
            (false, true) => "constrained_greedy",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentSummary {
    pub student_id: usize,
    pub best_test_acc: f64,
    pub best_val_acc: f64,
    pub best_iter: usize,
}

impl StudentSummary {
    /// Best test accuracy (first occurrence) over an episode.
    pub fn from_records(student_id: usize, records: &[EpisodeRecord]) -> Self {
        let mut s = StudentSummary {
            student_id,
            best_test_acc: f64::NEG_INFINITY,
            best_val_acc: f64::NEG_INFINITY,
            best_iter: 0,
        };
        for r in records {
            if r.test_acc > s.best_test_acc {
                s.best_test_acc = r.test_acc;
                s.best_iter = r.iter;
            }
            s.best_val_acc = s.best_val_acc.max(r.val_acc);
        }
        s
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainingRun {
    pub students: Vec<StudentSummary>,
    pub records: Vec<EpisodeRecord>,
}

pub struct DdpgTeacher {
    pub config: DdpgConfig,
    pub actor: DenseNet,
    pub actor_target: DenseNet,
    pub critic: DenseNet,
    pub critic_target: DenseNet,
    pub actor_opt: SgdMomentum,
    pub critic_opt: SgdMomentum,
    pub noise: OuNoise,
    pub replay: ReplayBuffer<Transition>,
    pub rng: ChaCha8Rng,
    /// Online (critic + actor) update rounds so far.
    pub updates: u64,
    /// Environment steps stored so far.
    pub env_steps: u64,
}

impl DdpgTeacher {
    pub fn new(config: DdpgConfig, state_dim: usize) -> Result<Self> {
        config.validate()?;
        if state_dim == 0 {
            return Err(Error::Precondition("state dimension must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut actor_sizes = vec![state_dim];
        actor_sizes.extend(config.hidden());
        actor_sizes.push(2);
        let mut critic_sizes = vec![state_dim + 2];
        critic_sizes.extend(config.hidden());
        critic_sizes.push(config.critic_heads);

        let actor = DenseNet::new(DenseNetSpec::new(actor_sizes, OutputHead::Tanh, config.dropout)?, &mut rng)?;
        let critic = DenseNet::new(DenseNetSpec::new(critic_sizes, OutputHead::Linear, config.dropout)?, &mut rng)?;
        let actor_opt = SgdMomentum::new(config.learning_rate, config.momentum, &actor)?;
        let critic_opt = SgdMomentum::new(config.learning_rate, config.momentum, &critic)?;
        let noise = OuNoise::new(config.noise_theta, config.noise_sigma, config.noise_sigma_end, 0);
        let replay = ReplayBuffer::new(config.buffer_capacity)?;
        Ok(DdpgTeacher {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
            noise,
            replay,
            rng,
            config,
            updates: 0,
            env_steps: 0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_size()
    }

    fn check_state(&self, state: &StateVector) -> Result<()> {
        if state.len() != self.state_dim() {
            return Err(Error::dim("teacher state", self.state_dim(), state.len()));
        }
        Ok(())
    }

    /// Deterministic policy output `tanh(actor(state))`, dropout off.
    pub fn policy(&self, state: &StateVector) -> Result<[f64; 2]> {
        self.check_state(state)?;
        let out = self.actor.predict(&state.to_row())?;
        Ok([out.get(0, 0), out.get(0, 1)])
    }

    /// Policy output plus the given noise, clamped to `[-1, 1]^2`.
    pub fn act_with_noise(&self, state: &StateVector, noise: [f64; 2]) -> Result<[f64; 2]> {
        let mu = self.policy(state)?;
        Ok([
            (mu[0] + noise[0]).clamp(-1.0, 1.0),
            (mu[1] + noise[1]).clamp(-1.0, 1.0),
        ])
    }

    /// Raw action; with `explore` the OU process supplies the noise.
    pub fn act(&mut self, state: &StateVector, explore: bool) -> Result<[f64; 2]> {
        let noise = if explore {
            self.noise.sample(&mut self.rng)
        } else {
            [0.0; 2]
        };
        self.act_with_noise(state, noise)
    }

    fn stack_states<'a>(&self, states: impl Iterator<Item = &'a StateVector>) -> Result<Matrix> {
        let mut rows = Vec::new();
        let mut n = 0;
        for s in states {
            self.check_state(s)?;
            rows.extend_from_slice(s.as_slice());
            n += 1;
        }
        Matrix::from_vec(n, self.state_dim(), rows)
    }

    /// `y = r + gamma * Q_T(s', mu_T(s'))`, one column per critic head. No terminal masking.
    pub fn critic_targets(&self, batch: &[&Transition]) -> Result<Matrix> {
        if batch.is_empty() {
            return Err(Error::Precondition("critic target batch is empty".into()));
        }
        let next = self.stack_states(batch.iter().map(|t| &t.next_state))?;
        let next_actions = self.actor_target.predict(&next)?;
        let q_next = self.critic_target.predict(&next.hstack(&next_actions)?)?;
        let mut y = q_next;
        for (r, t) in batch.iter().enumerate() {
            for v in y.row_mut(r) {
                *v = t.reward + self.config.gamma * *v;
            }
        }
        Ok(y)
    }

    /// One SGD-momentum step on the mean squared error between `y` and `Q(s, a)`.
    /// Returns the loss before the step.
    pub fn train_critic(&mut self, batch: &[&Transition]) -> Result<f64> {
        let y = self.critic_targets(batch)?;
        let states = self.stack_states(batch.iter().map(|t| &t.state))?;
        let actions = Matrix::from_vec(batch.len(), 2, batch.iter().flat_map(|t| t.action).collect())?;
        let input = states.hstack(&actions)?;
        let acts = self.critic.forward(&input, true, &mut self.rng)?;
        let loss = self.critic.loss(&acts, &y, Loss::Mse)?;
        if !loss.is_finite() {
            return Err(Error::Numeric("critic loss is not finite".into()));
        }
        let grads = self.critic.backward(&acts, &y, Loss::Mse)?;
        self.critic_opt.step(&mut self.critic, &grads)?;
        Ok(loss)
    }

    /// Objective `J = mean_b sum_heads Q(s_b, mu(s_b))` at the current parameters.
    pub fn actor_objective(&self, states: &[&StateVector]) -> Result<f64> {
        let s = self.stack_states(states.iter().copied())?;
        let a = self.actor.predict(&s)?;
        let q = self.critic.predict(&s.hstack(&a)?)?;
        Ok(q.data().iter().sum::<f64>() / states.len() as f64)
    }

    /// One ascent step on `J`, the gradient reaching the actor through the
    /// critic's action inputs. Critic parameters are not touched. Returns `J`
    /// before the step.
    pub fn train_actor(&mut self, states: &[&StateVector]) -> Result<f64> {
        if states.is_empty() {
            return Err(Error::Precondition("actor batch is empty".into()));
        }
        let s = self.stack_states(states.iter().copied())?;
        let b = states.len() as f64;
        let actor_acts = self.actor.forward(&s, true, &mut self.rng)?;
        let critic_acts = self.critic.forward_eval(&s.hstack(actor_acts.output())?)?;
        let objective = critic_acts.output().data().iter().sum::<f64>() / b;

        let d_q = Matrix::filled(states.len(), self.critic.output_size(), 1.0 / b);
        let (_, d_input) = self.critic.backward_from_output(&critic_acts, &d_q)?;
        let dim = self.state_dim();
        // descend on -J
        let mut d_action = d_input.column_slice(dim, dim + 2)?;
        d_action.scale(-1.0);
        let (grads, _) = self.actor.backward_from_output(&actor_acts, &d_action)?;
        self.actor_opt.step(&mut self.actor, &grads)?;
        Ok(objective)
    }

    /// Critic then actor on one batch; soft-update targets every `update_frequency` rounds.
    pub fn learn(&mut self, batch: &[&Transition]) -> Result<f64> {
        let loss = self.train_critic(batch)?;
        let states: Vec<&StateVector> = batch.iter().map(|t| &t.state).collect();
        self.train_actor(&states)?;
        self.updates += 1;
        if self.updates % self.config.update_frequency == 0 {
            soft_update(&mut self.critic_target, &self.critic, self.config.tau)?;
            soft_update(&mut self.actor_target, &self.actor, self.config.tau)?;
        }
        Ok(loss)
    }

    /// Store a transition; every `replay_every` steps learn once on the most recent
    /// `replay_batch` transitions and once on a uniform replay sample.
    pub fn observe(&mut self, transition: Transition) -> Result<()> {
        self.replay.push(transition);
        self.env_steps += 1;
        if self.env_steps % self.config.replay_every != 0 {
            return Ok(());
        }
        let m = self.config.replay_batch;
        if self.replay.len() < m {
            return Ok(());
        }
        let recent: Vec<Transition> = self.replay.recent(m)?.into_iter().cloned().collect();
        self.learn(&recent.iter().collect::<Vec<_>>())?;
        let sampled: Vec<Transition> = self.replay.sample(m, &mut self.rng)?.into_iter().cloned().collect();
        self.learn(&sampled.iter().collect::<Vec<_>>())?;
        Ok(())
    }

    /// Run one student for `iterations` steps.
    pub fn run_episode<E: Environment + ?Sized>(
        &mut self,
        env: &mut E,
        iterations: usize,
        mode: EpisodeMode,
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
        env.reset(student_id)?;
        if mode.explore {
            self.noise.reset();
        }
        let n_train = env.curriculum_len();
        let width_max = self.config.width_max_for(n_train);
        let mut state = env.state()?;
        let mut records = Vec::with_capacity(iterations);
        for iter in 0..iterations {
            let mut raw = self.act(&state, mode.explore)?;
            if mode.constrained && self.rng.random_bool(self.config.constrain_prob) {
                raw[1] = -1.0;
            }
            let (center, width) = scale_action(raw, n_train, width_max);
            let selection = Selection::Window { center, width };
            let outcome = env.step(selection)?;
            let next_state = env.state()?;
            if mode.learn {
                self.observe(Transition {
                    state: state.clone(),
                    action: raw,
                    reward: outcome.reward,
                    next_state: next_state.clone(),
                })?;
            }
            records.push(EpisodeRecord::new(student_id, iter, selection, &outcome, mode.label()));
            state = next_state;
        }
        Ok(records)
    }

    /// Train over `students` fresh students of `iterations` steps each, sharing the
    /// replay buffer. Exploration sigma decays over the first half of all steps.
    pub fn train<E: Environment + ?Sized>(
        &mut self,
        env: &mut E,
        students: usize,
        iterations: usize,
        constrained: bool,
    ) -> Result<TrainingRun> {
        if students == 0 || iterations == 0 {
            return Err(Error::Precondition("need at least one student and one iteration".into()));
        }
        self.noise.decay_steps = (students * iterations / 2) as u64;
        let mode = if constrained {
            EpisodeMode::TRAIN.constrained()
        } else {
            EpisodeMode::TRAIN
        };
        let mut run = TrainingRun::default();
        for student_id in 0..students {
            let records = self.run_episode(env, iterations, mode, student_id)?;
            run.students.push(StudentSummary::from_records(student_id, &records));
            run.records.extend(records);
        }
        Ok(run)
    }

    pub fn checkpoint(&self) -> DdpgCheckpoint {
        DdpgCheckpoint {
            format_version: TEACHER_FORMAT_VERSION,
            config: self.config.clone(),
            actor: NetCheckpoint::capture(&self.actor, Some(&self.actor_opt)),
            actor_target: NetCheckpoint::capture(&self.actor_target, None),
            critic: NetCheckpoint::capture(&self.critic, Some(&self.critic_opt)),
            critic_target: NetCheckpoint::capture(&self.critic_target, None),
            noise: self.noise.clone(),
            seed: self.config.seed,
            updates: self.updates,
            env_steps: self.env_steps,
        }
    }

    /// Rebuild from a checkpoint. The replay buffer starts empty and the rng is
    /// re-seeded from the stored seed mixed with the step count.
    pub fn from_checkpoint(ck: &DdpgCheckpoint) -> Result<Self> {
        if ck.format_version != TEACHER_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported teacher format version {}",
                ck.format_version
            )));
        }
        ck.config.validate()?;
        let (actor, actor_opt) = ck.actor.restore()?;
        let (critic, critic_opt) = ck.critic.restore()?;
        let (actor_target, _) = ck.actor_target.restore()?;
        let (critic_target, _) = ck.critic_target.restore()?;
        if !actor.same_shape(&actor_target) || !critic.same_shape(&critic_target) {
            return Err(Error::Checkpoint("target shapes differ from online shapes".into()));
        }
        if critic.input_size() != actor.input_size() + 2 || actor.output_size() != 2 {
            return Err(Error::Checkpoint("actor and critic shapes are inconsistent".into()));
        }
        let actor_opt = match actor_opt {
            Some(o) => o,
            None => SgdMomentum::new(ck.config.learning_rate, ck.config.momentum, &actor)?,
        };
        let critic_opt = match critic_opt {
            Some(o) => o,
            None => SgdMomentum::new(ck.config.learning_rate, ck.config.momentum, &critic)?,
        };
        Ok(DdpgTeacher {
            config: ck.config.clone(),
            actor,
            actor_target,
            critic,
            critic_target,
            actor_opt,
            critic_opt,
            noise: ck.noise.clone(),
            replay: ReplayBuffer::new(ck.config.buffer_capacity)?,
            rng: ChaCha8Rng::seed_from_u64(ck.seed ^ ck.env_steps.rotate_left(32)),
            updates: ck.updates,
            env_steps: ck.env_steps,
        })
    }
}

pub const TEACHER_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdpgCheckpoint {
    pub format_version: u32,
    pub config: DdpgConfig,
    pub actor: NetCheckpoint,
    pub actor_target: NetCheckpoint,
    pub critic: NetCheckpoint,
    pub critic_target: NetCheckpoint,
    pub noise: OuNoise,
    pub seed: u64,
    pub updates: u64,
    pub env_steps: u64,
}

#[cfg(test)]
mod tests;
