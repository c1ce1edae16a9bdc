use super::*;
use crate::env::{StepOutcome, Selection};
use crate::nncore::{finite_diff_grad, max_relative_error};

/// Minimal environment: fixed state, reward from a hook on the selection.
struct ToyEnv {
    dim: usize,
    n: usize,
    batches: usize,
    hook: fn(Selection, usize) -> f64,
    steps: usize,
}

impl ToyEnv {
    fn new(dim: usize, n: usize, hook: fn(Selection, usize) -> f64) -> Self {
        ToyEnv {
            dim,
            n,
            batches: 10,
            hook,
            steps: 0,
        }
    }
}

impl Environment for ToyEnv {
    fn state_dim(&self) -> usize {
        self.dim
    }
    fn curriculum_len(&self) -> usize {
        self.n
    }
    fn n_batches(&self) -> usize {
        self.batches
    }
    fn reset(&mut self, _student_id: usize) -> Result<()> {
        self.steps = 0;
        Ok(())
    }
    fn state(&self) -> Result<StateVector> {
        Ok(StateVector((0..self.dim).map(|i| ((i + self.steps) % 7) as f64 * 0.1).collect()))
    }
    fn step(&mut self, selection: Selection) -> Result<StepOutcome> {
        self.steps += 1;
        Ok(StepOutcome {
            reward: (self.hook)(selection, self.n),
            train_acc: 0.5,
            val_acc: 0.5,
            test_acc: 0.5,
        })
    }
}

fn zero_reward(_: Selection, _: usize) -> f64 {
    0.0
}

fn small_config() -> DdpgConfig {
    DdpgConfig {
        hidden_layers: 2,
        hidden_nodes: 8,
        dropout: 0.0,
        seed: 3,
        ..DdpgConfig::default()
    }
}

fn state(values: &[f64]) -> StateVector {
    StateVector(values.to_vec())
}

fn transition(s: &[f64], a: [f64; 2], r: f64, s2: &[f64]) -> Transition {
    Transition {
        state: state(s),
        action: a,
        reward: r,
        next_state: state(s2),
    }
}

#[test]
fn greedy_action_is_repeatable_and_equals_tanh_head() {
    let mut t = DdpgTeacher::new(small_config(), 4).unwrap();
    let s = state(&[0.1, -0.2, 0.3, 0.4]);
    let a = t.act(&s, false).unwrap();
    let b = t.act(&s, false).unwrap();
    assert_eq!(a, b);
    let out = t.actor.predict(&s.to_row()).unwrap();
    assert_eq!(t.act_with_noise(&s, [0.0, 0.0]).unwrap(), [out.get(0, 0), out.get(0, 1)]);
}

#[test]
fn noisy_action_is_clamped() {
    let mut t = DdpgTeacher::new(small_config(), 1).unwrap();
    // rig the actor so tanh output is ~0.99 on both coordinates
    t.actor.params_mut().for_each(|p| *p = 0.0);
    let last = t.actor.biases.len() - 1;
    t.actor.biases[last] = vec![0.99f64.atanh(); 2];
    let a = t.act_with_noise(&state(&[0.0]), [0.1, 0.1]).unwrap();
    assert_eq!(a, [1.0, 1.0]);
}

#[test]
fn scale_action_endpoints_and_midpoint() {
    assert_eq!(scale_action([-1.0, -1.0], 1001, 100), (0, 0));
    assert_eq!(scale_action([1.0, 1.0], 1001, 100), (1000, 100));
    assert_eq!(scale_action([0.0, 0.0], 1001, 100), (500, 50));
    // monotone in each coordinate
    let mut prev = (0, 0);
    for k in 0..=200 {
        let x = -1.0 + k as f64 / 100.0;
        let cur = scale_action([x, x], 57, 13);
        assert!(cur.0 >= prev.0 && cur.1 >= prev.1);
        prev = cur;
    }
}

#[test]
fn zero_gamma_targets_are_rewards() {
    let mut cfg = small_config();
    cfg.gamma = 1e-300;
    let t = DdpgTeacher::new(cfg, 2).unwrap();
    let batch = [
        transition(&[0.1, 0.2], [0.0, 0.5], 0.7, &[0.3, 0.1]),
        transition(&[0.4, 0.2], [0.1, -0.5], -0.2, &[0.0, 0.9]),
    ];
    let y = t.critic_targets(&batch.iter().collect::<Vec<_>>()).unwrap();
    for (r, tr) in batch.iter().enumerate() {
        for h in 0..2 {
            assert!((y.get(r, h) - tr.reward).abs() < 1e-12);
        }
    }
}

#[test]
fn critic_targets_match_manual_target_forward() {
    let t = DdpgTeacher::new(small_config(), 3).unwrap();
    let tr = transition(&[0.1, 0.2, 0.3], [0.2, -0.1], 0.25, &[0.5, -0.4, 0.2]);
    let y = t.critic_targets(&[&tr]).unwrap();
    // by hand: a' = mu_T(s'), q' = Q_T(s', a')
    let s2 = tr.next_state.to_row();
    let a2 = t.actor_target.predict(&s2).unwrap();
    let mut input = tr.next_state.0.clone();
    input.extend_from_slice(a2.data());
    let q2 = t.critic_target.predict(&Matrix::row_vector(&input)).unwrap();
    for h in 0..2 {
        assert!((y.get(0, h) - (0.25 + 0.95 * q2.get(0, h))).abs() < 1e-15);
    }
}

#[test]
fn critic_already_exact_gives_zero_loss_and_no_change() {
    let mut t = DdpgTeacher::new(small_config(), 2).unwrap();
    t.critic.params_mut().for_each(|p| *p = 0.0);
    t.critic_target = t.critic.clone();
    let before = t.critic.clone();
    let tr = transition(&[0.3, 0.1], [0.2, 0.2], 0.0, &[0.2, 0.2]);
    let loss = t.train_critic(&[&tr]).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(t.critic, before);
}

#[test]
fn critic_loss_decreases_on_fixed_batch() {
    let mut t = DdpgTeacher::new(small_config(), 2).unwrap();
    let batch = [
        transition(&[0.1, 0.2], [0.0, 0.5], 1.0, &[0.3, 0.1]),
        transition(&[0.4, 0.2], [0.1, -0.5], -0.5, &[0.0, 0.9]),
        transition(&[0.9, 0.7], [-0.6, 0.3], 0.3, &[0.2, 0.2]),
    ];
    let refs: Vec<&Transition> = batch.iter().collect();
    let first = t.train_critic(&refs).unwrap();
    let mut last = first;
    for _ in 0..49 {
        last = t.train_critic(&refs).unwrap();
    }
    assert!(last < 0.75 * first, "{first} -> {last}");
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let t = DdpgTeacher::new(small_config(), 3).unwrap();
    let batch = [
        transition(&[0.1, 0.2, 0.3], [0.0, 0.5], 1.0, &[0.3, 0.1, 0.0]),
        transition(&[0.4, 0.2, -0.1], [0.1, -0.5], -0.5, &[0.0, 0.9, 0.2]),
        transition(&[0.9, 0.7, 0.5], [-0.6, 0.3], 0.3, &[0.2, 0.2, 0.2]),
    ];
    let refs: Vec<&Transition> = batch.iter().collect();
    let y = t.critic_targets(&refs).unwrap();
    let mut rows = Vec::new();
    for tr in &batch {
        rows.push([tr.state.0.clone(), tr.action.to_vec()].concat());
    }
    let x = Matrix::from_rows(&rows).unwrap();
    let analytic = t.critic.backward(&t.critic.forward_eval(&x).unwrap(), &y, Loss::Mse).unwrap();
    let numeric = finite_diff_grad(&t.critic, &x, &y, Loss::Mse, 1e-5).unwrap();
    assert!(max_relative_error(&analytic, &numeric, 1e-6) < 1e-4);
}

#[test]
fn actor_unchanged_when_critic_ignores_action() {
    let mut t = DdpgTeacher::new(small_config(), 3).unwrap();
    // zero the critic rows fed by the two action inputs
    for r in 3..5 {
        t.critic.weights[0].row_mut(r).fill(0.0);
    }
    let critic_before = t.critic.clone();
    let before = t.actor.clone();
    let s = state(&[0.2, 0.1, -0.3]);
    t.train_actor(&[&s]).unwrap();
    assert_eq!(t.actor, before);
    assert_eq!(t.critic, critic_before);
}

/// Critic whose every head outputs `raw0` (input position `dim`).
fn rig_critic_on_first_action(t: &mut DdpgTeacher, dim: usize) {
    t.critic.params_mut().for_each(|p| *p = 0.0);
    // h1[0] = relu(a0 + 1) >= 0 on [-1, 1]; pass through unit weights; out = h - 1
    t.critic.weights[0].set(dim, 0, 1.0);
    t.critic.biases[0][0] = 1.0;
    for k in 1..t.critic.weights.len() {
        let cols = t.critic.weights[k].cols();
        if k + 1 == t.critic.weights.len() {
            for h in 0..cols {
                t.critic.weights[k].set(0, h, 1.0);
                t.critic.biases[k][h] = -1.0;
            }
        } else {
            t.critic.weights[k].set(0, 0, 1.0);
        }
    }
}

#[test]
fn rigged_critic_pushes_first_action_up() {
    let dim = 3;
    let mut t = DdpgTeacher::new(small_config(), dim).unwrap();
    rig_critic_on_first_action(&mut t, dim);
    let states: Vec<StateVector> = (0..5).map(|i| state(&[0.1 * i as f64, -0.2, 0.3])).collect();
    let refs: Vec<&StateVector> = states.iter().collect();
    let mean_a0 = |t: &DdpgTeacher| refs.iter().map(|s| t.policy(s).unwrap()[0]).sum::<f64>() / 5.0;
    let before = mean_a0(&t);
    t.train_actor(&refs).unwrap();
    assert!(mean_a0(&t) > before);
}

#[test]
fn small_step_ascends_frozen_quadratic_critic() {
    // Q = -(a0 - 0.3)^2 realised by a linear critic on hand-built features is hard;
    // instead freeze a random critic and check first-order ascent for a tiny lr.
    let mut cfg = small_config();
    cfg.learning_rate = 1e-4;
    cfg.momentum = 0.0;
    let mut t = DdpgTeacher::new(cfg, 3).unwrap();
    let states: Vec<StateVector> = (0..4).map(|i| state(&[0.2 * i as f64, 0.5, -0.1])).collect();
    let refs: Vec<&StateVector> = states.iter().collect();
    let before = t.actor_objective(&refs).unwrap();
    let reported = t.train_actor(&refs).unwrap();
    assert_eq!(before, reported);
    assert!(t.actor_objective(&refs).unwrap() >= before);
}

#[test]
fn soft_update_blends() {
    let spec = DenseNetSpec::new(vec![1, 1, 1], OutputHead::Linear, 0.0).unwrap();
    let mut target = DenseNet::zeros(spec.clone()).unwrap();
    target.params_mut().for_each(|p| *p = 2.0);
    let mut online = DenseNet::zeros(spec).unwrap();
    online.params_mut().for_each(|p| *p = 4.0);

    let mut t = target.clone();
    soft_update(&mut t, &online, 0.5).unwrap();
    assert!(t.params().all(|&p| p == 3.0));
    let mut t = target.clone();
    soft_update(&mut t, &online, 0.0).unwrap();
    assert_eq!(t, target);
    let mut t = target.clone();
    soft_update(&mut t, &online, 1.0).unwrap();
    assert_eq!(t, online);

    // two half steps equal one 0.75 step
    let mut twice = target.clone();
    soft_update(&mut twice, &online, 0.5).unwrap();
    soft_update(&mut twice, &online, 0.5).unwrap();
    let mut once = target.clone();
    soft_update(&mut once, &online, 0.75).unwrap();
    for (a, b) in twice.params().zip(once.params()) {
        assert!((a - b).abs() < 1e-12);
    }

    let other = DenseNet::zeros(DenseNetSpec::new(vec![1, 2, 1], OutputHead::Linear, 0.0).unwrap()).unwrap();
    assert!(matches!(soft_update(&mut t, &other, 0.5), Err(Error::Dimension { .. })));
}

#[test]
fn perturbation_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = state(&[1.0, 2.0, 3.0]);
    assert_eq!(perturb_state(&s, 0.0, &mut rng).unwrap(), s);
    assert_eq!(perturb_state(&s, 0.1, &mut rng).unwrap().len(), 3);
    let zeros = StateVector(vec![0.0; 100_000]);
    let noisy = perturb_state(&zeros, 0.1, &mut rng).unwrap();
    let mean = noisy.0.iter().sum::<f64>() / 1e5;
    assert!(mean.abs() < 3.0 * 0.1 / (1e5f64).sqrt(), "mean {mean}");
    assert!(perturb_state(&s, -1.0, &mut rng).is_err());
}

#[test]
fn one_iteration_stores_one_transition() {
    let mut t = DdpgTeacher::new(small_config(), 5).unwrap();
    let mut env = ToyEnv::new(5, 100, zero_reward);
    let log = t.run_episode(&mut env, 1, EpisodeMode::TRAIN, 0).unwrap();
    assert_eq!(log.len(), 1);
    assert_eq!(t.replay.len(), 1);
}

#[test]
fn greedy_episodes_are_reproducible() {
    let run = || {
        let mut t = DdpgTeacher::new(small_config(), 5).unwrap();
        let mut env = ToyEnv::new(5, 100, zero_reward);
        t.run_episode(&mut env, 30, EpisodeMode::GREEDY, 0).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn episode_records_stay_in_bounds() {
    let mut t = DdpgTeacher::new(small_config(), 5).unwrap();
    let mut env = ToyEnv::new(5, 37, zero_reward);
    let wmax = t.config.width_max_for(37);
    let log = t.run_episode(&mut env, 200, EpisodeMode::TRAIN, 0).unwrap();
    assert_eq!(log.len(), 200);
    for r in &log {
        assert!(r.center.unwrap() < 37);
        assert!(r.width.unwrap() <= wmax);
    }
}

#[test]
fn constrained_mode_zeroes_width_almost_always() {
    let mut t = DdpgTeacher::new(small_config(), 5).unwrap();
    let mut env = ToyEnv::new(5, 1000, zero_reward);
    let log = t
        .run_episode(&mut env, 10_000, EpisodeMode::GREEDY.constrained(), 0)
        .unwrap();
    let zeros = log.iter().filter(|r| r.width == Some(0)).count() as f64 / 1e4;
    assert!((0.995..=1.0).contains(&zeros), "{zeros}");
}

#[test]
fn training_counts_transitions_and_students() {
    let mut t = DdpgTeacher::new(small_config(), 5).unwrap();
    let mut env = ToyEnv::new(5, 100, zero_reward);
    let run = t.train(&mut env, 2, 3, false).unwrap();
    assert_eq!(t.replay.len(), 6);
    assert_eq!(run.students.len(), 2);
    assert_eq!(run.records.len(), 6);
}

#[test]
fn targets_move_only_through_soft_updates() {
    let mut cfg = small_config();
    cfg.update_frequency = 1000;
    let mut t = DdpgTeacher::new(cfg, 5).unwrap();
    let (a0, c0) = (t.actor_target.clone(), t.critic_target.clone());
    let mut env = ToyEnv::new(5, 100, |_, _| 1.0);
    t.train(&mut env, 1, 50, false).unwrap();
    assert!(t.updates > 0);
    assert_eq!(t.actor_target, a0);
    assert_eq!(t.critic_target, c0);
}

#[test]
fn state_dimension_mismatch_is_a_transfer_error() {
    let mut t = DdpgTeacher::new(small_config(), 5).unwrap();
    let mut env = ToyEnv::new(6, 100, zero_reward);
    assert!(matches!(
        t.run_episode(&mut env, 1, EpisodeMode::GREEDY, 0),
        Err(Error::Transfer { checkpoint: 5, dataset: 6 })
    ));
}

#[test]
fn checkpoint_round_trip() {
    let mut t = DdpgTeacher::new(small_config(), 5).unwrap();
    let mut env = ToyEnv::new(5, 100, |_, _| 0.5);
    t.train(&mut env, 1, 20, false).unwrap();
    let text = serde_json::to_string(&t.checkpoint()).unwrap();
    let ck: DdpgCheckpoint = serde_json::from_str(&text).unwrap();
    let back = DdpgTeacher::from_checkpoint(&ck).unwrap();
    assert_eq!(back.actor, t.actor);
    assert_eq!(back.critic_target, t.critic_target);
    assert_eq!(back.actor_opt, t.actor_opt);
    assert_eq!(back.checkpoint(), t.checkpoint());
}
