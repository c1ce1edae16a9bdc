use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Ornstein-Uhlenbeck exploration noise (unit time step, mean 0) whose sigma
/// decays linearly from `sigma_start` to `sigma_end` over `decay_steps` samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuNoise {
    pub theta: f64,
    pub sigma_start: f64,
    pub sigma_end: f64,
    pub decay_steps: u64,
    pub steps: u64,
    pub state: [f64; 2],
}

impl OuNoise {
    pub fn new(theta: f64, sigma_start: f64, sigma_end: f64, decay_steps: u64) -> Self {
        OuNoise {
            theta,
            sigma_start,
            sigma_end,
            decay_steps,
            steps: 0,
            state: [0.0; 2],
        }
    }

    pub fn sigma(&self) -> f64 {
        if self.decay_steps == 0 || self.steps >= self.decay_steps {
            return self.sigma_end;
        }
        let frac = self.steps as f64 / self.decay_steps as f64;
        self.sigma_start + (self.sigma_end - self.sigma_start) * frac
    }

    /// `x <- x + theta (0 - x) + sigma * N(0, 1)`, per coordinate.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> [f64; 2] {
        let sigma = self.sigma();
        for x in &mut self.state {
            let z: f64 = rng.sample(StandardNormal);
            *x += -self.theta * *x + sigma * z;
        }
        self.steps += 1;
        self.state
    }

    /// Zero the process state, keeping the decay schedule position.
    pub fn reset(&mut self) {
        self.state = [0.0; 2];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigma_schedule_is_linear_then_flat() {
        let mut n = OuNoise::new(0.15, 0.2, 0.02, 10);
        assert_eq!(n.sigma(), 0.2);
        n.steps = 5;
        assert!((n.sigma() - 0.11).abs() < 1e-15);
        n.steps = 50;
        assert_eq!(n.sigma(), 0.02);
    }

    #[test]
    fn mean_reverts_without_diffusion() {
        let mut n = OuNoise::new(0.15, 0.0, 0.0, 0);
        n.state = [1.0, -2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            n.sample(&mut rng);
        }
        assert!(n.state.iter().all(|x| x.abs() < 1e-6));
    }
}
