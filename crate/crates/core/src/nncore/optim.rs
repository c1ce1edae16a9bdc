use serde::{Deserialize, Serialize};

use super::net::{DenseNet, Gradients};
use crate::error::{Error, Result};

/// SGD with classical momentum:
/// `v <- momentum * v + g`, `theta <- theta - lr * v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    pub velocity: Gradients,
}

impl SgdMomentum {
    pub fn new(learning_rate: f64, momentum: f64, net: &DenseNet) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(SgdMomentum {
            learning_rate,
            momentum,
            velocity: Gradients::zeros_like(net),
        })
    }

    /// Apply one update. A non-finite gradient aborts the step and leaves both
    /// the network and the velocity untouched.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        if !grads.same_shape(&self.velocity) {
            return Err(Error::dim(
                "gradient parameter count",
                self.velocity.iter().count(),
                grads.iter().count(),
            ));
        }
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient entry; step aborted".into()));
        }
        let (lr, mu) = (self.learning_rate, self.momentum);
        for ((p, v), g) in net.params_mut().zip(self.velocity.iter_mut()).zip(grads.iter()) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
        Ok(())
    }

    pub fn reset(&mut self) {
        self.velocity.iter_mut().for_each(|v| *v = 0.0);
    }
}
