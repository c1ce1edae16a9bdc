//! Central finite-difference gradients, used as an independent check on `backward`.

use super::matrix::Matrix;
use super::net::{DenseNet, Gradients, Loss};
use crate::error::{Error, Result};

/// `(L(theta + eps) - L(theta - eps)) / 2 eps` for every parameter, inference mode.
pub fn finite_diff_grad(net: &DenseNet, inputs: &Matrix, targets: &Matrix, loss: Loss, epsilon: f64) -> Result<Gradients> {
    if !(epsilon > 0.0) {
        return Err(Error::Precondition(format!("epsilon must be > 0, got {epsilon}")));
    }
    let eval = |n: &DenseNet| -> Result<f64> { n.loss(&n.forward_eval(inputs)?, targets, loss) };
    // shape check up front so errors surface before the perturbation loop
    eval(net)?;

    let mut probe = net.clone();
    let mut grads = Gradients::zeros_like(net);
    let count = net.param_count();
    for idx in 0..count {
        let original = *probe.params().nth(idx).expect("index within count");
        *probe.params_mut().nth(idx).unwrap() = original + epsilon;
        let plus = eval(&probe)?;
        *probe.params_mut().nth(idx).unwrap() = original - epsilon;
        let minus = eval(&probe)?;
        *probe.params_mut().nth(idx).unwrap() = original;
        *grads.iter_mut().nth(idx).unwrap() = (plus - minus) / (2.0 * epsilon);
    }
    Ok(grads)
}

/// Largest entrywise `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &Gradients, b: &Gradients, floor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
