use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Softmax,
    Linear,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean over rows of `-sum(t * ln p)`. Requires a softmax head.
    CrossEntropy,
    /// Mean over every output entry of `(y - t)^2`.
    Mse,
}

/// Shape of a fully connected ReLU network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNetSpec {
    pub layer_sizes: Vec<usize>,
    pub output_head: OutputHead,
    pub dropout_rate: f64,
}

impl DenseNetSpec {
    pub fn new(layer_sizes: Vec<usize>, output_head: OutputHead, dropout_rate: f64) -> Result<Self> {
        let spec = DenseNetSpec {
            layer_sizes,
            output_head,
            dropout_rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 3 {
            return Err(Error::Config(format!(
                "network needs input, at least one hidden layer and output; got sizes {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!(
                "layer sizes must be >= 1, got {:?}",
                self.layer_sizes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of weight matrices.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }
}

/// Parameter-shaped buffers: one matrix and one bias vector per layer transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            weights: net
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .flat_map(|w| w.data().iter())
            .chain(self.biases.iter().flatten())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .flat_map(|w| w.data_mut().iter_mut())
            .chain(self.biases.iter_mut().flatten())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, g| m.max(g.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        self.iter_mut().for_each(|g| *g *= s);
    }

    pub fn same_shape(&self, other: &Gradients) -> bool {
        self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.shape() == b.shape())
            && self
                .biases
                .iter()
                .zip(&other.biases)
                .all(|(a, b)| a.len() == b.len())
    }
}

/// Everything `forward` computed, kept for `backward`.
#[derive(Clone, Debug)]
pub struct Activations {
    pub inputs: Matrix,
    /// Pre-activation `a W + b` of each layer.
    pub pre: Vec<Matrix>,
    /// Post-activation (after ReLU and dropout for hidden layers, after the head for the last).
    pub post: Vec<Matrix>,
    /// Inverted-dropout multipliers per hidden layer, `None` when dropout was inactive.
    pub masks: Vec<Option<Vec<f64>>>,
}

impl Activations {
    pub fn output(&self) -> &Matrix {
        self.post.last().expect("at least one layer")
    }

    pub fn logits(&self) -> &Matrix {
        self.pre.last().expect("at least one layer")
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub spec: DenseNetSpec,
    /// `weights[k]` is `layer_sizes[k] x layer_sizes[k + 1]`.
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl DenseNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(spec: DenseNetSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::with_capacity(spec.depth());
        let mut biases = Vec::with_capacity(spec.depth());
        for pair in spec.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            weights.push(Matrix::from_vec(fan_in, fan_out, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(DenseNet {
            spec,
            weights,
            biases,
        })
    }

    pub fn zeros(spec: DenseNetSpec) -> Result<Self> {
        spec.validate()?;
        let weights = spec
            .layer_sizes
            .windows(2)
            .map(|p| Matrix::zeros(p[0], p[1]))
            .collect();
        let biases = spec.layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(DenseNet {
            spec,
            weights,
            biases,
        })
    }

    /// Rebuild from explicit parameters, checking every shape against `spec`.
    pub fn from_parts(spec: DenseNetSpec, weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        spec.validate()?;
        if weights.len() != spec.depth() {
            return Err(Error::dim("weight matrix count", spec.depth(), weights.len()));
        }
        if biases.len() != spec.depth() {
            return Err(Error::dim("bias vector count", spec.depth(), biases.len()));
        }
        for (k, pair) in spec.layer_sizes.windows(2).enumerate() {
            if weights[k].rows() != pair[0] {
                return Err(Error::dim("weight rows", pair[0], weights[k].rows()));
            }
            if weights[k].cols() != pair[1] {
                return Err(Error::dim("weight cols", pair[1], weights[k].cols()));
            }
            if biases[k].len() != pair[1] {
                return Err(Error::dim("bias length", pair[1], biases[k].len()));
            }
        }
        Ok(DenseNet {
            spec,
            weights,
            biases,
        })
    }

    pub fn input_size(&self) -> usize {
        self.spec.input_size()
    }

    pub fn output_size(&self) -> usize {
        self.spec.output_size()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.data().len()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .flat_map(|w| w.data().iter())
            .chain(self.biases.iter().flatten())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .flat_map(|w| w.data_mut().iter_mut())
            .chain(self.biases.iter_mut().flatten())
    }

    pub fn same_shape(&self, other: &DenseNet) -> bool {
        self.spec.layer_sizes == other.spec.layer_sizes
    }

    /// Forward pass. Dropout is applied to hidden layers only when `train` is set.
    pub fn forward<R: Rng>(&self, inputs: &Matrix, train: bool, rng: &mut R) -> Result<Activations> {
        self.run(inputs, train, Some(rng))
    }

    /// Inference-mode forward pass, returning only the output.
    pub fn predict(&self, inputs: &Matrix) -> Result<Matrix> {
        let mut acts = self.run(inputs, false, None)?;
        Ok(acts.post.pop().expect("at least one layer"))
    }

    /// Inference-mode forward pass keeping intermediates.
    pub fn forward_eval(&self, inputs: &Matrix) -> Result<Activations> {
        self.run(inputs, false, None)
    }

    fn run(&self, inputs: &Matrix, train: bool, mut rng: Option<&mut dyn RngCore>) -> Result<Activations> {
        if inputs.cols() != self.input_size() {
            return Err(Error::dim("network input width", self.input_size(), inputs.cols()));
        }
        let depth = self.spec.depth();
        let p = self.spec.dropout_rate;
        let dropout_on = train && p > 0.0;
        let keep_scale = 1.0 / (1.0 - p);

        let mut pre = Vec::with_capacity(depth);
        let mut post: Vec<Matrix> = Vec::with_capacity(depth);
        let mut masks = Vec::with_capacity(depth);

        for k in 0..depth {
            let input = if k == 0 { inputs } else { &post[k - 1] };
            let mut z = input.matmul(&self.weights[k])?;
            let cols = z.cols();
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&self.biases[k]) {
                    *v += b;
                }
            }
            debug_assert_eq!(cols, self.biases[k].len());

            let is_output = k + 1 == depth;
            let (a, mask) = if is_output {
                (apply_head(&z, self.spec.output_head), None)
            } else {
                let mut a = z.map(|x| x.max(0.0));
                let mask = if dropout_on {
                    let rng = rng
                        .as_deref_mut()
                        .ok_or_else(|| Error::Precondition("dropout requires an rng".into()))?;
                    let m: Vec<f64> = (0..a.data().len())
                        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep_scale })
                        .collect();
                    a.data_mut().iter_mut().zip(&m).for_each(|(x, m)| *x *= m);
                    Some(m)
                } else {
                    None
                };
                (a, mask)
            };
            pre.push(z);
            post.push(a);
            masks.push(mask);
        }

        Ok(Activations {
            inputs: inputs.clone(),
            pre,
            post,
            masks,
        })
    }

    /// Loss of the outputs held in `acts` against `targets`.
    pub fn loss(&self, acts: &Activations, targets: &Matrix, loss: Loss) -> Result<f64> {
        let out = acts.output();
        if out.shape() != targets.shape() {
            return Err(Error::dim("target shape", out.data().len(), targets.data().len()));
        }
        let batch = out.rows().max(1) as f64;
        match loss {
            Loss::CrossEntropy => {
                self.require_softmax()?;
                let logits = acts.logits();
                let mut total = 0.0;
                for r in 0..logits.rows() {
                    let log_probs = log_softmax(logits.row(r));
                    total -= log_probs
                        .iter()
                        .zip(targets.row(r))
                        .map(|(lp, t)| if *t == 0.0 { 0.0 } else { t * lp })
                        .sum::<f64>();
                }
                Ok(total / batch)
            }
            Loss::Mse => {
                let n = out.data().len().max(1) as f64;
                Ok(out
                    .data()
                    .iter()
                    .zip(targets.data())
                    .map(|(y, t)| (y - t) * (y - t))
                    .sum::<f64>()
                    / n)
            }
        }
    }

    /// Gradient of the batch-mean loss w.r.t. every parameter.
    pub fn backward(&self, acts: &Activations, targets: &Matrix, loss: Loss) -> Result<Gradients> {
        let out = acts.output();
        if targets.rows() != out.rows() {
            return Err(Error::dim("target batch size", out.rows(), targets.rows()));
        }
        if targets.cols() != out.cols() {
            return Err(Error::dim("target width", out.cols(), targets.cols()));
        }
        let d_logits = match loss {
            Loss::CrossEntropy => {
                self.require_softmax()?;
                // softmax + cross-entropy collapses to (p - t) / B at the logits
                let batch = out.rows().max(1) as f64;
                let mut d = out.clone();
                d.data_mut()
                    .iter_mut()
                    .zip(targets.data())
                    .for_each(|(g, t)| *g = (*g - t) / batch);
                d
            }
            Loss::Mse => {
                let n = out.data().len().max(1) as f64;
                let mut d_out = out.clone();
                d_out
                    .data_mut()
                    .iter_mut()
                    .zip(targets.data())
                    .for_each(|(g, t)| *g = 2.0 * (*g - t) / n);
                self.head_backward(acts, &d_out)
            }
        };
        Ok(self.backprop_logits(acts, d_logits)?.0)
    }

    /// Backpropagate an arbitrary gradient w.r.t. the network output (post head).
    /// Returns parameter gradients and the gradient w.r.t. the inputs.
    pub fn backward_from_output(&self, acts: &Activations, d_output: &Matrix) -> Result<(Gradients, Matrix)> {
        let out = acts.output();
        if d_output.shape() != out.shape() {
            return Err(Error::dim("output gradient size", out.data().len(), d_output.data().len()));
        }
        let d_logits = self.head_backward(acts, d_output);
        self.backprop_logits(acts, d_logits)
    }

    fn require_softmax(&self) -> Result<()> {
        if self.spec.output_head != OutputHead::Softmax {
            return Err(Error::Config("cross-entropy loss requires a softmax head".into()));
        }
        Ok(())
    }

    fn head_backward(&self, acts: &Activations, d_out: &Matrix) -> Matrix {
        let out = acts.output();
        match self.spec.output_head {
            OutputHead::Linear => d_out.clone(),
            OutputHead::Tanh => {
                let mut d = d_out.clone();
                d.data_mut()
                    .iter_mut()
                    .zip(out.data())
                    .for_each(|(g, y)| *g *= 1.0 - y * y);
                d
            }
            OutputHead::Softmax => {
                let mut d = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let p = out.row(r);
                    let g = d_out.row(r);
                    let dot: f64 = p.iter().zip(g).map(|(p, g)| p * g).sum();
                    for (dz, (p, g)) in d.row_mut(r).iter_mut().zip(p.iter().zip(g)) {
                        *dz = p * (g - dot);
                    }
                }
                d
            }
        }
    }

    fn backprop_logits(&self, acts: &Activations, d_logits: Matrix) -> Result<(Gradients, Matrix)> {
        let depth = self.spec.depth();
        let mut grads = Gradients::zeros_like(self);
        let mut dz = d_logits;
        for k in (0..depth).rev() {
            let input = if k == 0 { &acts.inputs } else { &acts.post[k - 1] };
            let gw = &mut grads.weights[k];
            let out_cols = dz.cols();
            for r in 0..dz.rows() {
                let dz_row = dz.row(r);
                for (i, &a) in input.row(r).iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for (g, d) in gw.row_mut(i).iter_mut().zip(dz_row) {
                        *g += a * d;
                    }
                }
                for (gb, d) in grads.biases[k].iter_mut().zip(dz_row) {
                    *gb += d;
                }
            }
            debug_assert_eq!(out_cols, self.weights[k].cols());

            // d input = dz W^T
            let w = &self.weights[k];
            let mut d_in = Matrix::zeros(dz.rows(), w.rows());
            for r in 0..dz.rows() {
                let dz_row = dz.row(r);
                for (i, slot) in d_in.row_mut(r).iter_mut().enumerate() {
                    *slot = w.row(i).iter().zip(dz_row).map(|(w, d)| w * d).sum();
                }
            }

            if k > 0 {
                // through dropout then ReLU of hidden layer k-1
                let pre = &acts.pre[k - 1];
                let mask = acts.masks[k - 1].as_deref();
                for (idx, g) in d_in.data_mut().iter_mut().enumerate() {
                    if pre.data()[idx] <= 0.0 {
                        *g = 0.0;
                    } else if let Some(m) = mask {
                        *g *= m[idx];
                    }
                }
            }
            dz = d_in;
        }
        Ok((grads, dz))
    }

    /// `self <- tau * online + (1 - tau) * self`, parameter by parameter.
    pub fn blend_toward(&mut self, online: &DenseNet, tau: f64) -> Result<()> {
        if !self.same_shape(online) {
            return Err(Error::dim(
                "soft update parameter count",
                self.param_count(),
                online.param_count(),
            ));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Precondition(format!("tau must lie in [0, 1], got {tau}")));
        }
        for (t, o) in self.params_mut().zip(online.params()) {
            *t = tau * o + (1.0 - tau) * *t;
        }
        Ok(())
    }
}

fn apply_head(z: &Matrix, head: OutputHead) -> Matrix {
    match head {
        OutputHead::Linear => z.clone(),
        OutputHead::Tanh => z.map(f64::tanh),
        OutputHead::Softmax => {
            let mut out = z.clone();
            for r in 0..out.rows() {
                softmax_in_place(out.row_mut(r));
            }
            out
        }
    }
}

/// Max-subtracted softmax. The subtraction changes low-order bits relative to the naive form.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    row.iter_mut().for_each(|x| *x /= sum);
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - max - lse).collect()
}

/// One-hot target matrix for integer labels.
pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), n_classes);
    for (r, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::Bounds {
                index: l,
                len: n_classes,
            });
        }
        m.set(r, l, 1.0);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn zero_net_softmax_is_uniform() {
        let spec = DenseNetSpec::new(vec![3, 4, 5], OutputHead::Softmax, 0.0).unwrap();
        let net = DenseNet::zeros(spec).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]]).unwrap();
        let out = net.predict(&x).unwrap();
        assert!(out.data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn zero_dropout_train_equals_eval() {
        let spec = DenseNetSpec::new(vec![3, 6, 6, 2], OutputHead::Tanh, 0.0).unwrap();
        let net = DenseNet::new(spec, &mut rng()).unwrap();
        let x = Matrix::from_rows(&[vec![0.3, -0.1, 0.9]]).unwrap();
        let a = net.forward(&x, true, &mut rng()).unwrap();
        let b = net.predict(&x).unwrap();
        assert_eq!(a.output(), &b);
    }

    #[test]
    fn hand_evaluated_two_layer_chain() {
        // 2-2-2: h = relu(x W0 + b0), p = softmax(h W1 + b1)
        let spec = DenseNetSpec::new(vec![2, 2, 2], OutputHead::Softmax, 0.0).unwrap();
        let w0 = Matrix::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0]]).unwrap();
        let w1 = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 1.0]]).unwrap();
        let net = DenseNet::from_parts(spec, vec![w0, w1], vec![vec![0.1, 0.0], vec![0.0, 0.2]]).unwrap();
        let x = Matrix::row_vector(&[1.0, 1.0]);
        // z0 = [1 + 0.5 + 0.1, -1 + 2] = [1.6, 1.0]; h = [1.6, 1.0]
        // z1 = [1.6 - 1.0, 1.0 + 0.2] = [0.6, 1.2]
        let e0 = 0.6f64.exp();
        let e1 = 1.2f64.exp();
        let expect = [e0 / (e0 + e1), e1 / (e0 + e1)];
        let out = net.predict(&x).unwrap();
        for (o, e) in out.data().iter().zip(expect) {
            assert!((o - e).abs() < 1e-15);
        }
        // second input kills the first hidden unit
        let x = Matrix::row_vector(&[-1.0, 0.0]);
        // z0 = [-0.9, 1.0] -> h = [0, 1]; z1 = [-1, 1.2]
        let e0 = (-1.0f64).exp();
        let out = net.predict(&x).unwrap();
        assert!((out.get(0, 0) - e0 / (e0 + e1)).abs() < 1e-15);
    }

    #[test]
    fn softmax_extreme_logits_stay_finite() {
        let mut row = vec![1e3, -1e3, 999.0];
        softmax_in_place(&mut row);
        assert!(row.iter().all(|x| x.is_finite()));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dropout_inverted_scaling_preserves_mean() {
        let spec = DenseNetSpec::new(vec![1, 2000, 1], OutputHead::Linear, 0.2).unwrap();
        let mut net = DenseNet::zeros(spec).unwrap();
        net.weights[0].data_mut().fill(1.0);
        net.weights[1].data_mut().fill(1.0 / 2000.0);
        let x = Matrix::row_vector(&[1.0]);
        let mut r = rng();
        let mean: f64 = (0..200)
            .map(|_| net.forward(&x, true, &mut r).unwrap().output().get(0, 0))
            .sum::<f64>()
            / 200.0;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn perfect_prediction_has_zero_output_gradient() {
        let spec = DenseNetSpec::new(vec![2, 3, 2], OutputHead::Linear, 0.0).unwrap();
        let net = DenseNet::new(spec, &mut rng()).unwrap();
        let x = Matrix::from_rows(&[vec![0.2, 0.4], vec![-0.3, 0.1]]).unwrap();
        let acts = net.forward_eval(&x).unwrap();
        let targets = acts.output().clone();
        let g = net.backward(&acts, &targets, Loss::Mse).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn softmax_ce_logit_gradient_is_probabilities_minus_targets() {
        // single-layer path: bias gradient of the last layer equals column sums of (p - t)/B
        let spec = DenseNetSpec::new(vec![2, 3, 3], OutputHead::Softmax, 0.0).unwrap();
        let net = DenseNet::new(spec, &mut rng()).unwrap();
        let x = Matrix::from_rows(&[vec![0.2, 0.4], vec![-0.3, 0.1]]).unwrap();
        let t = one_hot(&[2, 0], 3).unwrap();
        let acts = net.forward_eval(&x).unwrap();
        let g = net.backward(&acts, &t, Loss::CrossEntropy).unwrap();
        let p = acts.output();
        for c in 0..3 {
            let expect = ((p.get(0, c) - t.get(0, c)) + (p.get(1, c) - t.get(1, c))) / 2.0;
            assert!((g.biases[1][c] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicated_batch_gives_same_mean_gradient() {
        let spec = DenseNetSpec::new(vec![2, 4, 3], OutputHead::Softmax, 0.0).unwrap();
        let net = DenseNet::new(spec, &mut rng()).unwrap();
        let x = Matrix::from_rows(&[vec![0.2, 0.4], vec![-0.3, 0.1]]).unwrap();
        let t = one_hot(&[1, 2], 3).unwrap();
        let x2 = x.select_rows(&[0, 1, 0, 1]).unwrap();
        let t2 = t.select_rows(&[0, 1, 0, 1]).unwrap();
        let g1 = net.backward(&net.forward_eval(&x).unwrap(), &t, Loss::CrossEntropy).unwrap();
        let g2 = net.backward(&net.forward_eval(&x2).unwrap(), &t2, Loss::CrossEntropy).unwrap();
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_mismatched_batch() {
        let spec = DenseNetSpec::new(vec![2, 3, 2], OutputHead::Softmax, 0.0).unwrap();
        let net = DenseNet::new(spec, &mut rng()).unwrap();
        let acts = net.forward_eval(&Matrix::zeros(3, 2)).unwrap();
        let err = net.backward(&acts, &Matrix::zeros(2, 2), Loss::CrossEntropy);
        assert!(matches!(err, Err(Error::Dimension { .. })));
        assert!(net.forward_eval(&Matrix::zeros(1, 5)).is_err());
    }

    #[test]
    fn cross_entropy_needs_softmax() {
        let spec = DenseNetSpec::new(vec![2, 3, 2], OutputHead::Linear, 0.0).unwrap();
        let net = DenseNet::new(spec, &mut rng()).unwrap();
        let acts = net.forward_eval(&Matrix::zeros(1, 2)).unwrap();
        assert!(net.backward(&acts, &Matrix::zeros(1, 2), Loss::CrossEntropy).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(DenseNetSpec::new(vec![2, 2], OutputHead::Linear, 0.0).is_err());
        assert!(DenseNetSpec::new(vec![2, 0, 2], OutputHead::Linear, 0.0).is_err());
        assert!(DenseNetSpec::new(vec![2, 2, 2], OutputHead::Linear, 1.0).is_err());
    }

    #[test]
    fn glorot_bounds_respected() {
        let spec = DenseNetSpec::new(vec![10, 20, 5], OutputHead::Linear, 0.0).unwrap();
        let net = DenseNet::new(spec, &mut rng()).unwrap();
        let limit0 = (6.0f64 / 30.0).sqrt();
        assert!(net.weights[0].max_abs() <= limit0);
        assert!(net.biases.iter().flatten().all(|&b| b == 0.0));
    }
}
