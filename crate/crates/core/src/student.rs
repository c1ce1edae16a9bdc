//! The student classifier, its weight-state encoding, and the reward signal.

use serde::{Deserialize, Serialize};

use crate::curriculum::Dataset;
use crate::error::{Error, Result};
use crate::nncore::{one_hot, DenseNet, DenseNetSpec, Loss, Matrix, NetCheckpoint, OutputHead, SgdMomentum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub hidden_layers: usize,
    pub hidden_nodes: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            hidden_layers: 2,
            hidden_nodes: 50,
            learning_rate: 0.001,
            seed: 0,
        }
    }
}

impl StudentConfig {
    pub fn layer_sizes(&self, n_features: usize, n_classes: usize) -> Vec<usize> {
        let mut sizes = vec![n_features];
        sizes.extend(std::iter::repeat_n(self.hidden_nodes, self.hidden_layers));
        sizes.push(n_classes);
        sizes
    }

    /// Length of the encoded state: two scalars per row of every encoded matrix.
    pub fn state_dim(&self) -> usize {
        2 * self.hidden_layers * self.hidden_nodes
    }
}

/// ReLU classifier with a softmax head, trained by plain SGD.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Student {
    pub config: StudentConfig,
    pub net: DenseNet,
    pub optimizer: SgdMomentum,
    pub step_counter: u64,
}

/// Fixed unit reference directions, one per encoded weight matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceVectors {
    pub vectors: Vec<Vec<f64>>,
}

impl ReferenceVectors {
    /// Normalized all-ones vector matching the row length of each encoded matrix.
    pub fn for_student(student: &Student) -> Self {
        ReferenceVectors {
            vectors: student
                .encoded_matrices()
                .iter()
                .map(|w| {
                    let m = w.cols();
                    vec![1.0 / (m as f64).sqrt(); m]
                })
                .collect(),
        }
    }
}

/// Encoded student weights: per encoded matrix, all `|<W_n, a>|` then all `angle(W_n, a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_row(&self) -> Matrix {
        Matrix::row_vector(&self.0)
    }
}

pub fn init_student(config: &StudentConfig, n_features: usize, n_classes: usize) -> Result<Student> {
    if n_features == 0 || n_classes == 0 {
        return Err(Error::Precondition("student needs at least one feature and one class".into()));
    }
    if config.hidden_layers == 0 {
        return Err(Error::Config("student needs at least one hidden layer".into()));
    }
    if !(config.learning_rate >= 0.0) {
        return Err(Error::Config("student learning rate must be >= 0".into()));
    }
    let spec = DenseNetSpec::new(config.layer_sizes(n_features, n_classes), OutputHead::Softmax, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let net = DenseNet::new(spec, &mut rng)?;
    let optimizer = SgdMomentum::new(config.learning_rate, 0.0, &net)?;
    Ok(Student {
        config: config.clone(),
        net,
        optimizer,
        step_counter: 0,
    })
}

impl Student {
    /// The matrices whose rows are hidden units: every transition except input to first hidden.
    pub fn encoded_matrices(&self) -> &[Matrix] {
        &self.net.weights[1..]
    }

    pub fn n_classes(&self) -> usize {
        self.net.output_size()
    }

    pub fn encode_state(&self, refs: &ReferenceVectors) -> Result<StateVector> {
        encode_matrices(self.encoded_matrices(), refs)
    }

    /// One SGD step on the selected rows as a single mini-batch.
    pub fn train_on_indices(&mut self, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
        if indices.is_empty() {
            return Err(Error::Precondition("training batch is empty".into()));
        }
        if dataset.n_classes != self.n_classes() {
            return Err(Error::dim("dataset class count", self.n_classes(), dataset.n_classes));
        }
        let x = dataset.features.select_rows(indices)?;
        let labels: Vec<usize> = indices.iter().map(|&i| dataset.labels[i]).collect();
        let t = one_hot(&labels, self.n_classes())?;
        let acts = self.net.forward_eval(&x)?;
        let loss = self.net.loss(&acts, &t, Loss::CrossEntropy)?;
        let grads = self.net.backward(&acts, &t, Loss::CrossEntropy)?;
        self.optimizer.step(&mut self.net, &grads)?;
        self.step_counter += 1;
        Ok(loss)
    }

    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        let probs = self.net.predict(features)?;
        Ok(probs.row_iter().map(argmax_lowest).collect())
    }

    /// Fraction of rows whose argmax (lowest id on ties) equals the label.
    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::Precondition("accuracy on an empty split".into()));
        }
        let pred = self.predict(&dataset.features)?;
        let hits = pred.iter().zip(&dataset.labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / dataset.len() as f64)
    }

    pub fn mean_loss(&self, dataset: &Dataset) -> Result<f64> {
        let t = one_hot(&dataset.labels, self.n_classes())?;
        let acts = self.net.forward_eval(&dataset.features)?;
        self.net.loss(&acts, &t, Loss::CrossEntropy)
    }
}

pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise `(|<w, a>|, angle(w, a))` encoding, magnitudes first within each matrix.
pub fn encode_matrices(matrices: &[Matrix], refs: &ReferenceVectors) -> Result<StateVector> {
    if refs.vectors.len() != matrices.len() {
        return Err(Error::dim("reference vector count", matrices.len(), refs.vectors.len()));
    }
    let total: usize = matrices.iter().map(Matrix::rows).sum();
    let mut v = Vec::with_capacity(2 * total);
    for (w, a) in matrices.iter().zip(&refs.vectors) {
        if a.len() != w.cols() {
            return Err(Error::dim("reference vector length", w.cols(), a.len()));
        }
        let a_norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dots: Vec<f64> = w
            .row_iter()
            .map(|row| row.iter().zip(a).map(|(x, y)| x * y).sum())
            .collect();
        v.extend(dots.iter().map(|d| d.abs()));
        for (row, d) in w.row_iter().zip(&dots) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            let angle = if norm == 0.0 || a_norm == 0.0 {
                std::f64::consts::FRAC_PI_2
            } else {
                (d / (norm * a_norm)).clamp(-1.0, 1.0).acos()
            };
            v.push(angle);
        }
    }
    Ok(StateVector(v))
}

/// `(delta_t - delta_prev) * validation_accuracy`.
pub fn reward(delta_t: f64, delta_prev: f64, validation_accuracy: f64) -> Result<f64> {
    for (name, v) in [
        ("delta_t", delta_t),
        ("delta_prev", delta_prev),
        ("validation accuracy", validation_accuracy),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Precondition(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    Ok((delta_t - delta_prev) * validation_accuracy)
}

/// Persisted student: network schema plus bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentCheckpoint {
    pub net: NetCheckpoint,
    pub config: StudentConfig,
    pub step_counter: u64,
    pub best_accuracy_so_far: f64,
}

impl StudentCheckpoint {
    pub fn capture(student: &Student, best_accuracy_so_far: f64) -> Self {
        StudentCheckpoint {
            net: NetCheckpoint::capture(&student.net, Some(&student.optimizer)),
            config: student.config.clone(),
            step_counter: student.step_counter,
            best_accuracy_so_far,
        }
    }

    pub fn restore(&self) -> Result<Student> {
        let (net, opt) = self.net.restore()?;
        let optimizer = match opt {
            Some(o) => o,
            None => SgdMomentum::new(self.config.learning_rate, 0.0, &net)?,
        };
        Ok(Student {
            config: self.config.clone(),
            net,
            optimizer,
            step_counter: self.step_counter,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_dataset() -> Dataset {
        // two linearly separable classes in 2-D
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            let sign = if c == 0 { -1.0 } else { 1.0 };
            rows.push(vec![sign * 2.0 + rng.random_range(-0.3..0.3), rng.random_range(-1.0..1.0)]);
            labels.push(c);
        }
        Dataset::new(Matrix::from_rows(&rows).unwrap(), labels, 2).unwrap()
    }

    fn cfg(seed: u64) -> StudentConfig {
        StudentConfig {
            seed,
            learning_rate: 0.1,
            ..StudentConfig::default()
        }
    }

    #[test]
    fn default_layer_sizes() {
        let s = init_student(&StudentConfig::default(), 7, 3).unwrap();
        assert_eq!(s.net.spec.layer_sizes, vec![7, 50, 50, 3]);
    }

    #[test]
    fn seeds_control_initialisation() {
        let a = init_student(&cfg(1), 4, 2).unwrap();
        let b = init_student(&cfg(1), 4, 2).unwrap();
        let c = init_student(&cfg(2), 4, 2).unwrap();
        assert_eq!(a.net, b.net);
        assert_ne!(a.net, c.net);
    }

    #[test]
    fn default_state_has_two_hundred_entries() {
        let s = init_student(&StudentConfig::default(), 9, 4).unwrap();
        let refs = ReferenceVectors::for_student(&s);
        let v = s.encode_state(&refs).unwrap();
        assert_eq!(v.len(), 200);
        assert_eq!(v.len(), StudentConfig::default().state_dim());
        let (mags, angles) = v.0[..100].split_at(50);
        assert!(mags.iter().all(|&m| m >= 0.0));
        assert!(angles.iter().all(|&a| (0.0..=std::f64::consts::PI).contains(&a)));
    }

    #[test]
    fn parallel_and_orthogonal_rows() {
        let a = vec![0.6, 0.8];
        let refs = ReferenceVectors { vectors: vec![a.clone()] };
        let w = Matrix::from_rows(&[vec![1.2, 1.6], vec![-0.8, 0.6], vec![0.0, 0.0]]).unwrap();
        let v = encode_matrices(&[w], &refs).unwrap();
        // magnitudes: |c| * |a|^2 with c = 2, then 0, then 0
        assert!((v.0[0] - 2.0).abs() < 1e-15);
        assert!(v.0[1].abs() < 1e-15);
        assert_eq!(v.0[2], 0.0);
        // angles
        assert!(v.0[3].abs() < 1e-7);
        assert!((v.0[4] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(v.0[5], std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let ds = toy_dataset();
        let mut s = init_student(
            &StudentConfig {
                learning_rate: 0.0,
                ..cfg(3)
            },
            2,
            2,
        )
        .unwrap();
        let before = s.net.clone();
        s.train_on_indices(&ds, &[0, 1, 2]).unwrap();
        assert_eq!(s.net, before);
        assert_eq!(s.step_counter, 1);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let ds = toy_dataset();
        let all: Vec<usize> = (0..ds.len()).collect();
        let mut a = init_student(&cfg(4), 2, 2).unwrap();
        let mut b = a.clone();
        let before = a.mean_loss(&ds).unwrap();
        a.train_on_indices(&ds, &all).unwrap();
        b.train_on_indices(&ds, &all).unwrap();
        assert_eq!(a.net, b.net);
        assert!(a.mean_loss(&ds).unwrap() < before);
    }

    #[test]
    fn empty_batch_rejected() {
        let ds = toy_dataset();
        let mut s = init_student(&cfg(5), 2, 2).unwrap();
        assert!(matches!(s.train_on_indices(&ds, &[]), Err(Error::Precondition(_))));
    }

    #[test]
    fn uniform_net_predicts_class_zero() {
        // zero net -> uniform softmax -> argmax tie -> class 0; balanced 4 classes -> 0.25
        let mut s = init_student(&cfg(6), 3, 4).unwrap();
        s.net.params_mut().for_each(|p| *p = 0.0);
        let labels: Vec<usize> = (0..20).map(|i| i % 4).collect();
        let ds = Dataset::new(Matrix::filled(20, 3, 0.5), labels, 4).unwrap();
        assert_eq!(s.accuracy(&ds).unwrap(), 0.25);
        let empty = Dataset::new(Matrix::zeros(0, 3), vec![], 4).unwrap();
        assert!(s.accuracy(&empty).is_err());
    }

    #[test]
    fn reward_formula() {
        assert_eq!(reward(0.4, 0.4, 0.9).unwrap(), 0.0);
        assert!((reward(0.6, 0.5, 0.5).unwrap() - 0.05).abs() < 1e-15);
        assert!(reward(0.3, 0.5, 0.5).unwrap() < 0.0);
        assert!(reward(1.2, 0.5, 0.5).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let ds = toy_dataset();
        let mut s = init_student(&cfg(8), 2, 2).unwrap();
        s.train_on_indices(&ds, &[0, 1]).unwrap();
        let ck = StudentCheckpoint::capture(&s, 0.75);
        let text = serde_json::to_string(&ck).unwrap();
        let back: StudentCheckpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back.restore().unwrap(), s);
        assert_eq!(back.best_accuracy_so_far, 0.75);
    }
}
