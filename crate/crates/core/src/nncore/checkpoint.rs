use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::net::{DenseNet, DenseNetSpec, Gradients};
use super::optim::SgdMomentum;
use crate::error::{Error, Result};

pub const NET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Flat, portable snapshot of a network and optionally its optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub format_version: u32,
    pub spec: DenseNetSpec,
    /// Row-major weight arrays, one per layer transition.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub velocity: Option<OptimizerState>,
}

impl NetCheckpoint {
    pub fn capture(net: &DenseNet, opt: Option<&SgdMomentum>) -> Self {
        NetCheckpoint {
            format_version: NET_FORMAT_VERSION,
            spec: net.spec.clone(),
            weights: net.weights.iter().map(|w| w.data().to_vec()).collect(),
            biases: net.biases.clone(),
            velocity: opt.map(|o| OptimizerState {
                learning_rate: o.learning_rate,
                momentum: o.momentum,
                weights: o.velocity.weights.iter().map(|w| w.data().to_vec()).collect(),
                biases: o.velocity.biases.clone(),
            }),
        }
    }

    /// Rebuild, validating the version and every array shape.
    pub fn restore(&self) -> Result<(DenseNet, Option<SgdMomentum>)> {
        if self.format_version != NET_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported network format version {} (expected {NET_FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.spec.validate()?;
        let weights = shaped(&self.spec, &self.weights)?;
        let net = DenseNet::from_parts(self.spec.clone(), weights, self.biases.clone())?;
        let opt = match &self.velocity {
            None => None,
            Some(state) => {
                let mut opt = SgdMomentum::new(state.learning_rate, state.momentum, &net)?;
                let velocity = Gradients {
                    weights: shaped(&self.spec, &state.weights)?,
                    biases: state.biases.clone(),
                };
                if !velocity.same_shape(&opt.velocity) {
                    return Err(Error::Checkpoint("optimizer velocity shape does not match network".into()));
                }
                opt.velocity = velocity;
                Some(opt)
            }
        };
        Ok((net, opt))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn shaped(spec: &DenseNetSpec, flat: &[Vec<f64>]) -> Result<Vec<Matrix>> {
    if flat.len() != spec.depth() {
        return Err(Error::dim("checkpoint weight arrays", spec.depth(), flat.len()));
    }
    spec.layer_sizes
        .windows(2)
        .zip(flat)
        .map(|(p, data)| Matrix::from_vec(p[0], p[1], data.clone()))
        .collect()
}
