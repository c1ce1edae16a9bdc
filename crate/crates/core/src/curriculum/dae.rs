//! Denoising autoencoder used to embed tabular rows before difficulty scoring.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nncore::{DenseNet, DenseNetSpec, Matrix, OutputHead, SgdMomentum};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaeConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    /// Fraction of input entries zeroed per presentation.
    pub noise: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DaeConfig {
    fn default() -> Self {
        DaeConfig {
            latent_dim: 4,
            hidden: 32,
            noise: 0.2,
            epochs: 30,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl DaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("autoencoder layer widths must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("autoencoder epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("autoencoder batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::Config(format!("masking noise must lie in [0, 1), got {}", self.noise)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("autoencoder learning rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Encoder `d -> hidden -> latent` and mirrored decoder, both with linear outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub initial_mse: f64,
    pub final_mse: f64,
}

impl Autoencoder {
    pub fn encode(&self, features: &Matrix) -> Result<Matrix> {
        self.encoder.predict(features)
    }

    /// Mean squared reconstruction error on uncorrupted inputs.
    pub fn reconstruction_mse(&self, features: &Matrix) -> Result<f64> {
        reconstruction_mse(&self.encoder, &self.decoder, features)
    }
}

fn reconstruction_mse(encoder: &DenseNet, decoder: &DenseNet, x: &Matrix) -> Result<f64> {
    let recon = decoder.predict(&encoder.predict(x)?)?;
    let n = x.data().len().max(1) as f64;
    Ok(recon
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Train on masked copies of the (already standardized) features to reconstruct the clean rows.
pub fn train_dae(dataset: &Dataset, config: &DaeConfig) -> Result<Autoencoder> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Precondition("cannot train an autoencoder on an empty dataset".into()));
    }
    let x = &dataset.features;
    let d = x.cols();
    let degenerate = (0..d).all(|c| {
        let first = x.get(0, c);
        (0..x.rows()).all(|r| x.get(r, c) == first)
    });
    if degenerate {
        return Err(Error::Config("every feature has zero variance; nothing to encode".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let enc_spec = DenseNetSpec::new(vec![d, config.hidden, config.latent_dim], OutputHead::Linear, 0.0)?;
    let dec_spec = DenseNetSpec::new(vec![config.latent_dim, config.hidden, d], OutputHead::Linear, 0.0)?;
    let mut encoder = DenseNet::new(enc_spec, &mut rng)?;
    let mut decoder = DenseNet::new(dec_spec, &mut rng)?;
    let mut enc_opt = SgdMomentum::new(config.learning_rate, config.momentum, &encoder)?;
    let mut dec_opt = SgdMomentum::new(config.learning_rate, config.momentum, &decoder)?;

    let initial_mse = reconstruction_mse(&encoder, &decoder, x)?;
    let mut rows: Vec<usize> = (0..x.rows()).collect();
    for _ in 0..config.epochs {
        rows.shuffle(&mut rng);
        for chunk in rows.chunks(config.batch_size) {
            let clean = x.select_rows(chunk)?;
            let mut noisy = clean.clone();
            if config.noise > 0.0 {
                for v in noisy.data_mut() {
                    if rng.random::<f64>() < config.noise {
                        *v = 0.0;
                    }
                }
            }
            let enc_acts = encoder.forward(&noisy, true, &mut rng)?;
            let dec_acts = decoder.forward(enc_acts.output(), true, &mut rng)?;
            // d/dy of mean((y - x)^2) over all entries
            let n = clean.data().len() as f64;
            let mut d_out = dec_acts.output().clone();
            d_out
                .data_mut()
                .iter_mut()
                .zip(clean.data())
                .for_each(|(y, t)| *y = 2.0 * (*y - t) / n);
            let (dec_grads, d_latent) = decoder.backward_from_output(&dec_acts, &d_out)?;
            let (enc_grads, _) = encoder.backward_from_output(&enc_acts, &d_latent)?;
            dec_opt.step(&mut decoder, &dec_grads)?;
            enc_opt.step(&mut encoder, &enc_grads)?;
        }
    }
    let final_mse = reconstruction_mse(&encoder, &decoder, x)?;
    if !final_mse.is_finite() {
        return Err(Error::Numeric("autoencoder training diverged".into()));
    }
    Ok(Autoencoder {
        encoder,
        decoder,
        initial_mse,
        final_mse,
    })
}
