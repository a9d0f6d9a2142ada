//! Recurrent counterfactual models built on hand-written layers.
//!
//! * [`layers`]: dense, LSTM and GRU layers with backward passes.
//! * [`optim`]: Adam and plain SGD on flattened parameters.
//! * [`encdec`]: a two-layer LSTM encoder feeding a GRU decoder, trained with teacher forcing.
//! * [`rvae`]: a recurrent variational autoencoder with a log-normal latent.
//!
//! Each unit is one training sample, time is the sequence axis and there is a single
//! feature per step.

pub mod encdec;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod rvae;

pub use encdec::{
    train_encoder_decoder, EncoderDecoderConfig, EncoderDecoderEstimator, EncoderDecoderNet, Sample,
};
pub use layers::{gru_step, lstm_step, xavier_init, Dense, Gru, Lstm, Params};
pub use optim::{adam_step, sgd_step, AdamHyper, AdamState};
pub use rvae::{rvae_predict, train_rvae, RvaeConfig, RvaeEstimator, RvaeLog, RvaeNet};

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::math::sqrt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` means `min(32, training samples)`.
    pub batch_size: Option<usize>,
    pub input_dropout_rate: f64,
    pub l2_coeff: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub adam: AdamHyper,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            epochs: 1000,
            batch_size: None,
            input_dropout_rate: 0.2,
            l2_coeff: 1e-4,
            validation_fraction: 0.2,
            seed: 0,
            optimizer: Optimizer::Adam,
            adam: AdamHyper::default(),
        }
    }
}

impl TrainConfig {
    /// Defaults for the recurrent VAE: SGD for 5000 epochs.
    pub fn rvae_default() -> Self {
        Self { epochs: 5000, optimizer: Optimizer::Sgd, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.input_dropout_rate) {
            return Err(invalid!(InvalidArgument, "dropout rate {} outside [0, 1)", self.input_dropout_rate));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(invalid!(InvalidArgument, "validation fraction {} outside (0, 1)", self.validation_fraction));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid!(InvalidArgument, "learning rate must be positive"));
        }
        if self.l2_coeff < 0.0 {
            return Err(invalid!(InvalidArgument, "negative L2 coefficient"));
        }
        if self.batch_size == Some(0) {
            return Err(invalid!(InvalidArgument, "batch size must be positive"));
        }
        Ok(())
    }
}

/// Per-epoch losses.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingLog {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
}

/// Applies one optimizer step to `params` with gradient `grads`.
pub(crate) struct Stepper {
    cfg: TrainConfig,
    adam: AdamState,
}

impl Stepper {
    pub(crate) fn new(cfg: &TrainConfig, n: usize) -> Self {
        Self { cfg: cfg.clone(), adam: AdamState::new(n) }
    }

    pub(crate) fn step<P: Params>(&mut self, params: &mut P, grads: &P) {
        let mut flat = params.flatten();
        let g = grads.flatten();
        match self.cfg.optimizer {
            Optimizer::Adam => {
                let h = self.cfg.adam;
                adam_step(&mut flat, &g, &mut self.adam, self.cfg.learning_rate, h.beta1, h.beta2, h.eps)
            }
            Optimizer::Sgd => sgd_step(&mut flat, &g, self.cfg.learning_rate),
        }
        params.load(&flat);
    }
}

/// Adds the gradient of `c Σ‖W‖²` to `grads`.
pub(crate) fn add_l2_grad<P: Params>(params: &P, grads: &mut P, c: f64) {
    if c == 0.0 {
        return;
    }
    let flat = params.flatten();
    let mut k = 0;
    grads.visit_mut(&mut |b, w| {
        for g in b.iter_mut() {
            if w {
                *g += 2.0 * c * flat[k];
            }
            k += 1;
        }
    });
}

/// Scalar location and scale used to standardize inputs before training.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Standardizer {
    pub mean: f64,
    pub scale: f64,
}

impl Standardizer {
    pub fn fit(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = sqrt(var);
        Self { mean, scale: if sd > 1e-12 { sd } else { 1.0 } }
    }

    pub fn forward(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale
    }

    pub fn inverse(&self, x: f64) -> f64 {
        x * self.scale + self.mean
    }
}
