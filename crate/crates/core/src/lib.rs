//! Counterfactual prediction for panel data with simultaneous treatment adoption.
//!
//! The crate is `no_std` and only needs `alloc`. It provides:
//!
//! * [`panel`]: outcome matrices, treatment masks, train/test splits and preprocessing.
//! * [`propensity`]: logistic propensity scores and the propensity-weighted training loss.
//! * [`classical`]: difference-in-differences, synthetic control, vertical elastic net
//!   and nuclear-norm matrix completion.
//! * [`neural`]: LSTM/GRU layers with hand-written backpropagation through time, the
//!   encoder-decoder and recurrent VAE counterfactual models.
//! * [`inference`]: exact randomization p-values and confidence intervals by test inversion.
//! * [`placebo`]: the placebo benchmarking harness and a null-effect synthetic panel generator.
//!
//! Every estimator implements [`Estimator`], so the harness and the randomization
//! machinery are agnostic to the model being evaluated.

#![no_std]

extern crate alloc;

pub mod classical;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod linalg;
pub mod math;
pub mod neural;
pub mod panel;
pub mod placebo;
pub mod propensity;
pub mod rng;

pub use error::{Error, Result};
pub use estimator::{DiagValue, Diagnostics, EffectEstimate, Estimator, OracleEstimator};
pub use linalg::Matrix;
pub use panel::{PanelMatrix, SplitView, TreatmentMask};
