//! The contract every counterfactual estimator satisfies.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::panel::{split, PanelMatrix, TreatmentMask};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(untagged))]
pub enum DiagValue {
    Flag(bool),
    Int(i64),
    Number(f64),
    Text(String),
    List(Vec<f64>),
}

impl From<f64> for DiagValue {
    fn from(v: f64) -> Self {
        DiagValue::Number(v)
    }
}

impl From<usize> for DiagValue {
    fn from(v: usize) -> Self {
        DiagValue::Int(v as i64)
    }
}

impl From<bool> for DiagValue {
    fn from(v: bool) -> Self {
        DiagValue::Flag(v)
    }
}

impl From<&str> for DiagValue {
    fn from(v: &str) -> Self {
        DiagValue::Text(v.into())
    }
}

impl From<String> for DiagValue {
    fn from(v: String) -> Self {
        DiagValue::Text(v)
    }
}

impl From<Vec<f64>> for DiagValue {
    fn from(v: Vec<f64>) -> Self {
        DiagValue::List(v)
    }
}

pub type Diagnostics = BTreeMap<String, DiagValue>;

/// Counterfactual predictions for the treated post-period and the implied effects.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EffectEstimate {
    pub estimator_name: String,
    pub y_test: Matrix,
    pub y_hat_test: Matrix,
    /// `y_test - y_hat_test`.
    pub phi_hat: Matrix,
    /// Column means of `phi_hat` over treated units, one per post period.
    pub phi_bar: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl EffectEstimate {
    pub fn from_predictions(name: &str, y_test: Matrix, y_hat_test: Matrix, diagnostics: Diagnostics) -> Result<Self> {
        if y_test.shape() != y_hat_test.shape() {
            return Err(Error::ShapeMismatch { expected: y_test.shape(), found: y_hat_test.shape() });
        }
        let (g, t_star) = y_test.shape();
        let phi_hat = Matrix::from_fn(g, t_star, |i, t| y_test[(i, t)] - y_hat_test[(i, t)]);
        let phi_bar = (0..t_star).map(|t| (0..g).map(|i| phi_hat[(i, t)]).sum::<f64>() / g as f64).collect();
        Ok(Self { estimator_name: name.into(), y_test, y_hat_test, phi_hat, phi_bar, diagnostics })
    }

    /// Mean of `phi_bar` over the post period.
    pub fn average_effect(&self) -> f64 {
        self.phi_bar.iter().sum::<f64>() / self.phi_bar.len() as f64
    }
}

/// A counterfactual predictor for treated post-period outcomes.
///
/// `seed` drives any internal randomness (cross-validation folds, network
/// initialisation); the same inputs and seed must give the same estimate.
pub trait Estimator: Sync {
    fn name(&self) -> &str;

    fn estimate(&self, panel: &PanelMatrix, mask: &TreatmentMask, seed: u64) -> Result<EffectEstimate>;
}

impl<E: Estimator + ?Sized> Estimator for &E {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn estimate(&self, panel: &PanelMatrix, mask: &TreatmentMask, seed: u64) -> Result<EffectEstimate> {
        (**self).estimate(panel, mask, seed)
    }
}

impl<E: Estimator + ?Sized> Estimator for alloc::boxed::Box<E> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn estimate(&self, panel: &PanelMatrix, mask: &TreatmentMask, seed: u64) -> Result<EffectEstimate> {
        (**self).estimate(panel, mask, seed)
    }
}

/// Predicts the observed treated outcomes, so every effect is zero. Useful as a harness check.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleEstimator;

impl Estimator for OracleEstimator {
    fn name(&self) -> &str {
        "oracle"
    }

    fn estimate(&self, panel: &PanelMatrix, mask: &TreatmentMask, _seed: u64) -> Result<EffectEstimate> {
        let s = split(panel, mask)?;
        EffectEstimate::from_predictions(self.name(), s.y_test.clone(), s.y_test, Diagnostics::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effects_follow_from_predictions() {
        let y = Matrix::from_rows(&[[3.0, 4.0], [1.0, 2.0]]);
        let yh = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
        let e = EffectEstimate::from_predictions("t", y.clone(), yh, Diagnostics::new()).unwrap();
        assert_eq!(e.phi_hat, Matrix::from_rows(&[[2.0, 3.0], [0.0, 1.0]]));
        assert_eq!(e.phi_bar, alloc::vec![1.0, 2.0]);
        // Substituting the predictions for the observations gives exactly zero.
        let z = EffectEstimate::from_predictions("t", e.y_hat_test.clone(), e.y_hat_test, Diagnostics::new()).unwrap();
        assert!(z.phi_hat.as_slice().iter().all(|&x| x == 0.0));
        assert!(EffectEstimate::from_predictions("t", y, Matrix::zeros(1, 2), Diagnostics::new()).is_err());
    }
}
