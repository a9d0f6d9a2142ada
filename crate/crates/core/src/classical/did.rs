//! Difference-in-differences with unit and time fixed effects.
//!
//! Under simultaneous adoption the two-way fixed-effects treatment coefficient equals
//! the difference of pre/post mean changes between treated and control groups. The
//! counterfactual for treated unit `i` at post period `t` is its own pre-period mean
//! plus the control group's change from its pre-period mean to period `t`.

use alloc::vec::Vec;

use crate::error::Result;
use crate::estimator::{Diagnostics, EffectEstimate, Estimator};
use crate::linalg::Matrix;
use crate::math::mean;
use crate::panel::{split, PanelMatrix, TreatmentMask};

pub fn did_estimate(panel: &PanelMatrix, mask: &TreatmentMask) -> Result<EffectEstimate> {
    panel.require_complete()?;
    let s = split(panel, mask)?;
    let (j, t_star) = s.y_train.shape();
    let control_pre = mean(s.x_train.as_slice());
    let control_post: Vec<f64> = (0..t_star).map(|t| (0..j).map(|r| s.y_train[(r, t)]).sum::<f64>() / j as f64).collect();
    let y_hat = Matrix::from_fn(s.n_treated(), t_star, |g, t| mean(s.x_test.row(g)) + control_post[t] - control_pre);

    let treated_change = mean(s.y_test.as_slice()) - mean(s.x_test.as_slice());
    let control_change = mean(s.y_train.as_slice()) - control_pre;
    let mut diagnostics = Diagnostics::new();
    diagnostics.insert("tau".into(), (treated_change - control_change).into());
    EffectEstimate::from_predictions("did", s.y_test, y_hat, diagnostics)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DidEstimator;

impl Estimator for DidEstimator {
    fn name(&self) -> &str {
        "did"
    }

    fn estimate(&self, panel: &PanelMatrix, mask: &TreatmentMask, _seed: u64) -> Result<EffectEstimate> {
        did_estimate(panel, mask)
    }
}
