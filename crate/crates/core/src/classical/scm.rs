//! Synthetic control weights by exponentiated gradient descent on the simplex.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::estimator::{Diagnostics, EffectEstimate, Estimator};
use crate::linalg::Matrix;
use crate::math::exp;
use crate::panel::{split, PanelMatrix, SplitView, TreatmentMask};

/// Nonnegative weights on control units summing to one.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScmWeights {
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ScmConfig {
    pub lr: f64,
    pub iters: usize,
    pub tol: f64,
}

impl Default for ScmConfig {
    fn default() -> Self {
        Self { lr: 0.1, iters: 20_000, tol: 1e-14 }
    }
}

#[derive(Debug, Clone)]
pub struct ScmFit {
    pub weights: ScmWeights,
    /// Objective after each accepted step, starting with the uniform initial weights.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub final_lr: f64,
}

/// Mean squared pre-period gap `(1/T0) ‖x - wᵀ X‖²`.
fn objective(target: &[f64], controls: &Matrix, w: &[f64]) -> f64 {
    let t0 = target.len();
    (0..t0)
        .map(|t| {
            let fit: f64 = (0..controls.rows()).map(|j| w[j] * controls[(j, t)]).sum();
            let r = target[t] - fit;
            r * r
        })
        .sum::<f64>()
        / t0 as f64
}

fn gradient(target: &[f64], controls: &Matrix, w: &[f64]) -> Vec<f64> {
    let (j, t0) = controls.shape();
    let resid: Vec<f64> = (0..t0)
        .map(|t| target[t] - (0..j).map(|k| w[k] * controls[(k, t)]).sum::<f64>())
        .collect();
    (0..j)
        .map(|k| -2.0 / t0 as f64 * controls.row(k).iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>())
        .collect()
}

/// Multiplicative update `w_j ← w_j exp(-lr ∇_j)` followed by renormalisation,
/// evaluated in log space so large steps cannot overflow.
fn eg_step(w: &[f64], grad: &[f64], lr: f64) -> Vec<f64> {
    let logits: Vec<f64> = w
        .iter()
        .zip(grad)
        .map(|(&wj, &g)| if wj > 0.0 { crate::math::ln(wj) - lr * g } else { f64::NEG_INFINITY })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&a| exp(a - max)).collect();
    let total: f64 = out.iter().sum();
    for x in &mut out {
        *x /= total;
    }
    out
}

/// Fits weights for treated unit `treated_row` of `split` against the control pre-period.
///
/// The step size halves whenever a step would raise the objective, so the objective
/// trace is non-increasing.
pub fn scm_fit(split: &SplitView, treated_row: usize, cfg: &ScmConfig) -> Result<ScmFit> {
    scm_fit_observed(split, treated_row, cfg, &mut |_| {})
}

/// [`scm_fit`], calling `observe` with the weights before the first step and after every accepted step.
pub fn scm_fit_observed(
    split: &SplitView,
    treated_row: usize,
    cfg: &ScmConfig,
    observe: &mut dyn FnMut(&[f64]),
) -> Result<ScmFit> {
    let controls = &split.x_train;
    let j = controls.rows();
    if j == 0 || controls.cols() == 0 {
        return Err(invalid!(InvalidArgument, "synthetic control needs at least one control and one pre-period"));
    }
    if treated_row >= split.n_treated() {
        return Err(invalid!(InvalidArgument, "treated row {treated_row} out of range"));
    }
    let target = split.x_test.row(treated_row);
    let mut w = vec![1.0 / j as f64; j];
    let mut obj = objective(target, controls, &w);
    let mut trace = vec![obj];
    let mut lr = cfg.lr;
    let mut iterations = 0;
    observe(&w);
    if j == 1 {
        return Ok(ScmFit { weights: ScmWeights { w }, objective_trace: trace, iterations, final_lr: lr });
    }
    while iterations < cfg.iters {
        iterations += 1;
        let grad = gradient(target, controls, &w);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalDivergence("synthetic control gradient"));
        }
        let mut accepted = None;
        for _ in 0..64 {
            let cand = eg_step(&w, &grad, lr);
            let cand_obj = objective(target, controls, &cand);
            if cand_obj <= obj {
                accepted = Some((cand, cand_obj));
                break;
            }
            lr *= 0.5;
        }
        let Some((cand, cand_obj)) = accepted else { break };
        let improvement = obj - cand_obj;
        w = cand;
        obj = cand_obj;
        trace.push(obj);
        observe(&w);
        if improvement < cfg.tol {
            break;
        }
    }
    Ok(ScmFit { weights: ScmWeights { w }, objective_trace: trace, iterations, final_lr: lr })
}

/// `wᵀ · control_post`.
pub fn scm_predict(weights: &ScmWeights, control_post: &Matrix) -> Result<Vec<f64>> {
    if weights.w.len() != control_post.rows() {
        return Err(Error::ShapeMismatch { expected: (weights.w.len(), control_post.cols()), found: control_post.shape() });
    }
    let mut out = vec![0.0; control_post.cols()];
    control_post.gemv_t_acc(&weights.w, &mut out);
    Ok(out)
}

/// Per-treated-unit synthetic control.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScmEstimator {
    pub config: ScmConfig,
}

impl Estimator for ScmEstimator {
    fn name(&self) -> &str {
        "scm"
    }

    fn estimate(&self, panel: &PanelMatrix, mask: &TreatmentMask, _seed: u64) -> Result<EffectEstimate> {
        panel.require_complete()?;
        let s = split(panel, mask)?;
        let mut y_hat = Matrix::zeros(s.n_treated(), s.t_star());
        let mut iterations = Vec::new();
        let mut pre_mse = Vec::new();
        for g in 0..s.n_treated() {
            let fit = scm_fit(&s, g, &self.config)?;
            y_hat.row_mut(g).copy_from_slice(&scm_predict(&fit.weights, &s.y_train)?);
            iterations.push(fit.iterations as f64);
            pre_mse.push(*fit.objective_trace.last().unwrap_or(&f64::NAN));
        }
        let mut d = Diagnostics::new();
        d.insert("iterations".into(), iterations.into());
        d.insert("pre_period_mse".into(), pre_mse.into());
        EffectEstimate::from_predictions(self.name(), s.y_test, y_hat, d)
    }
}
