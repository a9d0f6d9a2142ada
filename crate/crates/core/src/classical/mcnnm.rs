//! Matrix completion with nuclear-norm regularisation (soft-impute).
//!
//! Missing cells are repeatedly filled with the current estimate, the filled matrix is
//! decomposed, and its singular values are soft-thresholded by λ. The treated units'
//! pre-period cells belong to the observed set.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::log_grid_desc;
use crate::error::{invalid, Result};
use crate::estimator::{Diagnostics, EffectEstimate, Estimator};
use crate::linalg::Matrix;
use crate::math::{ceil, ln};
use crate::panel::{PanelMatrix, TreatmentMask};
use crate::rng::{stream, substream};

#[derive(Debug, Clone)]
pub struct SoftImputeResult {
    pub completed: Matrix,
    pub iterations: usize,
    pub converged: bool,
    /// `½‖P_O(Y - L)‖² + λ‖L‖_*` after each iteration.
    pub objective_trace: Vec<f64>,
}

/// `½‖P_O(Y - L)‖² + λ‖L‖_*`.
pub fn nnm_objective(y: &Matrix, observed: &[bool], l: &Matrix, lambda: f64) -> f64 {
    let fit: f64 = y
        .as_slice()
        .iter()
        .zip(l.as_slice())
        .zip(observed)
        .filter(|(_, &o)| o)
        .map(|((a, b), _)| (a - b) * (a - b))
        .sum();
    let nuclear: f64 = l.svd().singular_values.iter().sum();
    0.5 * fit + lambda * nuclear
}

/// Soft-impute at a single λ, warm-started from `init` (zeros when `None`).
pub fn soft_impute(
    y: &Matrix,
    observed: &[bool],
    lambda: f64,
    init: Option<&Matrix>,
    max_iter: usize,
    tol: f64,
) -> SoftImputeResult {
    let (n, t) = y.shape();
    debug_assert_eq!(observed.len(), n * t);
    let mut l = init.cloned().unwrap_or_else(|| Matrix::zeros(n, t));
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut z = l.clone();
        for ((zi, &yi), &o) in z.as_mut_slice().iter_mut().zip(y.as_slice()).zip(observed) {
            if o {
                *zi = yi;
            }
        }
        let svd = z.svd();
        let next = svd.reconstruct_with(|s| (s - lambda).max(0.0));
        let nuclear: f64 = svd.singular_values.iter().map(|s| (s - lambda).max(0.0)).sum();
        let fit: f64 = y
            .as_slice()
            .iter()
            .zip(next.as_slice())
            .zip(observed)
            .filter(|(_, &o)| o)
            .map(|((a, b), _)| (a - b) * (a - b))
            .sum();
        trace.push(0.5 * fit + lambda * nuclear);
        let change: f64 = next.as_slice().iter().zip(l.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
        let scale = l.frobenius_sq().max(1e-300);
        l = next;
        if change / scale < tol || change == 0.0 {
            converged = true;
            break;
        }
    }
    SoftImputeResult { completed: l, iterations, converged, objective_trace: trace }
}

/// Runs soft-impute down a decreasing λ path with warm starts; returns the fit at the last λ.
pub fn soft_impute_path(
    y: &Matrix,
    observed: &[bool],
    path: &[f64],
    max_iter: usize,
    tol: f64,
) -> (SoftImputeResult, Vec<Matrix>) {
    let (n, t) = y.shape();
    let mut current = Matrix::zeros(n, t);
    let mut fits = Vec::with_capacity(path.len());
    let mut last = None;
    for &lambda in path {
        let r = soft_impute(y, observed, lambda, Some(&current), max_iter, tol);
        current = r.completed.clone();
        fits.push(current.clone());
        last = Some(r);
    }
    let last = last.unwrap_or(SoftImputeResult {
        completed: current,
        iterations: 0,
        converged: true,
        objective_trace: Vec::new(),
    });
    (last, fits)
}

/// Largest singular value of `P_O(Y)`; at or above this λ the completion is zero.
pub fn lambda_max(y: &Matrix, observed: &[bool]) -> f64 {
    let mut z = y.clone();
    for (zi, &o) in z.as_mut_slice().iter_mut().zip(observed) {
        if !o {
            *zi = 0.0;
        }
    }
    z.svd().singular_values.first().copied().unwrap_or(0.0)
}

/// Geometric path from `from` down to `to` with about five points per decade.
fn descent_path(from: f64, to: f64) -> Vec<f64> {
    if !(from > to) || to <= 0.0 {
        return vec![to];
    }
    let decades = ln(from / to) / ln(10.0);
    let n = (ceil(decades * 5.0) as usize).max(1) + 1;
    log_grid_desc(from, to / from, n)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct McNnmConfig {
    /// Explicit λ grid; `None` uses 10 log-spaced values from `1e-4 λ_max` to `λ_max`.
    pub lambda_grid: Option<Vec<f64>>,
    pub folds: usize,
    /// Share of observed control cells masked in each CV fold.
    pub holdout_fraction: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for McNnmConfig {
    fn default() -> Self {
        Self { lambda_grid: None, folds: 3, holdout_fraction: 0.1, max_iter: 500, tol: 1e-8 }
    }
}

pub fn mcnnm_fit(panel: &PanelMatrix, mask: &TreatmentMask, cfg: &McNnmConfig, seed: u64) -> Result<EffectEstimate> {
    panel.require_complete()?;
    mask.validate_for(panel)?;
    let y = panel.values();
    let (n, t) = y.shape();
    let observed: Vec<bool> = (0..n * t).map(|k| mask.is_observed(k / t, k % t)).collect();
    let lmax = lambda_max(y, &observed);
    let mut grid = match &cfg.lambda_grid {
        Some(g) if g.is_empty() => return Err(invalid!(InvalidArgument, "empty lambda grid")),
        Some(g) => g.clone(),
        None if lmax > 0.0 => log_grid_desc(lmax, 1e-4, 10),
        None => vec![0.0],
    };
    grid.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));

    let lambda = if grid.len() == 1 || cfg.folds == 0 {
        grid[0]
    } else {
        let control_cells: Vec<usize> = (0..n * t).filter(|&k| !mask.treated()[k / t]).collect();
        let holdout = ((control_cells.len() as f64 * cfg.holdout_fraction) as usize).max(1);
        let mut cv_err = vec![0.0; grid.len()];
        for fold in 0..cfg.folds {
            let mut rng = substream(seed, stream::CV, fold as u64);
            let mut cells = control_cells.clone();
            cells.shuffle(&mut rng);
            let held = &cells[..holdout];
            let mut obs = observed.clone();
            for &k in held {
                obs[k] = false;
            }
            let (from, to) = (lmax.max(grid[0]), *grid.last().unwrap_or(&0.0));
            let mut path = descent_path(from, to.max(1e-300));
            path.extend(grid.iter().copied());
            path.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
            path.dedup();
            let mut l = Matrix::zeros(n, t);
            let mut gi = 0;
            for &lam in &path {
                l = soft_impute(y, &obs, lam, Some(&l), cfg.max_iter, cfg.tol).completed;
                while gi < grid.len() && grid[gi] == lam {
                    let sse: f64 = held.iter().map(|&k| { let r = y.as_slice()[k] - l.as_slice()[k]; r * r }).sum();
                    cv_err[gi] += sse / holdout as f64;
                    gi += 1;
                }
            }
        }
        let best = (0..grid.len())
            .min_by(|&a, &b| cv_err[a].partial_cmp(&cv_err[b]).unwrap_or(core::cmp::Ordering::Equal))
            .unwrap_or(0);
        grid[best]
    };

    let path = descent_path(lmax.max(lambda), lambda);
    let (fit, _) = soft_impute_path(y, &observed, &path, cfg.max_iter, cfg.tol);
    let treated = mask.treated_indices();
    let (t0, t_star) = (mask.t0(), mask.t_star());
    let y_test = Matrix::from_fn(treated.len(), t_star, |g, s| y[(treated[g], t0 + s)]);
    let y_hat = Matrix::from_fn(treated.len(), t_star, |g, s| fit.completed[(treated[g], t0 + s)]);
    let mut d = Diagnostics::new();
    d.insert("lambda".into(), lambda.into());
    d.insert("lambda_max".into(), lmax.into());
    d.insert("iterations".into(), fit.iterations.into());
    d.insert("converged".into(), fit.converged.into());
    if !fit.converged {
        d.insert("warning".into(), "soft-impute reached max_iter before converging".into());
    }
    EffectEstimate::from_predictions("mcnnm", y_test, y_hat, d)
}

#[derive(Debug, Clone, Default)]
pub struct McNnmEstimator {
    pub config: McNnmConfig,
}

impl Estimator for McNnmEstimator {
    fn name(&self) -> &str {
        "mcnnm"
    }

    fn estimate(&self, panel: &PanelMatrix, mask: &TreatmentMask, seed: u64) -> Result<EffectEstimate> {
        mcnnm_fit(panel, mask, &self.config, seed)
    }
}
