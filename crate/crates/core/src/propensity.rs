//! Propensity scores from unit-level covariates and the propensity-weighted loss.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky_solve, Matrix};
use crate::math::{ln, sigmoid, sqrt};
use crate::panel::PanelMatrix;

pub const DEFAULT_CLIP_EPS: f64 = 0.01;

/// Coefficient norm beyond which a logistic fit is declared separated. A fit whose
/// probabilities reproduce every label to within 1e-6 is also treated as separated.
pub const SEPARATION_NORM: f64 = 1e3;

/// Unit-level covariates, rows aligned with the panel's unit order.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CovariateTable {
    pub z: Matrix,
    pub names: Vec<String>,
}

impl CovariateTable {
    pub fn new(z: Matrix, names: Vec<String>) -> Result<Self> {
        if names.len() != z.cols() {
            return Err(invalid!(InvalidArgument, "{} names for {} covariate columns", names.len(), z.cols()));
        }
        if !z.is_finite() {
            return Err(invalid!(InvalidArgument, "covariates contain missing or non-finite entries"));
        }
        Ok(Self { z, names })
    }
}

/// Covariates keyed by unit id, so they can follow a panel through subsetting.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UnitCovariates {
    pub unit_ids: Vec<String>,
    pub table: CovariateTable,
}

impl UnitCovariates {
    pub fn new(unit_ids: Vec<String>, table: CovariateTable) -> Result<Self> {
        if unit_ids.len() != table.z.rows() {
            return Err(invalid!(InvalidArgument, "{} unit ids for {} covariate rows", unit_ids.len(), table.z.rows()));
        }
        Ok(Self { unit_ids, table })
    }

    /// Rows reordered to match `panel`'s units.
    pub fn for_panel(&self, panel: &PanelMatrix) -> Result<CovariateTable> {
        let idx = panel
            .unit_ids()
            .iter()
            .map(|id| {
                self.unit_ids
                    .iter()
                    .position(|u| u == id)
                    .ok_or_else(|| invalid!(InvalidArgument, "no covariates for unit `{id}`"))
            })
            .collect::<Result<Vec<_>>>()?;
        CovariateTable::new(self.table.z.select_rows(&idx), self.table.names.clone())
    }
}

/// Per-cell treatment probabilities; constant across time for unit-level covariates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PropensityScores {
    pub e_hat: Matrix,
}

impl PropensityScores {
    /// The rows and columns that weight the training outputs (controls, post period).
    pub fn training_block(&self, control_rows: &[usize], t0: usize) -> Matrix {
        let rows = self.e_hat.select_rows(control_rows);
        rows.column_range(t0, rows.cols())
    }
}

/// Logistic regression by iteratively reweighted least squares.
///
/// Returns `[intercept, b_1, .., b_K]`. Covariate columns with zero variance are
/// collinear with the intercept and keep a zero coefficient.
pub fn fit_logistic(z: &CovariateTable, labels: &[bool], max_iter: usize, tol: f64) -> Result<Vec<f64>> {
    let (n, k) = z.z.shape();
    if labels.len() != n {
        return Err(Error::ShapeMismatch { expected: (n, 1), found: (labels.len(), 1) });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == n {
        return Err(Error::DegenerateLabels);
    }
    if n < k + 2 {
        return Err(invalid!(InvalidArgument, "need at least K + 2 = {} units, got {n}", k + 2));
    }
    // Design columns: intercept plus every non-constant covariate.
    let active: Vec<usize> = (0..k)
        .filter(|&j| {
            let col = z.z.column(j);
            let m = col.iter().sum::<f64>() / n as f64;
            col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64 > 1e-12
        })
        .collect();
    let p = active.len() + 1;
    let design = Matrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { z.z[(i, active[j - 1])] });
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();

    let mut beta = vec![0.0; p];
    for _ in 0..max_iter {
        let mut hessian = Matrix::zeros(p, p);
        let mut score = vec![0.0; p];
        for i in 0..n {
            let x = design.row(i);
            let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = sigmoid(eta);
            let w = (mu * (1.0 - mu)).max(1e-12);
            for a in 0..p {
                score[a] += x[a] * (y[i] - mu);
                for b in 0..p {
                    hessian[(a, b)] += w * x[a] * x[b];
                }
            }
        }
        let step = cholesky_solve(&hessian, &score)?;
        let mut max_change: f64 = 0.0;
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
            max_change = max_change.max(s.abs());
        }
        let norm = sqrt(beta.iter().map(|b| b * b).sum());
        if !norm.is_finite() || norm > SEPARATION_NORM {
            return Err(Error::SeparationDetected(norm));
        }
        if max_change < tol {
            break;
        }
    }
    // Fitted probabilities that reproduce every label mean the MLE is at infinity.
    let perfect = (0..n).all(|i| {
        let eta: f64 = design.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum();
        (y[i] - sigmoid(eta)).abs() < 1e-6
    });
    if perfect {
        return Err(Error::SeparationDetected(sqrt(beta.iter().map(|b| b * b).sum())));
    }
    let mut weights = vec![0.0; k + 1];
    weights[0] = beta[0];
    for (slot, &j) in active.iter().enumerate() {
        weights[j + 1] = beta[slot + 1];
    }
    Ok(weights)
}

/// Applies the logistic link per unit, broadcasts across `t` periods and clips to
/// `[clip_eps, 1 - clip_eps]`.
pub fn predict_scores(weights: &[f64], z: &CovariateTable, t: usize, clip_eps: f64) -> Result<PropensityScores> {
    let (n, k) = z.z.shape();
    if weights.len() != k + 1 {
        return Err(Error::ShapeMismatch { expected: (k + 1, 1), found: (weights.len(), 1) });
    }
    let mut e_hat = Matrix::zeros(n, t);
    for i in 0..n {
        let eta = weights[0] + z.z.row(i).iter().zip(&weights[1..]).map(|(a, b)| a * b).sum::<f64>();
        let p = sigmoid(eta).clamp(clip_eps, 1.0 - clip_eps);
        e_hat.row_mut(i).fill(p);
    }
    Ok(PropensityScores { e_hat })
}

/// `Σ (y - ŷ)² · ê / n_input_cells`, the propensity-weighted training loss.
pub fn weighted_mse(y: &Matrix, y_hat: &Matrix, e_hat_train: &Matrix, n_input_cells: usize) -> Result<f64> {
    if y.shape() != y_hat.shape() {
        return Err(Error::ShapeMismatch { expected: y.shape(), found: y_hat.shape() });
    }
    if y.shape() != e_hat_train.shape() {
        return Err(Error::ShapeMismatch { expected: y.shape(), found: e_hat_train.shape() });
    }
    if n_input_cells == 0 {
        return Err(invalid!(InvalidArgument, "empty training input"));
    }
    let total: f64 = y
        .as_slice()
        .iter()
        .zip(y_hat.as_slice())
        .zip(e_hat_train.as_slice())
        .map(|((a, b), e)| (a - b) * (a - b) * e)
        .sum();
    Ok(total / n_input_cells as f64)
}

/// Bernoulli log-likelihood of fitted weights; handy for checking optimality.
pub fn log_likelihood(weights: &[f64], z: &CovariateTable, labels: &[bool]) -> f64 {
    (0..z.z.rows())
        .map(|i| {
            let eta = weights[0] + z.z.row(i).iter().zip(&weights[1..]).map(|(a, b)| a * b).sum::<f64>();
            let p = sigmoid(eta);
            if labels[i] { ln(p) } else { ln(1.0 - p) }
        })
        .sum()
}
