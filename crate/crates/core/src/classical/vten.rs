//! Vertical regression with elastic-net regularisation.
//!
//! Observations are the pre-period time points, predictors are the control units'
//! outcomes at those time points, and the response is the treated unit's outcome.
//! (λ, α) are chosen by k-fold cross-validation over contiguous blocks of time.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::log_grid_desc;
use crate::error::{invalid, Error, Result};
use crate::estimator::{DiagValue, Diagnostics, EffectEstimate, Estimator};
use crate::linalg::Matrix;
use crate::panel::{split, PanelMatrix, SplitView, TreatmentMask};

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticNetFit {
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub iterations: usize,
}

impl ElasticNetFit {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.beta).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[inline]
fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Coordinate descent for
/// `(1/2n)‖y - b0 - Xβ‖² + λ(α‖β‖₁ + (1-α)‖β‖²/2)` with an unpenalised intercept.
///
/// `x` is n×p with observations in rows.
pub fn elastic_net(x: &Matrix, y: &[f64], lambda: f64, alpha: f64, max_iter: usize, tol: f64) -> Result<ElasticNetFit> {
    elastic_net_from(x, y, lambda, alpha, max_iter, tol, None)
}

/// [`elastic_net`] started from `init` coefficients instead of zero.
pub fn elastic_net_from(
    x: &Matrix,
    y: &[f64],
    lambda: f64,
    alpha: f64,
    max_iter: usize,
    tol: f64,
    init: Option<&[f64]>,
) -> Result<ElasticNetFit> {
    let (n, p) = x.shape();
    if y.len() != n || n == 0 {
        return Err(Error::ShapeMismatch { expected: (n, 1), found: (y.len(), 1) });
    }
    if !(0.0..=1.0).contains(&alpha) || lambda < 0.0 {
        return Err(invalid!(InvalidArgument, "need lambda >= 0 and alpha in [0, 1]"));
    }
    let nf = n as f64;
    let x_mean: Vec<f64> = (0..p).map(|j| (0..n).map(|i| x[(i, j)]).sum::<f64>() / nf).collect();
    let y_mean = y.iter().sum::<f64>() / nf;
    // Column-major centred design.
    let xc: Vec<Vec<f64>> = (0..p).map(|j| (0..n).map(|i| x[(i, j)] - x_mean[j]).collect()).collect();
    let z: Vec<f64> = xc.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();
    let mut resid: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let mut beta = vec![0.0; p];
    if let Some(b) = init {
        if b.len() != p {
            return Err(Error::ShapeMismatch { expected: (p, 1), found: (b.len(), 1) });
        }
        beta.copy_from_slice(b);
        for (j, col) in xc.iter().enumerate() {
            for (r, a) in resid.iter_mut().zip(col) {
                *r -= beta[j] * a;
            }
        }
    }
    let l1 = lambda * alpha;
    let l2 = lambda * (1.0 - alpha);
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut max_delta: f64 = 0.0;
        let mut max_beta: f64 = 0.0;
        for j in 0..p {
            let denom = z[j] + l2;
            if denom <= 0.0 {
                continue;
            }
            let rho = xc[j].iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / nf + z[j] * beta[j];
            let new = soft_threshold(rho, l1) / denom;
            let delta = new - beta[j];
            if delta != 0.0 {
                for (r, a) in resid.iter_mut().zip(&xc[j]) {
                    *r -= delta * a;
                }
                beta[j] = new;
            }
            max_delta = max_delta.max(delta.abs() * crate::math::sqrt(z[j].max(1e-300)));
            max_beta = max_beta.max(new.abs());
        }
        if !max_delta.is_finite() {
            return Err(Error::NumericalDivergence("elastic net"));
        }
        if max_delta <= tol * max_beta.max(1.0) {
            break;
        }
    }
    let intercept = y_mean - x_mean.iter().zip(&beta).map(|(m, b)| m * b).sum::<f64>();
    Ok(ElasticNetFit { intercept, beta, iterations })
}

/// Largest λ for which the lasso solution is entirely zero.
fn lambda_max(x: &Matrix, y: &[f64]) -> f64 {
    let (n, p) = x.shape();
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    (0..p)
        .map(|j| {
            let xm = (0..n).map(|i| x[(i, j)]).sum::<f64>() / nf;
            ((0..n).map(|i| (x[(i, j)] - xm) * (y[i] - y_mean)).sum::<f64>() / nf).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct VtenConfig {
    /// Explicit λ grid; `None` uses 10 log-spaced values from `1e-4 λ_max` to `λ_max`.
    pub lambda_grid: Option<Vec<f64>>,
    pub alpha_grid: Vec<f64>,
    pub folds: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for VtenConfig {
    fn default() -> Self {
        Self { lambda_grid: None, alpha_grid: vec![0.1, 0.5, 0.9, 1.0], folds: 5, max_iter: 100_000, tol: 1e-10 }
    }
}

/// Returns `[intercept, β_1..β_J]` for treated row `treated_row` and the CV diagnostics.
pub fn vten_fit(split: &SplitView, treated_row: usize, cfg: &VtenConfig) -> Result<(Vec<f64>, Diagnostics)> {
    let t0 = split.t0();
    if cfg.alpha_grid.is_empty() || cfg.lambda_grid.as_ref().is_some_and(|g| g.is_empty()) {
        return Err(invalid!(InvalidArgument, "empty regularisation grid"));
    }
    if cfg.folds < 2 || cfg.folds > t0 {
        return Err(invalid!(InvalidArgument, "need 2 <= folds ({}) <= pre-periods ({t0})", cfg.folds));
    }
    if treated_row >= split.n_treated() {
        return Err(invalid!(InvalidArgument, "treated row {treated_row} out of range"));
    }
    let x = split.x_train.transpose();
    let y = split.x_test.row(treated_row);
    let lambdas = match &cfg.lambda_grid {
        Some(g) => g.clone(),
        None => {
            let lmax = lambda_max(&x, y);
            if lmax > 0.0 { log_grid_desc(lmax, 1e-4, 10) } else { vec![1e-8] }
        }
    };

    let bounds: Vec<(usize, usize)> = (0..cfg.folds).map(|k| (k * t0 / cfg.folds, (k + 1) * t0 / cfg.folds)).collect();
    // Each fold walks λ from large to small, warm-starting from the previous fit.
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let mut best = (f64::INFINITY, lambdas[0], cfg.alpha_grid[0]);
    for &alpha in &cfg.alpha_grid {
        let mut sse = vec![0.0; lambdas.len()];
        for &(lo, hi) in &bounds {
            let train: Vec<usize> = (0..t0).filter(|&t| t < lo || t >= hi).collect();
            let xt = x.select_rows(&train);
            let yt: Vec<f64> = train.iter().map(|&t| y[t]).collect();
            let mut warm: Option<Vec<f64>> = None;
            for &k in &order {
                let fit = elastic_net_from(&xt, &yt, lambdas[k], alpha, cfg.max_iter, cfg.tol, warm.as_deref())?;
                for t in lo..hi {
                    let r = y[t] - fit.predict_row(x.row(t));
                    sse[k] += r * r;
                }
                warm = Some(fit.beta);
            }
        }
        for (k, &lambda) in lambdas.iter().enumerate() {
            let cv = sse[k] / t0 as f64;
            if cv < best.0 {
                best = (cv, lambda, alpha);
            }
        }
    }
    let (cv_mse, lambda, alpha) = best;
    let fit = elastic_net(&x, y, lambda, alpha, cfg.max_iter, cfg.tol)?;
    let mut coef = Vec::with_capacity(fit.beta.len() + 1);
    coef.push(fit.intercept);
    coef.extend_from_slice(&fit.beta);
    let mut d = Diagnostics::new();
    d.insert("lambda".into(), lambda.into());
    d.insert("alpha".into(), alpha.into());
    d.insert("cv_mse".into(), cv_mse.into());
    d.insert("iterations".into(), fit.iterations.into());
    Ok((coef, d))
}

#[derive(Debug, Clone, Default)]
pub struct VtenEstimator {
    pub config: VtenConfig,
}

impl Estimator for VtenEstimator {
    fn name(&self) -> &str {
        "vten"
    }

    fn estimate(&self, panel: &PanelMatrix, mask: &TreatmentMask, _seed: u64) -> Result<EffectEstimate> {
        panel.require_complete()?;
        let s = split(panel, mask)?;
        if s.t0() < 2 {
            return Err(invalid!(InvalidArgument, "vertical regression needs at least two pre-periods"));
        }
        let cfg = VtenConfig { folds: self.config.folds.min(s.t0()).max(2), ..self.config.clone() };
        let post = s.y_train.transpose();
        let mut y_hat = Matrix::zeros(s.n_treated(), s.t_star());
        let mut lambdas = Vec::new();
        let mut alphas = Vec::new();
        for g in 0..s.n_treated() {
            let (coef, d) = vten_fit(&s, g, &cfg)?;
            for t in 0..s.t_star() {
                y_hat[(g, t)] = coef[0] + post.row(t).iter().zip(&coef[1..]).map(|(a, b)| a * b).sum::<f64>();
            }
            if let Some(DiagValue::Number(l)) = d.get("lambda") {
                lambdas.push(*l);
            }
            if let Some(DiagValue::Number(a)) = d.get("alpha") {
                alphas.push(*a);
            }
        }
        let mut d = Diagnostics::new();
        d.insert(String::from("lambda"), lambdas.into());
        d.insert(String::from("alpha"), alphas.into());
        EffectEstimate::from_predictions(self.name(), s.y_test, y_hat, d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design() -> (Matrix, Vec<f64>) {
        let x = Matrix::from_rows(&[
            [1.0, 0.2, -0.5],
            [0.3, 1.1, 0.4],
            [-0.7, 0.5, 1.3],
            [1.5, -0.9, 0.2],
            [0.1, 0.8, -1.1],
            [-1.2, -0.3, 0.6],
            [0.6, 1.4, 0.9],
            [-0.4, -1.0, -0.8],
        ]);
        let y = vec![1.2, 0.4, -0.3, 2.1, 0.5, -1.0, 1.1, -0.2];
        (x, y)
    }

    #[test]
    fn warm_start_reaches_the_cold_solution() {
        let (x, y) = design();
        let cold = elastic_net(&x, &y, 0.01, 0.5, 100_000, 1e-14).unwrap();
        let warm = elastic_net_from(&x, &y, 0.01, 0.5, 100_000, 1e-14, Some(&[3.0, -1.0, 0.5])).unwrap();
        for (a, b) in cold.beta.iter().zip(&warm.beta) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((cold.intercept - warm.intercept).abs() < 1e-9);
        assert!(elastic_net_from(&x, &y, 0.01, 0.5, 10, 1e-8, Some(&[1.0])).is_err());
    }

    #[test]
    fn huge_lambda_shrinks_to_intercept() {
        let (x, y) = design();
        let fit = elastic_net(&x, &y, 1e6, 0.5, 1000, 1e-12).unwrap();
        assert!(fit.beta.iter().all(|&b| b == 0.0));
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((fit.intercept - mean).abs() < 1e-12);
    }

    #[test]
    fn lasso_picks_exact_copy() {
        let (x, _) = design();
        let y = x.column(1);
        let fit = elastic_net(&x, &y, 1e-6, 1.0, 100_000, 1e-12).unwrap();
        assert!((fit.beta[1] - 1.0).abs() < 1e-4, "{:?}", fit.beta);
        assert!(fit.beta[0].abs() < 1e-4 && fit.beta[2].abs() < 1e-4);
    }

    #[test]
    fn grid_and_fold_validation() {
        let p = PanelMatrix::from_matrix(Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0], [2.0, 1.0, 0.0, 3.0], [0.5, 0.1, 2.0, 1.0]])).unwrap();
        let m = TreatmentMask::new(alloc::vec![false, false, true], 3, 4).unwrap();
        let s = split(&p, &m).unwrap();
        let empty = VtenConfig { alpha_grid: vec![], ..VtenConfig::default() };
        assert!(vten_fit(&s, 0, &empty).is_err());
        let too_many = VtenConfig { folds: 4, ..VtenConfig::default() };
        assert!(vten_fit(&s, 0, &too_many).is_err());
        let ok = VtenConfig { folds: 3, ..VtenConfig::default() };
        let (coef, d) = vten_fit(&s, 0, &ok).unwrap();
        assert_eq!(coef.len(), 3);
        assert!(d.contains_key("lambda"));
    }
}
