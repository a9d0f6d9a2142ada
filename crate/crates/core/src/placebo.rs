//! Placebo benchmarking: pseudo-treat half the units of an untreated panel, predict
//! their post-period and score each estimator by RMSE against what was observed.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::estimator::Estimator;
use crate::linalg::Matrix;
use crate::math::{ceil, mean, sample_std, sqrt};
use crate::panel::{PanelMatrix, TreatmentMask};
use crate::rng::{derive_seed, stream, substream};

/// `√(mean((observed - predicted)²))`.
pub fn rmse(observed: &Matrix, predicted: &Matrix) -> Result<f64> {
    if observed.shape() != predicted.shape() {
        return Err(Error::ShapeMismatch { expected: observed.shape(), found: predicted.shape() });
    }
    let n = observed.as_slice().len();
    if n == 0 {
        return Err(invalid!(InvalidArgument, "rmse of an empty matrix"));
    }
    let ss: f64 = observed.as_slice().iter().zip(predicted.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sqrt(ss / n as f64))
}

/// The first `t_sub` periods of `n_sub` distinct units drawn uniformly, kept in panel order.
pub fn subsample_panel(panel: &PanelMatrix, n_sub: usize, t_sub: usize, seed: u64) -> Result<PanelMatrix> {
    let (n, t) = (panel.n_units(), panel.n_periods());
    if n_sub > n || t_sub > t || n_sub < 2 || t_sub < 2 {
        return Err(invalid!(InvalidArgument, "sub-sample {n_sub}x{t_sub} not within 2x2..{n}x{t}"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, stream::SUBSAMPLE, 0));
    let mut chosen = idx[..n_sub].to_vec();
    chosen.sort_unstable();
    panel.select_units(&chosen)?.leading_periods(t_sub)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SyntheticDgpConfig {
    pub n: usize,
    pub t: usize,
    pub n_factors: usize,
    pub ar_coefficient: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SyntheticDgpConfig {
    fn default() -> Self {
        Self { n: 16, t: 44, n_factors: 2, ar_coefficient: 0.8, noise_sd: 0.1, seed: 0 }
    }
}

/// Factor loadings and AR(1) factor paths behind a synthetic panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub panel: PanelMatrix,
    /// `N × K`
    pub loadings: Matrix,
    /// `T × K`
    pub factors: Matrix,
}

/// `Y = Λ Fᵀ + σ ε` with standard normal loadings, stationary AR(1) factors driven by
/// standard normal innovations and i.i.d. standard normal `ε`. No treatment is applied.
pub fn generate_synthetic_with_factors(cfg: &SyntheticDgpConfig) -> Result<SyntheticPanel> {
    if cfg.n < 2 || cfg.t < 2 || cfg.n_factors == 0 {
        return Err(invalid!(InvalidArgument, "need N >= 2, T >= 2 and at least one factor"));
    }
    if !(cfg.ar_coefficient.abs() < 1.0) || !(cfg.noise_sd >= 0.0) {
        return Err(invalid!(InvalidArgument, "need |ar_coefficient| < 1 and noise_sd >= 0"));
    }
    let mut rng = substream(cfg.seed, stream::SYNTHETIC, 0);
    let k = cfg.n_factors;
    let rho = cfg.ar_coefficient;
    let loadings = Matrix::from_fn(cfg.n, k, |_, _| rng.sample(StandardNormal));
    let mut factors = Matrix::zeros(cfg.t, k);
    let stationary_sd = sqrt(1.0 / (1.0 - rho * rho));
    for j in 0..k {
        let mut f = stationary_sd * rng.sample::<f64, _>(StandardNormal);
        for t in 0..cfg.t {
            if t > 0 {
                f = rho * f + rng.sample::<f64, _>(StandardNormal);
            }
            factors[(t, j)] = f;
        }
    }
    let values = Matrix::from_fn(cfg.n, cfg.t, |i, t| {
        let signal: f64 = (0..k).map(|j| loadings[(i, j)] * factors[(t, j)]).sum();
        signal + cfg.noise_sd * rng.sample::<f64, _>(StandardNormal)
    });
    Ok(SyntheticPanel { panel: PanelMatrix::from_matrix(values)?, loadings, factors })
}

pub fn generate_synthetic(cfg: &SyntheticDgpConfig) -> Result<PanelMatrix> {
    generate_synthetic_with_factors(cfg).map(|s| s.panel)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PlaceboConfig {
    pub t0_ratios: Vec<f64>,
    pub n_trials: usize,
    pub seed: u64,
    /// `(N, T)` sub-samples; empty means the whole panel.
    pub subsample: Vec<(usize, usize)>,
}

impl Default for PlaceboConfig {
    fn default() -> Self {
        Self { t0_ratios: vec![0.5], n_trials: 10, seed: 0, subsample: Vec::new() }
    }
}

impl PlaceboConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t0_ratios.is_empty() || self.t0_ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(invalid!(InvalidArgument, "every T0/T ratio must lie in (0, 1)"));
        }
        if self.n_trials == 0 {
            return Err(invalid!(InvalidArgument, "need at least one trial"));
        }
        Ok(())
    }
}

/// `⌈ratio · T⌉`, kept within `[1, T - 1]`.
pub fn t0_for_ratio(ratio: f64, t: usize) -> usize {
    (ceil(ratio * t as f64) as usize).clamp(1, t - 1)
}

/// One pseudo-treatment draw on one (sub-)panel.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub setting: String,
    pub trial: usize,
    pub panel: PanelMatrix,
    pub mask: TreatmentMask,
}

/// `⌊N/2⌋` pseudo-treated units drawn from `(seed, trial)`.
pub fn pseudo_treatment(n: usize, t0: usize, t: usize, seed: u64, trial: usize) -> Result<TreatmentMask> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, stream::TRIAL, trial as u64));
    let mut flags = vec![false; n];
    for &i in &idx[..n / 2] {
        flags[i] = true;
    }
    TreatmentMask::new(flags, t0, t)
}

/// Every (setting, trial) cell in result order.
pub fn plan_trials(panel: &PanelMatrix, cfg: &PlaceboConfig) -> Result<Vec<TrialSpec>> {
    cfg.validate()?;
    let mut panels: Vec<(Option<(usize, usize)>, PanelMatrix)> = Vec::new();
    if cfg.subsample.is_empty() {
        panels.push((None, panel.clone()));
    } else {
        for (k, &(n_sub, t_sub)) in cfg.subsample.iter().enumerate() {
            let sub = subsample_panel(panel, n_sub, t_sub, derive_seed(cfg.seed, stream::SUBSAMPLE, k as u64))?;
            panels.push((Some((n_sub, t_sub)), sub));
        }
    }
    let mut out = Vec::new();
    for (dims, p) in &panels {
        for &ratio in &cfg.t0_ratios {
            let setting = match dims {
                Some((n, t)) => format!("N={n},T={t},ratio={ratio}"),
                None => format!("ratio={ratio}"),
            };
            let t0 = t0_for_ratio(ratio, p.n_periods());
            for trial in 0..cfg.n_trials {
                let mask = pseudo_treatment(p.n_units(), t0, p.n_periods(), cfg.seed, trial)?;
                out.push(TrialSpec { setting: setting.clone(), trial, panel: p.clone(), mask });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BenchmarkRow {
    pub estimator: String,
    pub setting: String,
    pub trial: usize,
    /// `None` when the estimator failed on this cell.
    pub rmse: Option<f64>,
    /// Time-averaged `phi_bar`, the mean placebo effect.
    pub phi_bar_mean: Option<f64>,
    pub error: Option<String>,
}

/// Fits one estimator on one trial. Failures are recorded, never propagated.
pub fn run_cell<E: Estimator + ?Sized>(estimator: &E, spec: &TrialSpec, seed: u64) -> BenchmarkRow {
    let fit_seed = derive_seed(seed, stream::FIT, spec.trial as u64);
    let outcome = estimator.estimate(&spec.panel, &spec.mask, fit_seed).and_then(|e| {
        let r = rmse(&e.y_test, &e.y_hat_test)?;
        if !r.is_finite() {
            return Err(Error::NumericalDivergence("placebo rmse"));
        }
        Ok((r, e.average_effect()))
    });
    let (rmse, phi, error) = match outcome {
        Ok((r, p)) => (Some(r), Some(p), None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    BenchmarkRow {
        estimator: estimator.name().to_string(),
        setting: spec.setting.clone(),
        trial: spec.trial,
        rmse,
        phi_bar_mean: phi,
        error,
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AggregateRow {
    pub estimator: String,
    pub setting: String,
    pub mean_rmse: Option<f64>,
    /// Sample standard deviation; `None` with fewer than two successful trials.
    pub sd_rmse: Option<f64>,
    pub n_ok: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BenchmarkResult {
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkResult {
    /// Mean and sample standard deviation of RMSE per (estimator, setting), in first-seen order.
    pub fn aggregates(&self) -> Vec<AggregateRow> {
        let mut keys: Vec<(&str, &str)> = Vec::new();
        for r in &self.rows {
            let k = (r.estimator.as_str(), r.setting.as_str());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(e, s)| {
                let vals: Vec<f64> =
                    self.rows.iter().filter(|r| r.estimator == e && r.setting == s).filter_map(|r| r.rmse).collect();
                let sd = sample_std(&vals);
                AggregateRow {
                    estimator: e.to_string(),
                    setting: s.to_string(),
                    mean_rmse: (!vals.is_empty()).then(|| mean(&vals)),
                    sd_rmse: sd.is_finite().then_some(sd),
                    n_ok: vals.len(),
                }
            })
            .collect()
    }
}

/// Runs every estimator on every planned trial, sequentially.
pub fn run_placebo_suite(panel: &PanelMatrix, estimators: &[&dyn Estimator], cfg: &PlaceboConfig) -> Result<BenchmarkResult> {
    let specs = plan_trials(panel, cfg)?;
    let mut rows = Vec::with_capacity(specs.len() * estimators.len());
    for est in estimators {
        for spec in &specs {
            rows.push(run_cell(*est, spec, cfg.seed));
        }
    }
    Ok(BenchmarkResult { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::DidEstimator;
    use crate::OracleEstimator;

    #[test]
    fn rmse_examples() {
        let o = Matrix::from_rows(&[[0.0, 0.0]]);
        let p = Matrix::from_rows(&[[3.0, 4.0]]);
        assert!((rmse(&o, &p).unwrap() - sqrt(12.5)).abs() < 1e-15);
        assert_eq!(rmse(&o, &o).unwrap(), 0.0);
        assert!(rmse(&o, &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn subsample_membership() {
        let p = PanelMatrix::from_matrix(Matrix::from_fn(5, 4, |i, t| (10 * i + t) as f64)).unwrap();
        let s = subsample_panel(&p, 2, 3, 9).unwrap();
        assert_eq!(s.values().shape(), (2, 3));
        for i in 0..2 {
            let row = s.values().row(i);
            assert!((0..5).any(|k| p.values().row(k)[..3] == *row));
        }
        assert_eq!(subsample_panel(&p, 5, 4, 1).unwrap(), p);
        assert_eq!(subsample_panel(&p, 2, 3, 9).unwrap(), s);
        assert!(subsample_panel(&p, 6, 3, 1).is_err());
    }

    #[test]
    fn oracle_and_constant_did_score_zero() {
        let p = PanelMatrix::from_matrix(Matrix::filled(6, 8, 2.5)).unwrap();
        let cfg = PlaceboConfig { t0_ratios: vec![0.5, 0.75], n_trials: 3, ..Default::default() };
        let res = run_placebo_suite(&p, &[&OracleEstimator, &DidEstimator], &cfg).unwrap();
        assert_eq!(res.rows.len(), 12);
        assert!(res.rows.iter().all(|r| r.rmse == Some(0.0)));
        let agg = res.aggregates();
        assert_eq!(agg.len(), 4);
        assert!(agg.iter().all(|a| a.mean_rmse == Some(0.0) && a.n_ok == 3));
    }

    #[test]
    fn rank_one_without_noise() {
        let cfg = SyntheticDgpConfig { n: 6, t: 10, n_factors: 1, noise_sd: 0.0, ..Default::default() };
        let p = generate_synthetic(&cfg).unwrap();
        let s = p.values().svd().singular_values;
        assert!(s[1] < 1e-10 * s[0]);
        assert_eq!(p, generate_synthetic(&cfg).unwrap());
    }
}
