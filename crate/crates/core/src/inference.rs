//! Randomization inference under the sharp null of no effect.
//!
//! Control units are relabeled treated, every nonempty proper subset in turn (or a
//! uniform sample of distinct subsets when there are too many), and the estimator is
//! re-run on the control-only panel. The subset-averaged effects form the placebo
//! distribution against which the observed effect is ranked. Confidence intervals for
//! a constant additive effect come from inverting the test over sampled values of Δ.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{invalid, Error, Result};
use crate::estimator::{EffectEstimate, Estimator};
use crate::linalg::Matrix;
use crate::math::sample_std;
use crate::panel::{PanelMatrix, TreatmentMask};
use crate::rng::{derive_seed, stream, substream};

/// Default number of sampled subsets when the full set is too large.
pub const DEFAULT_CAP: usize = 10_000;
/// Largest number of controls for which every subset is enumerated.
pub const ENUMERATION_MAX_CONTROLS: usize = 16;
pub const DEFAULT_N_DELTA: usize = 500;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Number of nonempty proper subsets of `j` controls, `2^j - 2`.
pub fn count_placebos(j: usize) -> Result<u128> {
    match j {
        0 | 1 => Err(invalid!(InvalidArgument, "need at least 2 controls, got {j}")),
        128 => Ok(u128::MAX - 1),
        j if j > 128 => Err(Error::Overflow),
        j => Ok((1u128 << j) - 2),
    }
}

/// All nonempty proper subsets of `0..j`, by size and then lexicographically.
pub fn enumerate_subsets(j: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for g in 1..j {
        let mut idx: Vec<usize> = (0..g).collect();
        loop {
            out.push(idx.clone());
            // Advance to the next g-combination.
            let mut k = g;
            while k > 0 && idx[k - 1] == j - g + k - 1 {
                k -= 1;
            }
            if k == 0 {
                break;
            }
            idx[k - 1] += 1;
            for m in k..g {
                idx[m] = idx[m - 1] + 1;
            }
        }
    }
    out
}

/// The control subsets to relabel as treated.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetPlan {
    pub subsets: Vec<Vec<usize>>,
    pub q_nominal: u128,
    pub sampled: bool,
}

/// Enumerates every subset when `j ≤ 16` (unless `force_sampling`), otherwise draws
/// `min(cap, 2^j - 2)` distinct subsets uniformly without replacement.
pub fn plan_subsets(j: usize, cap: usize, seed: u64, force_sampling: bool) -> Result<SubsetPlan> {
    let q = count_placebos(j)?;
    if j <= ENUMERATION_MAX_CONTROLS && !force_sampling {
        return Ok(SubsetPlan { subsets: enumerate_subsets(j), q_nominal: q, sampled: false });
    }
    if cap == 0 {
        return Err(invalid!(InvalidArgument, "subset cap must be positive"));
    }
    let want = if q < cap as u128 { q as usize } else { cap };
    let mut rng = substream(seed, stream::SUBSETS, 0);
    // With most subsets wanted, shuffling the full list beats rejection.
    if j <= 24 && 2 * want as u128 >= q {
        let mut all = enumerate_subsets(j);
        let (chosen, _) = all.partial_shuffle(&mut rng, want);
        return Ok(SubsetPlan { subsets: chosen.to_vec(), q_nominal: q, sampled: true });
    }
    let mut seen = BTreeSet::new();
    let mut subsets = Vec::with_capacity(want);
    while subsets.len() < want {
        let s: Vec<usize> = (0..j).filter(|_| rng.random::<bool>()).collect();
        if s.is_empty() || s.len() == j {
            continue;
        }
        if seen.insert(s.clone()) {
            subsets.push(s);
        }
    }
    Ok(SubsetPlan { subsets, q_nominal: q, sampled: true })
}

/// Order-independent key of a subset, used to seed its re-estimation.
pub fn subset_key(subset: &[usize]) -> u64 {
    subset.iter().fold(0x243F_6A88_85A3_08D3u64, |h, &i| derive_seed(h, "subset", i as u64))
}

/// Re-runs `estimator` with `subset` of the control-only `panel` labeled treated.
pub fn evaluate_subset<E: Estimator + ?Sized>(
    estimator: &E,
    panel: &PanelMatrix,
    subset: &[usize],
    t0: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut flags = vec![false; panel.n_units()];
    for &i in subset {
        flags[i] = true;
    }
    let mask = TreatmentMask::new(flags, t0, panel.n_periods())?;
    let est = estimator.estimate(panel, &mask, derive_seed(seed, stream::FIT, subset_key(subset)))?;
    if est.phi_bar.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalDivergence("placebo effect"));
    }
    Ok(est.phi_bar)
}

/// Average placebo effects, one row per successful subset.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceboDistribution {
    pub mu: Matrix,
    pub subset_ids: Vec<Vec<usize>>,
    pub q_nominal: u128,
    pub sampled: bool,
    /// Subsets whose re-estimation failed, with the error message.
    pub failures: Vec<(Vec<usize>, String)>,
}

impl PlaceboDistribution {
    /// Assembles the distribution from per-subset outcomes in plan order.
    pub fn from_rows(plan: SubsetPlan, rows: Vec<Result<Vec<f64>>>, t_star: usize) -> Self {
        let mut data = Vec::new();
        let mut ids = Vec::new();
        let mut failures = Vec::new();
        for (subset, row) in plan.subsets.into_iter().zip(rows) {
            match row {
                Ok(r) if r.len() == t_star => {
                    data.extend_from_slice(&r);
                    ids.push(subset);
                }
                Ok(r) => failures.push((subset, alloc::format!("expected {t_star} periods, got {}", r.len()))),
                Err(e) => failures.push((subset, e.to_string())),
            }
        }
        let mu = Matrix::from_vec(ids.len(), t_star, data).expect("rows have t_star entries");
        Self { mu, subset_ids: ids, q_nominal: plan.q_nominal, sampled: plan.sampled, failures }
    }

    pub fn q_eff(&self) -> usize {
        self.mu.rows()
    }

    /// Time average of each placebo row.
    pub fn row_means(&self) -> Vec<f64> {
        let t = self.mu.cols().max(1) as f64;
        (0..self.mu.rows()).map(|q| self.mu.row(q).iter().sum::<f64>() / t).collect()
    }
}

/// The panel restricted to `mask`'s control units.
pub fn restrict_to_controls(panel: &PanelMatrix, mask: &TreatmentMask) -> Result<PanelMatrix> {
    mask.validate_for(panel)?;
    panel.select_units(&mask.control_indices())
}

/// Sequential placebo distribution over the control-only `panel`.
pub fn placebo_distribution<E: Estimator + ?Sized>(
    estimator: &E,
    panel: &PanelMatrix,
    t0: usize,
    cap: usize,
    seed: u64,
    force_sampling: bool,
) -> Result<PlaceboDistribution> {
    let plan = plan_subsets(panel.n_units(), cap, seed, force_sampling)?;
    let rows = plan.subsets.iter().map(|s| evaluate_subset(estimator, panel, s, t0, seed)).collect();
    Ok(PlaceboDistribution::from_rows(plan, rows, panel.n_periods().saturating_sub(t0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PValueOptions {
    /// Compare absolute values of placebo and observed statistics.
    pub two_sided: bool,
    /// Use `(1 + count) / (1 + Q)` instead of `count / Q`.
    pub plus_one: bool,
}

impl Default for PValueOptions {
    fn default() -> Self {
        Self { two_sided: true, plus_one: false }
    }
}

fn rank_p(column: impl Iterator<Item = f64>, observed: f64, q: usize, opts: PValueOptions) -> f64 {
    let stat = |x: f64| if opts.two_sided { x.abs() } else { x };
    let o = stat(observed);
    let count = column.filter(|&m| stat(m) >= o).count();
    if opts.plus_one {
        (1 + count) as f64 / (1 + q) as f64
    } else {
        count as f64 / q as f64
    }
}

/// Per-period p-values of `phi_bar` against the placebo columns.
pub fn p_values(dist: &PlaceboDistribution, phi_bar: &[f64], opts: PValueOptions) -> Result<Vec<f64>> {
    let q = dist.q_eff();
    if q == 0 {
        return Err(Error::EmptyDistribution);
    }
    if phi_bar.len() != dist.mu.cols() {
        return Err(Error::ShapeMismatch { expected: (1, dist.mu.cols()), found: (1, phi_bar.len()) });
    }
    Ok((0..phi_bar.len()).map(|t| rank_p((0..q).map(|r| dist.mu[(r, t)]), phi_bar[t], q, opts)).collect())
}

/// p-value of the time-averaged effect against the time-averaged placebo rows.
pub fn time_averaged_p_value(dist: &PlaceboDistribution, phi_bar_mean: f64, opts: PValueOptions) -> Result<f64> {
    let q = dist.q_eff();
    if q == 0 {
        return Err(Error::EmptyDistribution);
    }
    Ok(rank_p(dist.row_means().into_iter(), phi_bar_mean, q, opts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum CiMethod {
    /// Δ is retained when `#{|μ̄_q - Δ| ≥ |φ̄ - Δ|} / Q ≥ α`: every placebo and the
    /// observed effect are shifted by Δ.
    #[default]
    Literal,
    /// Δ is retained when `#{|μ̄_q| ≥ |φ̄ - Δ|} / Q ≥ α`: only the observed effect is
    /// adjusted, the classical inversion of a constant-effect null.
    Shifted,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfidenceInterval {
    /// `NaN` when no Δ was retained.
    pub lower: f64,
    pub upper: f64,
    pub empty: bool,
    pub delta_samples: Vec<f64>,
    pub retained: Vec<bool>,
}

/// Candidate Δ values: the two ends of `[φ̄ - 4s, φ̄ + 4s]` followed by `n_delta - 2`
/// uniform draws, where `s` is the standard deviation of the time-averaged placebo rows.
pub fn delta_samples(dist: &PlaceboDistribution, phi_bar_mean: f64, n_delta: usize, seed: u64) -> Vec<f64> {
    let s = sample_std(&dist.row_means());
    let s = if s.is_finite() { s } else { 0.0 };
    let (lo, hi) = (phi_bar_mean - 4.0 * s, phi_bar_mean + 4.0 * s);
    let mut rng = substream(seed, stream::DELTA, 0);
    let mut out = vec![lo, hi];
    out.extend((2..n_delta).map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo }));
    out
}

/// Test inversion for a constant additive effect on the time-averaged statistic.
pub fn confidence_interval(
    dist: &PlaceboDistribution,
    phi_bar_mean: f64,
    alpha: f64,
    n_delta: usize,
    seed: u64,
    method: CiMethod,
) -> Result<ConfidenceInterval> {
    let q = dist.q_eff();
    if q == 0 {
        return Err(Error::EmptyDistribution);
    }
    if n_delta < 2 {
        return Err(invalid!(InvalidArgument, "need at least 2 values of delta, got {n_delta}"));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(invalid!(InvalidArgument, "alpha {alpha} outside [0, 1)"));
    }
    let means = dist.row_means();
    let deltas = delta_samples(dist, phi_bar_mean, n_delta, seed);
    let retained: Vec<bool> = deltas
        .iter()
        .map(|&d| {
            let o = (phi_bar_mean - d).abs();
            let count = match method {
                CiMethod::Literal => means.iter().filter(|&&m| (m - d).abs() >= o).count(),
                CiMethod::Shifted => means.iter().filter(|&&m| m.abs() >= o).count(),
            };
            count as f64 / q as f64 >= alpha
        })
        .collect();
    let kept = deltas.iter().zip(&retained).filter(|(_, &r)| r).map(|(&d, _)| d);
    let (lower, upper) = kept.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), d| (a.min(d), b.max(d)));
    let empty = !lower.is_finite();
    Ok(ConfidenceInterval {
        lower: if empty { f64::NAN } else { lower },
        upper: if empty { f64::NAN } else { upper },
        empty,
        delta_samples: deltas,
        retained,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct InferenceConfig {
    pub alpha: f64,
    pub cap: usize,
    pub n_delta: usize,
    pub p_values: PValueOptions,
    pub ci_method: CiMethod,
    /// Sample subsets even when every subset could be enumerated.
    pub force_sampling: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            cap: DEFAULT_CAP,
            n_delta: DEFAULT_N_DELTA,
            p_values: PValueOptions::default(),
            ci_method: CiMethod::default(),
            force_sampling: false,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid!(InvalidArgument, "alpha {} outside (0, 1)", self.alpha));
        }
        if self.cap == 0 || self.n_delta < 2 {
            return Err(invalid!(InvalidArgument, "need cap >= 1 and n_delta >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RandomizationReport {
    pub p_values: Vec<f64>,
    pub phi_bar: Vec<f64>,
    pub phi_bar_mean: f64,
    pub p_value_mean: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub ci_empty: bool,
    pub alpha: f64,
    pub delta_samples: Vec<f64>,
    pub q_nominal: u128,
    pub q_eff: usize,
    pub sampled: bool,
    pub seed: u64,
}

/// Seed streams used by [`randomization_inference`], exposed so a parallel driver can
/// reproduce it exactly.
pub fn observed_seed(seed: u64) -> u64 {
    derive_seed(seed, stream::FIT, u64::MAX)
}

/// Builds the report from an observed estimate and its placebo distribution.
pub fn report(
    observed: &EffectEstimate,
    dist: &PlaceboDistribution,
    cfg: &InferenceConfig,
    seed: u64,
) -> Result<RandomizationReport> {
    let p = p_values(dist, &observed.phi_bar, cfg.p_values)?;
    let m = observed.average_effect();
    let pm = time_averaged_p_value(dist, m, cfg.p_values)?;
    let ci = confidence_interval(dist, m, cfg.alpha, cfg.n_delta, seed, cfg.ci_method)?;
    Ok(RandomizationReport {
        p_values: p,
        phi_bar: observed.phi_bar.clone(),
        phi_bar_mean: m,
        p_value_mean: pm,
        ci_lower: ci.lower,
        ci_upper: ci.upper,
        ci_empty: ci.empty,
        alpha: cfg.alpha,
        delta_samples: ci.delta_samples,
        q_nominal: dist.q_nominal,
        q_eff: dist.q_eff(),
        sampled: dist.sampled,
        seed,
    })
}

/// Estimates on the full panel, builds the placebo distribution on the controls and
/// returns the report together with the distribution.
pub fn randomization_inference<E: Estimator + ?Sized>(
    estimator: &E,
    panel: &PanelMatrix,
    mask: &TreatmentMask,
    cfg: &InferenceConfig,
    seed: u64,
) -> Result<(RandomizationReport, PlaceboDistribution)> {
    cfg.validate()?;
    let observed = estimator.estimate(panel, mask, observed_seed(seed))?;
    let controls = restrict_to_controls(panel, mask)?;
    let dist = placebo_distribution(estimator, &controls, mask.t0(), cfg.cap, seed, cfg.force_sampling)?;
    let rep = report(&observed, &dist, cfg, seed)?;
    Ok((rep, dist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::DidEstimator;

    fn dist_from(mu: &[&[f64]]) -> PlaceboDistribution {
        let mu = Matrix::from_rows(mu);
        PlaceboDistribution {
            subset_ids: (0..mu.rows()).map(|q| vec![q]).collect(),
            mu,
            q_nominal: 0,
            sampled: false,
            failures: Vec::new(),
        }
    }

    #[test]
    fn placebo_counts() {
        assert_eq!(count_placebos(3).unwrap(), 6);
        assert_eq!(count_placebos(2).unwrap(), 2);
        assert_eq!(count_placebos(16).unwrap(), 65_534);
        assert!(count_placebos(1).is_err());
        assert_eq!(count_placebos(129), Err(Error::Overflow));
        assert_eq!(count_placebos(127).unwrap(), (1u128 << 127) - 2);
    }

    #[test]
    fn enumeration_order_and_size() {
        let s = enumerate_subsets(3);
        assert_eq!(s, vec![vec![0], vec![1], vec![2], vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(enumerate_subsets(8).len(), 254);
    }

    #[test]
    fn literal_p_value_examples() {
        let d = dist_from(&[&[1.0], &[2.0], &[3.0], &[4.0]]);
        let one = PValueOptions { two_sided: false, plus_one: false };
        assert_eq!(p_values(&d, &[2.5], one).unwrap(), vec![0.5]);
        assert_eq!(p_values(&d, &[10.0], one).unwrap(), vec![0.0]);
        let same = dist_from(&[&[1.5], &[1.5]]);
        assert_eq!(p_values(&same, &[1.5], PValueOptions::default()).unwrap(), vec![1.0]);
        let corrected = PValueOptions { two_sided: false, plus_one: true };
        assert_eq!(p_values(&d, &[10.0], corrected).unwrap(), vec![0.2]);
        assert!(p_values(&dist_from(&[]), &[], one).is_err());
    }

    #[test]
    fn identical_controls_give_zero_placebos() {
        let p = PanelMatrix::from_matrix(Matrix::from_fn(4, 5, |_, t| t as f64 * 0.5)).unwrap();
        let d = placebo_distribution(&DidEstimator, &p, 3, DEFAULT_CAP, 0, false).unwrap();
        assert_eq!(d.q_eff(), 14);
        assert!(d.mu.as_slice().iter().all(|&m| m.abs() < 1e-12));
    }

    #[test]
    fn vacuous_test_keeps_range_ends() {
        let d = dist_from(&[&[-1.0], &[0.5], &[1.0], &[-0.5]]);
        let ci = confidence_interval(&d, 0.0, 0.0, 50, 1, CiMethod::Literal).unwrap();
        assert!(ci.retained.iter().all(|&r| r));
        assert_eq!((ci.lower, ci.upper), (ci.delta_samples[0], ci.delta_samples[1]));
        let ci = confidence_interval(&d, 0.0, 0.05, 50, 1, CiMethod::Literal).unwrap();
        assert!(ci.lower <= 0.0 && ci.upper >= 0.0);
    }

    #[test]
    fn sampled_subsets_are_distinct() {
        let plan = plan_subsets(17, DEFAULT_CAP, 3, false).unwrap();
        assert!(plan.sampled);
        assert_eq!(plan.subsets.len(), DEFAULT_CAP);
        let set: BTreeSet<_> = plan.subsets.iter().cloned().collect();
        assert_eq!(set.len(), DEFAULT_CAP);
        assert!(plan.subsets.iter().all(|s| !s.is_empty() && s.len() < 17));
    }
}
