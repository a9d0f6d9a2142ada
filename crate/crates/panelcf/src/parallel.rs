//! Rayon drivers for the placebo distribution and the benchmark suite.
//!
//! Each work item carries its own seed, so results match the sequential versions in
//! `panelcf_core` whatever the thread count.

use rayon::prelude::*;

use panelcf_core::inference::{
    evaluate_subset, observed_seed, plan_subsets, report, restrict_to_controls, InferenceConfig, PlaceboDistribution,
    RandomizationReport,
};
use panelcf_core::placebo::{plan_trials, run_cell, BenchmarkResult, PlaceboConfig};
use panelcf_core::{Estimator, PanelMatrix, Result, TreatmentMask};

pub fn placebo_distribution(
    estimator: &dyn Estimator,
    panel: &PanelMatrix,
    t0: usize,
    cap: usize,
    seed: u64,
    force_sampling: bool,
) -> Result<PlaceboDistribution> {
    let plan = plan_subsets(panel.n_units(), cap, seed, force_sampling)?;
    let rows = plan.subsets.par_iter().map(|s| evaluate_subset(estimator, panel, s, t0, seed)).collect();
    Ok(PlaceboDistribution::from_rows(plan, rows, panel.n_periods().saturating_sub(t0)))
}

pub fn randomization_inference(
    estimator: &dyn Estimator,
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

pub fn run_placebo_suite(panel: &PanelMatrix, estimators: &[&dyn Estimator], cfg: &PlaceboConfig) -> Result<BenchmarkResult> {
    let specs = plan_trials(panel, cfg)?;
    let cells: Vec<(usize, usize)> = (0..estimators.len()).flat_map(|e| (0..specs.len()).map(move |s| (e, s))).collect();
    let rows = cells.par_iter().map(|&(e, s)| run_cell(estimators[e], &specs[s], cfg.seed)).collect();
    Ok(BenchmarkResult { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use panelcf_core::classical::DidEstimator;
    use panelcf_core::placebo::{generate_synthetic, SyntheticDgpConfig};

    fn pool(n: usize) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()
    }

    #[test]
    fn matches_sequential_at_any_thread_count() {
        let p = generate_synthetic(&SyntheticDgpConfig { n: 8, t: 12, seed: 4, ..Default::default() }).unwrap();
        let mask = TreatmentMask::new((0..8).map(|i| i < 2).collect(), 8, 12).unwrap();
        let cfg = InferenceConfig::default();
        let (seq, _) = panelcf_core::inference::randomization_inference(&DidEstimator, &p, &mask, &cfg, 9).unwrap();
        for n in [1, 3] {
            let (par, _) = pool(n).install(|| randomization_inference(&DidEstimator, &p, &mask, &cfg, 9)).unwrap();
            assert_eq!(par, seq);
        }
        let pc = PlaceboConfig { n_trials: 3, t0_ratios: vec![0.5, 0.8], seed: 2, ..Default::default() };
        let ests: [&dyn Estimator; 2] = [&DidEstimator, &panelcf_core::OracleEstimator];
        let s = panelcf_core::placebo::run_placebo_suite(&p, &ests, &pc).unwrap();
        assert_eq!(pool(2).install(|| run_placebo_suite(&p, &ests, &pc)).unwrap(), s);
    }
}
