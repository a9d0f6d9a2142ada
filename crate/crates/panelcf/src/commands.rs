//! The `ingest`, `estimate`, `placebo` and `infer` subcommands.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use panelcf_core::classical::{DidEstimator, McNnmEstimator, ScmEstimator, VtenEstimator};
use panelcf_core::inference::observed_seed;
use panelcf_core::neural::{EncoderDecoderEstimator, RvaeEstimator};
use panelcf_core::panel::{drop_zero_variance_pre, impute_locf_nocb, log_transform};
use panelcf_core::placebo::{generate_synthetic, PlaceboConfig, SyntheticDgpConfig};
use panelcf_core::propensity::UnitCovariates;
use panelcf_core::{EffectEstimate, Estimator, OracleEstimator, PanelMatrix, TreatmentMask};

use crate::checkpoint::{Checkpoint, Model};
use crate::config::RunConfig;
use crate::error::{failed, invalid_input, AppError, AppResult};
use crate::io::{fmt_f64, panel_table, read_covariates_file, read_panel_file, Table};
use crate::parallel;

pub const ESTIMATORS: [&str; 7] = ["did", "scm", "vten", "mcnnm", "encoder_decoder", "rvae", "oracle"];

/// A validated configuration with its output directory resolved.
pub struct Run {
    pub cfg: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
    provenance: String,
    written: Vec<PathBuf>,
}

impl Run {
    pub fn new(cfg: RunConfig) -> AppResult<Self> {
        cfg.validate()?;
        let seed = cfg.seed()?;
        let out = cfg.output.dir.clone();
        let provenance = cfg.provenance();
        Ok(Self { cfg, seed, out, provenance, written: Vec::new() })
    }

    /// Paths written so far, in order.
    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn path(&mut self, name: &str) -> AppResult<PathBuf> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| AppError::validation(format!("cannot create {}: {e}", self.out.display())))?;
        let p = self.out.join(name);
        self.written.push(p.clone());
        Ok(p)
    }

    fn write_table(&mut self, name: &str, table: &Table) -> AppResult<()> {
        let p = self.path(name)?;
        let mut buf = Vec::new();
        table.write_to(Some(&self.provenance), &mut buf)?;
        std::fs::write(p, buf)?;
        Ok(())
    }

    fn write_json(&mut self, name: &str, mut body: Value) -> AppResult<()> {
        body["config_sha256"] = json!(self.cfg.hash());
        body["seed"] = json!(self.seed);
        let p = self.path(name)?;
        let mut f = std::fs::File::create(p)?;
        serde_json::to_writer_pretty(&mut f, &body).map_err(|e| AppError::validation(format!("json: {e}")))?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

fn panel_path(cfg: &RunConfig) -> AppResult<&Path> {
    cfg.panel.path.as_deref().ok_or_else(|| AppError::validation("config: `panel.path` is required"))
}

fn time_index(panel: &PanelMatrix, cfg: &RunConfig) -> AppResult<usize> {
    match (cfg.mask.t0, &cfg.mask.t0_label) {
        (Some(t0), None) => Ok(t0),
        (None, Some(label)) => panel
            .time_labels()
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| AppError::validation(format!("mask: no period labelled `{label}`"))),
        (Some(_), Some(_)) => Err(AppError::validation("mask: give `mask.t0` or `mask.t0_label`, not both")),
        (None, None) => Err(AppError::validation("mask: `mask.t0` or `mask.t0_label` is required")),
    }
}

/// Panel after the configured preprocessing, with its mask and the dropped unit ids.
pub struct Prepared {
    pub panel: PanelMatrix,
    pub mask: TreatmentMask,
    pub dropped: Vec<String>,
    pub imputed_cells: usize,
}

pub fn prepare(cfg: &RunConfig) -> AppResult<Prepared> {
    let raw = read_panel_file(panel_path(cfg)?, cfg.panel.layout)?;
    let t0 = time_index(&raw, cfg)?;
    if cfg.mask.treated.is_empty() {
        return Err(AppError::validation("mask: `mask.treated` lists no units"));
    }
    let mask = TreatmentMask::from_ids(&raw, &cfg.mask.treated, t0).map_err(invalid_input)?;
    let imputed_cells = raw.values().as_slice().iter().filter(|v| v.is_nan()).count();
    let mut panel = if cfg.preprocess.impute { impute_locf_nocb(&raw, t0).map_err(invalid_input)? } else { raw };
    if !panel.is_complete() {
        return Err(AppError::validation("panel has missing values; set `preprocess.impute = true`"));
    }
    if cfg.preprocess.log {
        panel = log_transform(&panel).map_err(invalid_input)?;
    }
    let mut dropped = Vec::new();
    let mut mask = mask;
    if cfg.preprocess.drop_zero_variance {
        let (p, d) = drop_zero_variance_pre(&panel, &mask).map_err(invalid_input)?;
        if let Some(id) = d.iter().find(|id| cfg.mask.treated.contains(id)) {
            return Err(AppError::validation(format!("treated unit `{id}` has a constant pre-period")));
        }
        mask = TreatmentMask::from_ids(&p, &cfg.mask.treated, t0).map_err(invalid_input)?;
        panel = p;
        dropped = d;
    }
    Ok(Prepared { panel, mask, dropped, imputed_cells })
}

fn covariates(cfg: &RunConfig, panel: &PanelMatrix) -> AppResult<Option<UnitCovariates>> {
    let Some(path) = &cfg.covariates.path else { return Ok(None) };
    let c = read_covariates_file(path)?;
    let have: BTreeSet<&str> = c.unit_ids.iter().map(String::as_str).collect();
    let want: BTreeSet<&str> = panel.unit_ids().iter().map(String::as_str).collect();
    if let Some(u) = want.difference(&have).next() {
        return Err(AppError::validation(format!("covariates: no row for unit `{u}`")));
    }
    if let Some(u) = have.difference(&want).next() {
        return Err(AppError::validation(format!("covariates: unit `{u}` is not in the panel")));
    }
    Ok(Some(c))
}

enum Built {
    Plain(Box<dyn Estimator>),
    EncoderDecoder(EncoderDecoderEstimator),
    Rvae(RvaeEstimator),
}

impl Built {
    fn as_dyn(&self) -> &dyn Estimator {
        match self {
            Built::Plain(e) => e.as_ref(),
            Built::EncoderDecoder(e) => e,
            Built::Rvae(e) => e,
        }
    }
}

/// Estimator from its configured name. `placebo_epochs` switches the neural models to the
/// unweighted placebo setting with that many epochs.
fn build(name: &str, cfg: &RunConfig, cov: Option<UnitCovariates>, placebo_epochs: Option<usize>) -> AppResult<Built> {
    let bad = |e: panelcf_core::Error| AppError::validation(format!("{name}: {e}"));
    Ok(match name {
        "did" => Built::Plain(Box::new(DidEstimator)),
        "scm" => Built::Plain(Box::new(ScmEstimator { config: cfg.scm })),
        "vten" => Built::Plain(Box::new(VtenEstimator { config: cfg.vten.clone() })),
        "mcnnm" => Built::Plain(Box::new(McNnmEstimator { config: cfg.mcnnm.clone() })),
        "oracle" => Built::Plain(Box::new(OracleEstimator)),
        "encoder_decoder" => {
            let mut config = cfg.encoder_decoder.clone();
            config.train.validate().map_err(bad)?;
            let covariates = match placebo_epochs {
                Some(n) => {
                    config.train.epochs = n;
                    None
                }
                None => cov,
            };
            Built::EncoderDecoder(EncoderDecoderEstimator { config, covariates })
        }
        "rvae" => {
            let mut config = cfg.rvae.clone();
            config.train.validate().map_err(bad)?;
            if let Some(n) = placebo_epochs {
                config.train.epochs = n;
            }
            Built::Rvae(RvaeEstimator { config })
        }
        other => {
            return Err(AppError::validation(format!("unknown estimator `{other}` (expected one of {})", ESTIMATORS.join(", "))))
        }
    })
}

pub fn cmd_ingest(run: &mut Run) -> AppResult<()> {
    let p = prepare(&run.cfg)?;
    run.write_table("panel_clean.csv", &panel_table(&p.panel))?;
    let body = json!({
        "n_units": p.panel.n_units(),
        "n_periods": p.panel.n_periods(),
        "t0": p.mask.t0(),
        "treated": run.cfg.mask.treated,
        "imputed_cells": p.imputed_cells,
        "dropped_units": p.dropped,
        "log_transformed": run.cfg.preprocess.log,
    });
    run.write_json("ingest.json", body)
}

fn post_labels(panel: &PanelMatrix, t0: usize) -> Vec<String> {
    panel.time_labels()[t0..].to_vec()
}

fn write_effects(run: &mut Run, panel: &PanelMatrix, mask: &TreatmentMask, est: &EffectEstimate) -> AppResult<()> {
    let labels = post_labels(panel, mask.t0());
    let mut effects = Table::new(std::iter::once("unit".to_string()).chain(labels.iter().cloned()));
    for (g, &i) in mask.treated_indices().iter().enumerate() {
        let mut row = vec![panel.unit_ids()[i].clone()];
        row.extend(est.phi_hat.row(g).iter().map(|&v| fmt_f64(v)));
        effects.push(row);
    }
    run.write_table("effects.csv", &effects)?;
    let mut bar = Table::new(["time", "phi_bar"]);
    for (l, &v) in labels.iter().zip(&est.phi_bar) {
        bar.push(vec![l.clone(), fmt_f64(v)]);
    }
    run.write_table("phi_bar.csv", &bar)
}

pub fn cmd_estimate(run: &mut Run) -> AppResult<()> {
    let p = prepare(&run.cfg)?;
    let cov = covariates(&run.cfg, &p.panel)?;
    let name = run.cfg.estimator.name.clone();
    let built = build(&name, &run.cfg, cov, None)?;
    let seed = observed_seed(run.seed);
    let mut log = Value::Null;
    let est = match &built {
        Built::Plain(e) => e.estimate(&p.panel, &p.mask, seed).map_err(failed)?,
        Built::EncoderDecoder(e) => {
            let fit = e.fit(&p.panel, &p.mask, seed).map_err(failed)?;
            log = json!(fit.log);
            let mut config = e.config.clone();
            config.train.seed = seed;
            let model = Model::EncoderDecoder { config, standardizer: fit.standardizer, net: fit.net };
            let path = run.path("model.json")?;
            Checkpoint::new(model, run.provenance.clone()).write(&path)?;
            fit.estimate
        }
        Built::Rvae(e) => {
            let (net, rlog, standardizer, est) = e.fit(&p.panel, &p.mask, seed).map_err(failed)?;
            log = json!(rlog);
            let mut config = e.config.clone();
            config.train.seed = seed;
            let path = run.path("model.json")?;
            Checkpoint::new(Model::Rvae { config, standardizer, net }, run.provenance.clone()).write(&path)?;
            est
        }
    };
    write_effects(run, &p.panel, &p.mask, &est)?;
    let body = json!({
        "estimator": name,
        "n_units": p.panel.n_units(),
        "n_periods": p.panel.n_periods(),
        "t0": p.mask.t0(),
        "treated": run.cfg.mask.treated,
        "dropped_units": p.dropped,
        "average_effect": est.average_effect(),
        "diagnostics": est.diagnostics,
        "training_log": log,
    });
    run.write_json("diagnostics.json", body)
}

fn placebo_panel(cfg: &RunConfig, seed: u64) -> AppResult<PanelMatrix> {
    let panel = match (&cfg.panel.path, &cfg.synthetic) {
        (Some(path), _) => {
            let raw = read_panel_file(path, cfg.panel.layout)?;
            let raw = if cfg.placebo.drop_units.is_empty() {
                raw
            } else {
                raw.drop_units(&cfg.placebo.drop_units).map_err(invalid_input)?
            };
            let t = raw.n_periods();
            if cfg.preprocess.impute { impute_locf_nocb(&raw, t).map_err(invalid_input)? } else { raw }
        }
        (None, Some(s)) => {
            let dgp = SyntheticDgpConfig {
                n: s.n,
                t: s.t,
                n_factors: s.n_factors,
                ar_coefficient: s.ar_coefficient,
                noise_sd: s.noise_sd,
                seed,
            };
            generate_synthetic(&dgp).map_err(invalid_input)?
        }
        (None, None) => return Err(AppError::validation("config: set `panel.path` or a `synthetic` section")),
    };
    if !panel.is_complete() {
        return Err(AppError::validation("panel has missing values; set `preprocess.impute = true`"));
    }
    if cfg.preprocess.log {
        return log_transform(&panel).map_err(invalid_input);
    }
    Ok(panel)
}

pub fn cmd_placebo(run: &mut Run) -> AppResult<()> {
    let cfg = &run.cfg;
    if cfg.placebo.estimators.is_empty() {
        return Err(AppError::validation("placebo: `placebo.estimators` is empty"));
    }
    let built: Vec<Built> = cfg
        .placebo
        .estimators
        .iter()
        .map(|n| build(n, cfg, None, Some(cfg.placebo.neural_epochs)))
        .collect::<AppResult<_>>()?;
    let pc = PlaceboConfig {
        t0_ratios: cfg.placebo.t0_ratios.clone(),
        n_trials: cfg.placebo.n_trials,
        seed: run.seed,
        subsample: cfg.placebo.subsample.clone(),
    };
    pc.validate().map_err(invalid_input)?;
    let panel = placebo_panel(cfg, run.seed)?;
    let ests: Vec<&dyn Estimator> = built.iter().map(Built::as_dyn).collect();
    let result = parallel::run_placebo_suite(&panel, &ests, &pc).map_err(invalid_input)?;

    let mut rows = Table::new(["estimator", "setting", "trial", "rmse"]);
    let mut errors = Table::new(["estimator", "setting", "trial", "error"]);
    for r in &result.rows {
        rows.push(vec![r.estimator.clone(), r.setting.clone(), r.trial.to_string(), r.rmse.map_or("NA".into(), fmt_f64)]);
        if let Some(e) = &r.error {
            errors.push(vec![r.estimator.clone(), r.setting.clone(), r.trial.to_string(), e.clone()]);
        }
    }
    let mut agg = Table::new(["estimator", "setting", "mean_rmse", "sd_rmse"]);
    for a in result.aggregates() {
        agg.push(vec![a.estimator, a.setting, a.mean_rmse.map_or("NA".into(), fmt_f64), a.sd_rmse.map_or("NA".into(), fmt_f64)]);
    }
    run.write_table("placebo_results.csv", &rows)?;
    run.write_table("placebo_aggregate.csv", &agg)?;
    run.write_table("placebo_errors.csv", &errors)?;
    if result.rows.iter().all(|r| r.rmse.is_none()) {
        return Err(AppError::estimation("every placebo cell failed; see placebo_errors.csv"));
    }
    Ok(())
}

pub fn cmd_infer(run: &mut Run) -> AppResult<()> {
    let p = prepare(&run.cfg)?;
    let cov = covariates(&run.cfg, &p.panel)?;
    let name = run.cfg.estimator.name.clone();
    let built = build(&name, &run.cfg, cov, None)?;
    let icfg = run.cfg.inference;
    let (rep, dist) =
        parallel::randomization_inference(built.as_dyn(), &p.panel, &p.mask, &icfg, run.seed).map_err(failed)?;

    let controls: Vec<String> = p.mask.control_indices().iter().map(|&i| p.panel.unit_ids()[i].clone()).collect();
    let labels = post_labels(&p.panel, p.mask.t0());
    let mut mu = Table::new(std::iter::once("subset".to_string()).chain(labels.iter().cloned()));
    for (q, s) in dist.subset_ids.iter().enumerate() {
        let ids: Vec<&str> = s.iter().map(|&i| controls[i].as_str()).collect();
        let mut row = vec![ids.join(";")];
        row.extend(dist.mu.row(q).iter().map(|&v| fmt_f64(v)));
        mu.push(row);
    }
    run.write_table("placebo_mu.csv", &mu)?;
    let failures: Vec<Value> = dist
        .failures
        .iter()
        .map(|(s, e)| json!({ "subset": s.iter().map(|&i| controls[i].clone()).collect::<Vec<_>>(), "error": e }))
        .collect();
    let body = json!({
        "estimator": name,
        "time": labels,
        "p_values": rep.p_values,
        "phi_bar": rep.phi_bar,
        "phi_bar_mean": rep.phi_bar_mean,
        "p_value_mean": rep.p_value_mean,
        "ci": { "lower": rep.ci_lower, "upper": rep.ci_upper, "empty": rep.ci_empty, "method": icfg.ci_method },
        "alpha": rep.alpha,
        "n_delta": icfg.n_delta,
        "q_nominal": u64::try_from(rep.q_nominal).map_or_else(|_| json!(rep.q_nominal.to_string()), |q| json!(q)),
        "q_eff": rep.q_eff,
        "sampled": rep.sampled,
        "failures": failures,
    });
    run.write_json("inference.json", body)?;
    if rep.q_eff == 0 {
        return Err(AppError::estimation("every placebo re-estimation failed"));
    }
    Ok(())
}
