//! Run configuration read from a TOML file of dotted keys, e.g.
//!
//! ```toml
//! seed = 7
//! panel.path = "data/panel.csv"
//! mask.treated = ["CA"]
//! mask.t0 = 19
//! estimator.name = "scm"
//! inference.alpha = 0.05
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use panelcf_core::classical::{McNnmConfig, ScmConfig, VtenConfig};
use panelcf_core::inference::InferenceConfig;
use panelcf_core::neural::{EncoderDecoderConfig, RvaeConfig};

use crate::error::{AppError, AppResult};
use crate::io::Layout;

/// Bumped whenever a key changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelSection {
    pub path: Option<PathBuf>,
    pub layout: Layout,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovariateSection {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Treated units and the first treated period, given either as an index or a label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSection {
    pub treated: Vec<String>,
    pub t0: Option<usize>,
    pub t0_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub impute: bool,
    pub log: bool,
    pub drop_zero_variance: bool,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self { impute: true, log: false, drop_zero_variance: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub name: String,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self { name: "did".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaceboSection {
    pub estimators: Vec<String>,
    pub t0_ratios: Vec<f64>,
    pub n_trials: usize,
    /// `[[N, T], ...]` sub-samples; empty uses the whole panel.
    pub subsample: Vec<(usize, usize)>,
    /// Units left out before pseudo-treatment, such as the real treated unit.
    pub drop_units: Vec<String>,
    /// Epoch count for the neural estimators during placebo runs.
    pub neural_epochs: usize,
}

impl Default for PlaceboSection {
    fn default() -> Self {
        Self {
            estimators: vec!["did".into()],
            t0_ratios: vec![0.5],
            n_trials: 10,
            subsample: Vec::new(),
            drop_units: Vec::new(),
            neural_epochs: 500,
        }
    }
}

/// Null-effect factor panel used when no panel file is configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub n: usize,
    pub t: usize,
    pub n_factors: usize,
    pub ar_coefficient: f64,
    pub noise_sd: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let d = panelcf_core::placebo::SyntheticDgpConfig::default();
        Self { n: d.n, t: d.t, n_factors: d.n_factors, ar_coefficient: d.ar_coefficient, noise_sd: d.noise_sd }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub panel: PanelSection,
    pub covariates: CovariateSection,
    pub output: OutputSection,
    pub mask: MaskSection,
    pub preprocess: PreprocessSection,
    pub estimator: EstimatorSection,
    pub scm: ScmConfig,
    pub vten: VtenConfig,
    pub mcnnm: McNnmConfig,
    pub encoder_decoder: EncoderDecoderConfig,
    pub rvae: RvaeConfig,
    pub inference: InferenceConfig,
    pub placebo: PlaceboSection,
    pub synthetic: Option<SyntheticSection>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> AppResult<Self> {
        toml::from_str(text).map_err(|e| AppError::validation(format!("config: {e}")))
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::validation(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.panel.path.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.covariates.path.as_mut() {
            fix(p);
        }
        fix(&mut cfg.output.dir);
        Ok(cfg)
    }

    pub fn seed(&self) -> AppResult<u64> {
        self.seed.ok_or_else(|| AppError::validation("config: `seed` is required"))
    }

    /// Checks that referenced input files exist and the seed is set.
    pub fn validate(&self) -> AppResult<()> {
        self.seed()?;
        for p in [&self.panel.path, &self.covariates.path].into_iter().flatten() {
            if !p.is_file() {
                return Err(AppError::validation(format!("file not found: {}", p.display())));
            }
        }
        if self.panel.path.is_none() && self.synthetic.is_none() {
            return Err(AppError::validation("config: set `panel.path` or a `synthetic` section"));
        }
        self.inference.validate().map_err(|e| AppError::validation(format!("inference: {e}")))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    ///
    /// The output directory is left out so that the same run written to two places
    /// produces identical files.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// `config_sha256=<hex> seed=<n>`, written into every output file.
    pub fn provenance(&self) -> String {
        format!("config_sha256={} seed={}", self.hash(), self.seed.unwrap_or_default())
    }
}
