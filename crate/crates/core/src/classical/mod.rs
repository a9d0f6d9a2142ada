//! Comparison estimators: two-way fixed-effects DID, synthetic control by
//! exponentiated gradient, vertical elastic-net regression and nuclear-norm
//! matrix completion.

pub mod did;
pub mod mcnnm;
pub mod scm;
pub mod vten;

pub use did::{did_estimate, DidEstimator};
pub use mcnnm::{mcnnm_fit, soft_impute, McNnmConfig, McNnmEstimator, SoftImputeResult};
pub use scm::{scm_fit, scm_fit_observed, scm_predict, ScmConfig, ScmEstimator, ScmFit, ScmWeights};
pub use vten::{elastic_net, elastic_net_from, vten_fit, ElasticNetFit, VtenConfig, VtenEstimator};

/// `n` log-spaced values from `max` down to `ratio * max`.
pub(crate) fn log_grid_desc(max: f64, ratio: f64, n: usize) -> alloc::vec::Vec<f64> {
    use crate::math::{exp, ln};
    if n == 1 {
        return alloc::vec![max];
    }
    let (a, b) = (ln(max), ln(max * ratio));
    (0..n).map(|k| exp(a + (b - a) * k as f64 / (n - 1) as f64)).collect()
}
