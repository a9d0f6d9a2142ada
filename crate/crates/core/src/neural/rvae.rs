//! Recurrent variational autoencoder.
//!
//! An LSTM encodes a pre-period sequence; two dense heads give the mean and log
//! variance of a Gaussian `u`, and the latent is `z = exp(u)`, log-normal. The decoder
//! is two stacked LSTMs that read `z` at every step. Counterfactuals come from decoding
//! past the end of the pre-period and averaging the extension over latent draws.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::layers::{Dense, Lstm, LstmCache, Params};
use super::{add_l2_grad, Standardizer, Stepper, TrainConfig};
use crate::error::{invalid, Error, Result};
use crate::estimator::{Diagnostics, EffectEstimate, Estimator};
use crate::linalg::Matrix;
use crate::math::exp;
use crate::panel::{split, PanelMatrix, TreatmentMask};
use crate::rng::{derive_seed, stream, substream, Rng};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RvaeNet {
    pub enc: Lstm,
    pub mu: Dense,
    pub logvar: Dense,
    pub dec1: Lstm,
    pub dec2: Lstm,
    /// Maps the second decoder layer to the feature width when the two differ.
    pub head: Option<Dense>,
}

impl Params for RvaeNet {
    fn visit(&self, f: &mut dyn FnMut(&[f64], bool)) {
        self.enc.visit(f);
        self.mu.visit(f);
        self.logvar.visit(f);
        self.dec1.visit(f);
        self.dec2.visit(f);
        if let Some(h) = &self.head {
            h.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64], bool)) {
        self.enc.visit_mut(f);
        self.mu.visit_mut(f);
        self.logvar.visit_mut(f);
        self.dec1.visit_mut(f);
        self.dec2.visit_mut(f);
        if let Some(h) = &mut self.head {
            h.visit_mut(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RvaeConfig {
    pub enc_hidden: usize,
    pub latent_dim: usize,
    pub dec_hidden: usize,
    /// Width of the second decoder layer; `None` uses the feature width.
    pub dec_output: Option<usize>,
    pub n_samples: usize,
    pub train: TrainConfig,
}

impl Default for RvaeConfig {
    fn default() -> Self {
        Self { enc_hidden: 32, latent_dim: 200, dec_hidden: 32, dec_output: None, n_samples: 128, train: TrainConfig::rvae_default() }
    }
}

/// Per-epoch averages over training sequences; `total[e] = recon[e] + kl[e]`.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RvaeLog {
    pub recon: Vec<f64>,
    pub kl: Vec<f64>,
    pub total: Vec<f64>,
}

/// `KL(N(mu, e^lv) ‖ N(0, 1))`, summed over dimensions.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    -0.5 * mu.iter().zip(logvar).map(|(m, l)| 1.0 + l - m * m - exp(*l)).sum::<f64>()
}

struct Pass {
    enc: Vec<LstmCache>,
    mu: Vec<f64>,
    lv: Vec<f64>,
    z: Vec<f64>,
    d1: Vec<LstmCache>,
    d2: Vec<LstmCache>,
    out: Vec<Vec<f64>>,
}

impl RvaeNet {
    pub fn new(features: usize, cfg: &RvaeConfig, rng: &mut Rng) -> Self {
        let k = cfg.dec_output.unwrap_or(features);
        Self {
            enc: Lstm::new(features, cfg.enc_hidden, rng),
            mu: Dense::new(cfg.enc_hidden, cfg.latent_dim, rng),
            logvar: Dense::new(cfg.enc_hidden, cfg.latent_dim, rng),
            dec1: Lstm::new(cfg.latent_dim, cfg.dec_hidden, rng),
            dec2: Lstm::new(cfg.dec_hidden, k, rng),
            head: (k != features).then(|| Dense::new(k, features, rng)),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.mu.output_size()
    }

    pub fn features(&self) -> usize {
        self.enc.input_size()
    }

    /// Mean and log variance of `u = ln z` for a `T0 × F` sequence.
    pub fn encode(&self, x: &Matrix) -> (Vec<f64>, Vec<f64>) {
        let (_, mu, lv) = self.encode_cached(x);
        (mu, lv)
    }

    fn encode_cached(&self, x: &Matrix) -> (Vec<LstmCache>, Vec<f64>, Vec<f64>) {
        let h = self.enc.hidden_size();
        let xs: Vec<Vec<f64>> = (0..x.rows()).map(|t| x.row(t).to_vec()).collect();
        let enc = self.enc.forward_seq(&xs, &vec![0.0; h], &vec![0.0; h]);
        let last = &enc.last().expect("non-empty sequence").h;
        let mu = self.mu.forward(last);
        let lv = self.logvar.forward(last);
        (enc, mu, lv)
    }

    /// `z = exp(mu + exp(lv / 2) ⊙ eps)`.
    pub fn latent(mu: &[f64], lv: &[f64], eps: &[f64]) -> Vec<f64> {
        mu.iter().zip(lv).zip(eps).map(|((m, l), e)| exp(m + exp(0.5 * l) * e)).collect()
    }

    fn decode_cached(&self, z: &[f64], steps: usize) -> (Vec<LstmCache>, Vec<LstmCache>, Vec<Vec<f64>>) {
        let h1 = self.dec1.hidden_size();
        let h2 = self.dec2.hidden_size();
        let inputs = vec![z.to_vec(); steps];
        let d1 = self.dec1.forward_seq(&inputs, &vec![0.0; h1], &vec![0.0; h1]);
        let mid: Vec<Vec<f64>> = d1.iter().map(|c| c.h.clone()).collect();
        let d2 = self.dec2.forward_seq(&mid, &vec![0.0; h2], &vec![0.0; h2]);
        let out = d2
            .iter()
            .map(|c| match &self.head {
                Some(h) => h.forward(&c.h),
                None => c.h.clone(),
            })
            .collect();
        (d1, d2, out)
    }

    /// Decodes `steps` outputs from latent `z`, one row per step.
    pub fn decode(&self, z: &[f64], steps: usize) -> Matrix {
        let (_, _, out) = self.decode_cached(z, steps);
        Matrix::from_fn(steps, self.features(), |t, k| out[t][k])
    }

    fn pass(&self, x_in: &Matrix, eps: &[f64]) -> Pass {
        let (enc, mu, lv) = self.encode_cached(x_in);
        let z = Self::latent(&mu, &lv, eps);
        let (d1, d2, out) = self.decode_cached(&z, x_in.rows());
        Pass { enc, mu, lv, z, d1, d2, out }
    }

    /// Reconstruction `½ Σ (x - x')²` and KL for one sequence with fixed noise.
    pub fn sample_loss(&self, x: &Matrix, eps: &[f64]) -> (f64, f64) {
        let p = self.pass(x, eps);
        (recon_error(x, &p.out), kl_divergence(&p.mu, &p.lv))
    }

    /// Loss terms and gradient of `scale · (recon + KL)` for one sequence. `x_in` is the
    /// encoder input (dropout applied); `x` is the reconstruction target.
    fn sample_grad(&self, x: &Matrix, x_in: &Matrix, eps: &[f64], scale: f64, g: &mut Self) -> (f64, f64) {
        let p = self.pass(x_in, eps);
        let f = self.features();
        let steps = x.rows();
        let mut dh2 = Vec::with_capacity(steps);
        for t in 0..steps {
            let dy: Vec<f64> = (0..f).map(|k| (p.out[t][k] - x[(t, k)]) * scale).collect();
            match (&self.head, &mut g.head) {
                (Some(h), Some(gh)) => {
                    let mut dh = vec![0.0; self.dec2.hidden_size()];
                    h.backward(&p.d2[t].h, &dy, gh, &mut dh);
                    dh2.push(dh);
                }
                _ => dh2.push(dy),
            }
        }
        let (dmid, _, _) = self.dec2.backward_seq(&p.d2, &dh2, &mut g.dec2);
        let (dzs, _, _) = self.dec1.backward_seq(&p.d1, &dmid, &mut g.dec1);
        let zd = self.latent_dim();
        let mut dmu = vec![0.0; zd];
        let mut dlv = vec![0.0; zd];
        for k in 0..zd {
            let dz: f64 = dzs.iter().map(|d| d[k]).sum();
            let du = dz * p.z[k];
            let sd = exp(0.5 * p.lv[k]);
            dmu[k] = du + scale * p.mu[k];
            dlv[k] = du * eps[k] * 0.5 * sd + scale * 0.5 * (exp(p.lv[k]) - 1.0);
        }
        let last = &p.enc.last().expect("non-empty sequence").h;
        let mut dh = vec![0.0; self.enc.hidden_size()];
        self.mu.backward(last, &dmu, &mut g.mu, &mut dh);
        self.logvar.backward(last, &dlv, &mut g.logvar, &mut dh);
        let mut dhs = vec![vec![0.0; dh.len()]; p.enc.len()];
        if let Some(l) = dhs.last_mut() {
            *l = dh;
        }
        self.enc.backward_seq(&p.enc, &dhs, &mut g.enc);
        (recon_error(x, &p.out), kl_divergence(&p.mu, &p.lv))
    }

    /// Batch-mean `recon + KL` (plus `l2 Σ‖W‖²`) and its gradient for fixed noise.
    pub fn loss_and_grad(&self, xs: &[&Matrix], eps: &[Vec<f64>], l2: f64) -> (f64, Self) {
        let mut g = self.zeros_like();
        let scale = 1.0 / xs.len() as f64;
        let mut total = 0.0;
        for (x, e) in xs.iter().zip(eps) {
            let (r, k) = self.sample_grad(x, x, e, scale, &mut g);
            total += (r + k) * scale;
        }
        add_l2_grad(self, &mut g, l2);
        (total + l2 * self.weight_norm_sq(), g)
    }
}

fn recon_error(x: &Matrix, out: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for t in 0..x.rows() {
        for k in 0..x.cols() {
            let r = x[(t, k)] - out[t][k];
            s += r * r;
        }
    }
    0.5 * s
}

fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Self-supervised training on pre-period sequences, one unit per row of `x_all_pre`.
pub fn train_rvae(x_all_pre: &Matrix, cfg: &RvaeConfig) -> Result<(RvaeNet, RvaeLog)> {
    let tc = &cfg.train;
    tc.validate()?;
    let (n, t0) = x_all_pre.shape();
    if n < 2 || t0 < 2 {
        return Err(invalid!(InvalidArgument, "need at least 2 units and 2 pre-periods, got N={n}, T0={t0}"));
    }
    if cfg.enc_hidden == 0 || cfg.latent_dim == 0 || cfg.dec_hidden == 0 || cfg.dec_output == Some(0) {
        return Err(invalid!(InvalidArgument, "layer sizes must be positive"));
    }
    let seqs: Vec<Matrix> = (0..n).map(|i| Matrix::from_fn(t0, 1, |t, _| x_all_pre[(i, t)])).collect();
    let batch_size = tc.batch_size.unwrap_or(32).min(n);
    let mut net = RvaeNet::new(1, cfg, &mut substream(tc.seed, stream::NET_INIT, 0));
    let mut stepper = Stepper::new(tc, net.n_params());
    let mut log = RvaeLog::default();
    let zd = cfg.latent_dim;
    for epoch in 0..tc.epochs {
        let e = epoch as u64;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut substream(tc.seed, stream::BATCH_ORDER, e));
        let mut drop_rng = substream(tc.seed, stream::DROPOUT, e);
        let mut eps_rng = substream(tc.seed, stream::LATENT, e);
        let (mut recon, mut kl) = (0.0, 0.0);
        for chunk in order.chunks(batch_size) {
            let mut g = net.zeros_like();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let x = &seqs[i];
                let eps = normal_vec(&mut eps_rng, zd);
                let x_in = if tc.input_dropout_rate > 0.0 {
                    let keep = 1.0 / (1.0 - tc.input_dropout_rate);
                    let mut m = x.clone();
                    for v in m.as_mut_slice() {
                        *v = if drop_rng.random::<f64>() < tc.input_dropout_rate { 0.0 } else { *v * keep };
                    }
                    m
                } else {
                    x.clone()
                };
                let (r, k) = net.sample_grad(x, &x_in, &eps, scale, &mut g);
                recon += r;
                kl += k;
            }
            add_l2_grad(&net, &mut g, tc.l2_coeff);
            if !(recon + kl).is_finite() || !g.is_finite() {
                return Err(Error::TrainingDiverged { epoch: epoch + 1 });
            }
            stepper.step(&mut net, &g);
            if !net.is_finite() {
                return Err(Error::TrainingDiverged { epoch: epoch + 1 });
            }
        }
        let (r, k) = (recon / n as f64, kl / n as f64);
        log.recon.push(r);
        log.kl.push(k);
        log.total.push(r + k);
    }
    Ok((net, log))
}

/// Encodes each row of `x_test_pre`, decodes `T0 + horizon` steps for `n_samples`
/// latent draws and returns the mean of the last `horizon` steps.
pub fn rvae_predict(net: &RvaeNet, x_test_pre: &Matrix, horizon: usize, n_samples: usize, seed: u64) -> Result<Matrix> {
    let (g, t0) = x_test_pre.shape();
    let mut out = Matrix::zeros(g, horizon);
    if horizon == 0 {
        return Ok(out);
    }
    if n_samples == 0 || t0 == 0 {
        return Err(invalid!(InvalidArgument, "need at least one latent sample and one pre-period"));
    }
    for i in 0..g {
        let x = Matrix::from_fn(t0, 1, |t, _| x_test_pre[(i, t)]);
        let (mu, lv) = net.encode(&x);
        let mut rng = substream(seed, stream::LATENT, i as u64);
        for _ in 0..n_samples {
            let eps = normal_vec(&mut rng, net.latent_dim());
            let dec = net.decode(&RvaeNet::latent(&mu, &lv, &eps), t0 + horizon);
            for h in 0..horizon {
                out[(i, h)] += dec[(t0 + h, 0)];
            }
        }
    }
    let inv = 1.0 / n_samples as f64;
    for v in out.as_mut_slice() {
        *v *= inv;
    }
    Ok(out)
}

/// Recurrent VAE estimator. Trains on every unit's standardized pre-period and reads
/// the treated units' counterfactuals off the decoded extension.
#[derive(Debug, Clone, Default)]
pub struct RvaeEstimator {
    pub config: RvaeConfig,
}

impl RvaeEstimator {
    pub fn fit(&self, panel: &PanelMatrix, mask: &TreatmentMask, seed: u64) -> Result<(RvaeNet, RvaeLog, Standardizer, EffectEstimate)> {
        panel.require_complete()?;
        let s = split(panel, mask)?;
        let std = Standardizer::fit(s.x_train.as_slice());
        let t0 = s.t0();
        let pre = Matrix::from_fn(panel.n_units(), t0, |i, t| std.forward(panel.values()[(i, t)]));
        let mut cfg = self.config.clone();
        cfg.train.seed = seed;
        let (net, log) = train_rvae(&pre, &cfg)?;
        let x_test = s.x_test.map(|v| std.forward(v));
        let pred = rvae_predict(&net, &x_test, s.t_star(), cfg.n_samples, derive_seed(seed, stream::FIT, 1))?;
        let y_hat = pred.map(|v| std.inverse(v));
        let mut d = Diagnostics::new();
        d.insert("epochs".into(), cfg.train.epochs.into());
        d.insert("n_samples".into(), cfg.n_samples.into());
        if let (Some(&r), Some(&k)) = (log.recon.last(), log.kl.last()) {
            d.insert("final_recon".into(), r.into());
            d.insert("final_kl".into(), k.into());
        }
        let est = EffectEstimate::from_predictions("rvae", s.y_test, y_hat, d)?;
        Ok((net, log, std, est))
    }
}

impl Estimator for RvaeEstimator {
    fn name(&self) -> &str {
        "rvae"
    }

    fn estimate(&self, panel: &PanelMatrix, mask: &TreatmentMask, seed: u64) -> Result<EffectEstimate> {
        self.fit(panel, mask, seed).map(|f| f.3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn small() -> RvaeConfig {
        RvaeConfig { enc_hidden: 4, latent_dim: 3, dec_hidden: 4, n_samples: 8, ..Default::default() }
    }

    #[test]
    fn kl_vanishes_at_the_prior() {
        assert_eq!(kl_divergence(&[0.0; 5], &[0.0; 5]), 0.0);
        assert!(kl_divergence(&[0.5], &[0.0]) > 0.0);
    }

    #[test]
    fn zero_variance_latent_is_deterministic() {
        let mut net = RvaeNet::new(1, &small(), &mut rng_from_seed(1));
        net.logvar.w.as_mut_slice().fill(0.0);
        net.logvar.b.fill(-2000.0);
        let x = Matrix::from_rows(&[[0.1, 0.3, -0.2]]);
        let a = rvae_predict(&net, &x, 2, 1, 5).unwrap();
        let b = rvae_predict(&net, &x, 2, 1, 6).unwrap();
        assert_eq!(a, b);
        assert_eq!(rvae_predict(&net, &x, 0, 4, 5).unwrap().shape(), (1, 0));
    }

    #[test]
    fn head_appears_only_when_widths_differ() {
        let net = RvaeNet::new(1, &small(), &mut rng_from_seed(1));
        assert!(net.head.is_none());
        assert_eq!(net.dec2.hidden_size(), 1);
        let wide = RvaeNet::new(1, &RvaeConfig { dec_output: Some(3), ..small() }, &mut rng_from_seed(1));
        assert_eq!(wide.head.as_ref().map(|h| h.output_size()), Some(1));
    }
}
