//! Encoder-decoder counterfactual model.
//!
//! A two-layer LSTM encodes the pre-period; a GRU decoder starts from the top encoder
//! state and, at each post-period step, reads the previous output together with that
//! final encoder state (the context) before a dense head maps its state to a prediction.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::layers::{Dense, Gru, GruCache, Lstm, LstmCache, Params};
use super::{add_l2_grad, Standardizer, Stepper, TrainConfig, TrainingLog};
use crate::error::{invalid, Error, Result};
use crate::estimator::{Diagnostics, EffectEstimate, Estimator};
use crate::linalg::Matrix;
use crate::math::ceil;
use crate::panel::{split, PanelMatrix, SplitView, TreatmentMask};
use crate::propensity::{fit_logistic, predict_scores, PropensityScores, UnitCovariates, DEFAULT_CLIP_EPS};
use crate::rng::{stream, substream, Rng};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncoderDecoderNet {
    pub enc1: Lstm,
    pub enc2: Lstm,
    pub dec: Gru,
    pub head: Dense,
}

impl Params for EncoderDecoderNet {
    fn visit(&self, f: &mut dyn FnMut(&[f64], bool)) {
        self.enc1.visit(f);
        self.enc2.visit(f);
        self.dec.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64], bool)) {
        self.enc1.visit_mut(f);
        self.enc2.visit_mut(f);
        self.dec.visit_mut(f);
        self.head.visit_mut(f);
    }
}

/// One training pair: input `T0 × F`, target `T★ × F` and optional per-cell weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Matrix,
    pub y: Matrix,
    pub weight: Option<Matrix>,
}

impl Sample {
    pub fn from_rows(x: &[f64], y: &[f64], weight: Option<&[f64]>) -> Self {
        Self {
            x: Matrix::from_fn(x.len(), 1, |t, _| x[t]),
            y: Matrix::from_fn(y.len(), 1, |t, _| y[t]),
            weight: weight.map(|w| Matrix::from_fn(w.len(), 1, |t, _| w[t])),
        }
    }
}

struct Encoded {
    c1: Vec<LstmCache>,
    c2: Vec<LstmCache>,
}

impl Encoded {
    fn context(&self) -> &[f64] {
        &self.c2.last().expect("non-empty input sequence").h
    }
}

impl EncoderDecoderNet {
    /// Encoder layers and decoder all have `hidden` units; `features` is the per-step width.
    pub fn new(features: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            enc1: Lstm::new(features, hidden, rng),
            enc2: Lstm::new(hidden, hidden, rng),
            dec: Gru::new(features + hidden, hidden, rng),
            head: Dense::new(hidden, features, rng),
        }
    }

    pub fn zeros(features: usize, hidden: usize) -> Self {
        Self {
            enc1: Lstm::zeros(features, hidden),
            enc2: Lstm::zeros(hidden, hidden),
            dec: Gru::zeros(features + hidden, hidden),
            head: Dense::zeros(hidden, features),
        }
    }

    pub fn features(&self) -> usize {
        self.enc1.input_size()
    }

    pub fn hidden(&self) -> usize {
        self.enc2.hidden_size()
    }

    fn encode(&self, xs: &[Vec<f64>]) -> Encoded {
        let h = self.enc1.hidden_size();
        let c1 = self.enc1.forward_seq(xs, &vec![0.0; h], &vec![0.0; h]);
        let h1: Vec<Vec<f64>> = c1.iter().map(|c| c.h.clone()).collect();
        let h2 = self.enc2.hidden_size();
        let c2 = self.enc2.forward_seq(&h1, &vec![0.0; h2], &vec![0.0; h2]);
        Encoded { c1, c2 }
    }

    fn decoder_input(prev: &[f64], ctx: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(prev.len() + ctx.len());
        v.extend_from_slice(prev);
        v.extend_from_slice(ctx);
        v
    }

    fn rows(m: &Matrix) -> Vec<Vec<f64>> {
        (0..m.rows()).map(|t| m.row(t).to_vec()).collect()
    }

    /// Decoder inputs are the ground-truth previous outputs; the first is the last input.
    pub fn forward_teacher_forced(&self, x_seq: &Matrix, y_seq: &Matrix) -> Matrix {
        let enc = self.encode(&Self::rows(x_seq));
        let ctx = enc.context().to_vec();
        let mut h = ctx.clone();
        let mut out = Matrix::zeros(y_seq.rows(), self.features());
        for t in 0..y_seq.rows() {
            let prev = if t == 0 { x_seq.row(x_seq.rows() - 1) } else { y_seq.row(t - 1) };
            h = self.dec.forward_step(&Self::decoder_input(prev, &ctx), &h).h;
            out.row_mut(t).copy_from_slice(&self.head.forward(&h));
        }
        out
    }

    /// Generation mode: each decoder step reads the previous prediction.
    pub fn forward_autoregressive(&self, x_seq: &Matrix, steps: usize) -> Matrix {
        let mut out = Matrix::zeros(steps, self.features());
        if steps == 0 {
            return out;
        }
        let enc = self.encode(&Self::rows(x_seq));
        let ctx = enc.context().to_vec();
        let mut h = ctx.clone();
        let mut prev = x_seq.row(x_seq.rows() - 1).to_vec();
        for t in 0..steps {
            h = self.dec.forward_step(&Self::decoder_input(&prev, &ctx), &h).h;
            prev = self.head.forward(&h);
            out.row_mut(t).copy_from_slice(&prev);
        }
        out
    }

    /// Teacher-forced loss and gradient for one sample. `x_in` is the (possibly
    /// dropped-out) encoder input; `scale` multiplies the summed weighted squared error.
    fn sample_grad(&self, s: &Sample, x_in: &Matrix, scale: f64, g: &mut Self) -> f64 {
        let f = self.features();
        let hs = self.hidden();
        let enc = self.encode(&Self::rows(x_in));
        let ctx = enc.context().to_vec();
        let t_star = s.y.rows();
        let mut caches: Vec<GruCache> = Vec::with_capacity(t_star);
        let mut dys: Vec<Vec<f64>> = Vec::with_capacity(t_star);
        let mut loss = 0.0;
        let mut h = ctx.clone();
        for t in 0..t_star {
            let prev = if t == 0 { s.x.row(s.x.rows() - 1) } else { s.y.row(t - 1) };
            let cache = self.dec.forward_step(&Self::decoder_input(prev, &ctx), &h);
            let y_hat = self.head.forward(&cache.h);
            let mut dy = vec![0.0; f];
            for k in 0..f {
                let w = s.weight.as_ref().map_or(1.0, |w| w[(t, k)]);
                let r = y_hat[k] - s.y[(t, k)];
                loss += w * r * r;
                dy[k] = 2.0 * w * r * scale;
            }
            h = cache.h.clone();
            caches.push(cache);
            dys.push(dy);
        }
        let mut dctx = vec![0.0; hs];
        let mut dh_next = vec![0.0; hs];
        for t in (0..t_star).rev() {
            let mut dh = dh_next;
            self.head.backward(&caches[t].h, &dys[t], &mut g.head, &mut dh);
            let mut din = vec![0.0; f + hs];
            dh_next = self.dec.backward_step(&caches[t], &dh, &mut g.dec, &mut din);
            for (a, b) in dctx.iter_mut().zip(&din[f..]) {
                *a += b;
            }
        }
        for (a, b) in dctx.iter_mut().zip(&dh_next) {
            *a += b;
        }
        let mut dh2 = vec![vec![0.0; hs]; enc.c2.len()];
        if let Some(last) = dh2.last_mut() {
            *last = dctx;
        }
        let (dx2, _, _) = self.enc2.backward_seq(&enc.c2, &dh2, &mut g.enc2);
        self.enc1.backward_seq(&enc.c1, &dx2, &mut g.enc1);
        loss * scale
    }

    /// Normaliser of the batch loss: input cells `B·T0·F` for a propensity-weighted
    /// batch (the weighted MSE), output cells `B·T★·F` otherwise.
    fn denominator(&self, batch: &[&Sample]) -> f64 {
        let b = batch.len() as f64;
        let f = self.features() as f64;
        match batch.first() {
            Some(s) if s.weight.is_some() => b * s.x.rows() as f64 * f,
            Some(s) => b * s.y.rows().max(1) as f64 * f,
            None => 1.0,
        }
    }

    /// Teacher-forced batch loss `data + l2 Σ‖W‖²` and its gradient. `dropout` holds
    /// one multiplicative mask per sample, shaped like its input.
    pub fn loss_and_grad(&self, batch: &[&Sample], l2: f64, dropout: Option<&[Matrix]>) -> (f64, Self) {
        let mut g = self.zeros_like();
        let scale = 1.0 / self.denominator(batch);
        let mut loss = 0.0;
        for (k, s) in batch.iter().enumerate() {
            let x_in = match dropout {
                Some(masks) => Matrix::from_fn(s.x.rows(), s.x.cols(), |i, j| s.x[(i, j)] * masks[k][(i, j)]),
                None => s.x.clone(),
            };
            loss += self.sample_grad(s, &x_in, scale, &mut g);
        }
        add_l2_grad(self, &mut g, l2);
        (loss + l2 * self.weight_norm_sq(), g)
    }

    /// Teacher-forced loss without the gradient.
    pub fn loss(&self, batch: &[&Sample], l2: f64) -> f64 {
        let scale = 1.0 / self.denominator(batch);
        let data: f64 = batch
            .iter()
            .map(|s| weighted_sq(&self.forward_teacher_forced(&s.x, &s.y), s))
            .sum();
        data * scale + l2 * self.weight_norm_sq()
    }

    /// Generation-mode loss without regularisation, as used for validation.
    pub fn evaluation_loss(&self, batch: &[&Sample]) -> f64 {
        let scale = 1.0 / self.denominator(batch);
        batch
            .iter()
            .map(|s| weighted_sq(&self.forward_autoregressive(&s.x, s.y.rows()), s))
            .sum::<f64>()
            * scale
    }
}

fn weighted_sq(pred: &Matrix, s: &Sample) -> f64 {
    let mut total = 0.0;
    for t in 0..s.y.rows() {
        for k in 0..s.y.cols() {
            let w = s.weight.as_ref().map_or(1.0, |w| w[(t, k)]);
            let r = pred[(t, k)] - s.y[(t, k)];
            total += w * r * r;
        }
    }
    total
}

fn dropout_mask(rng: &mut Rng, rows: usize, cols: usize, rate: f64) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    Matrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < rate { 0.0 } else { keep })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EncoderDecoderConfig {
    pub hidden: usize,
    pub train: TrainConfig,
}

impl Default for EncoderDecoderConfig {
    fn default() -> Self {
        Self { hidden: 128, train: TrainConfig::default() }
    }
}

/// Splits `j` controls into training and validation counts; the validation units are
/// the last `⌈fraction · j⌉`, leaving at least one for training.
pub(crate) fn validation_split(j: usize, fraction: f64) -> (usize, usize) {
    let n_val = (ceil(fraction * j as f64) as usize).min(j - 1);
    (j - n_val, n_val)
}

/// Trains on control units, input = pre-period, target = post-period.
///
/// With `scores` the loss is the propensity-weighted MSE over the controls' post-period
/// scores; without, plain MSE. Parameters from the final epoch are returned.
pub fn train_encoder_decoder(
    split: &SplitView,
    scores: Option<&PropensityScores>,
    cfg: &EncoderDecoderConfig,
) -> Result<(EncoderDecoderNet, TrainingLog)> {
    let tc = &cfg.train;
    tc.validate()?;
    let (j, t0) = (split.n_controls(), split.t0());
    if j < 2 || t0 < 2 {
        return Err(invalid!(InvalidArgument, "need at least 2 controls and 2 pre-periods, got J={j}, T0={t0}"));
    }
    if cfg.hidden == 0 {
        return Err(invalid!(InvalidArgument, "hidden size must be positive"));
    }
    let weights = scores.map(|s| s.training_block(&split.control_rows, t0));
    let samples: Vec<Sample> = (0..j)
        .map(|i| Sample::from_rows(split.x_train.row(i), split.y_train.row(i), weights.as_ref().map(|w| w.row(i))))
        .collect();
    let (n_train, n_val) = validation_split(j, tc.validation_fraction);
    let (train, val) = samples.split_at(n_train);
    let val: Vec<&Sample> = val.iter().collect();
    debug_assert_eq!(val.len(), n_val);
    let batch_size = tc.batch_size.unwrap_or(32).min(n_train);

    let mut net = EncoderDecoderNet::new(1, cfg.hidden, &mut substream(tc.seed, stream::NET_INIT, 0));
    let mut stepper = Stepper::new(tc, net.n_params());
    let mut log = TrainingLog::default();
    for epoch in 0..tc.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut substream(tc.seed, stream::BATCH_ORDER, epoch as u64));
        let mut drop_rng = substream(tc.seed, stream::DROPOUT, epoch as u64);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let masks: Option<Vec<Matrix>> = (tc.input_dropout_rate > 0.0).then(|| {
                batch.iter().map(|s| dropout_mask(&mut drop_rng, s.x.rows(), s.x.cols(), tc.input_dropout_rate)).collect()
            });
            let (loss, grads) = net.loss_and_grad(&batch, tc.l2_coeff, masks.as_deref());
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::TrainingDiverged { epoch: epoch + 1 });
            }
            stepper.step(&mut net, &grads);
            if !net.is_finite() {
                return Err(Error::TrainingDiverged { epoch: epoch + 1 });
            }
            total += loss;
            batches += 1;
        }
        log.train_loss.push(total / batches as f64);
        let v = if val.is_empty() { f64::NAN } else { net.evaluation_loss(&val) };
        log.validation_loss.push(v);
    }
    Ok((net, log))
}

/// A trained model together with the scaling applied to its inputs.
#[derive(Debug, Clone)]
pub struct FittedEncoderDecoder {
    pub net: EncoderDecoderNet,
    pub log: TrainingLog,
    pub standardizer: Standardizer,
    pub estimate: EffectEstimate,
}

/// Encoder-decoder estimator. Outcomes are standardized by the control pre-period
/// mean and standard deviation before training and mapped back afterwards. When
/// covariates are attached, the training loss is propensity weighted.
#[derive(Debug, Clone, Default)]
pub struct EncoderDecoderEstimator {
    pub config: EncoderDecoderConfig,
    pub covariates: Option<UnitCovariates>,
}

impl EncoderDecoderEstimator {
    pub fn new(config: EncoderDecoderConfig) -> Self {
        Self { config, covariates: None }
    }

    /// Trains with `seed` in place of the configured seed.
    pub fn fit(&self, panel: &PanelMatrix, mask: &TreatmentMask, seed: u64) -> Result<FittedEncoderDecoder> {
        panel.require_complete()?;
        let s = split(panel, mask)?;
        let std = Standardizer::fit(s.x_train.as_slice());
        let z = |m: &Matrix| m.map(|v| std.forward(v));
        let zs = SplitView {
            x_train: z(&s.x_train),
            y_train: z(&s.y_train),
            x_test: z(&s.x_test),
            y_test: z(&s.y_test),
            control_rows: s.control_rows.clone(),
            treated_rows: s.treated_rows.clone(),
        };
        let scores = match &self.covariates {
            Some(c) => {
                let table = c.for_panel(panel)?;
                let w = fit_logistic(&table, mask.treated(), 100, 1e-8)?;
                Some(predict_scores(&w, &table, panel.n_periods(), DEFAULT_CLIP_EPS)?)
            }
            None => None,
        };
        let mut cfg = self.config.clone();
        cfg.train.seed = seed;
        let (net, log) = train_encoder_decoder(&zs, scores.as_ref(), &cfg)?;
        let t_star = s.t_star();
        let mut y_hat = Matrix::zeros(s.n_treated(), t_star);
        for g in 0..s.n_treated() {
            let x = Matrix::from_fn(s.t0(), 1, |t, _| zs.x_test[(g, t)]);
            let pred = net.forward_autoregressive(&x, t_star);
            for t in 0..t_star {
                y_hat[(g, t)] = std.inverse(pred[(t, 0)]);
            }
        }
        let mut d = Diagnostics::new();
        d.insert("epochs".into(), cfg.train.epochs.into());
        d.insert("weighted".into(), scores.is_some().into());
        if let Some(&l) = log.train_loss.last() {
            d.insert("final_train_loss".into(), l.into());
        }
        if let Some(&l) = log.validation_loss.last() {
            d.insert("final_validation_loss".into(), l.into());
        }
        let estimate = EffectEstimate::from_predictions("encoder_decoder", s.y_test, y_hat, d)?;
        Ok(FittedEncoderDecoder { net, log, standardizer: std, estimate })
    }
}

impl Estimator for EncoderDecoderEstimator {
    fn name(&self) -> &str {
        "encoder_decoder"
    }

    fn estimate(&self, panel: &PanelMatrix, mask: &TreatmentMask, seed: u64) -> Result<EffectEstimate> {
        self.fit(panel, mask, seed).map(|f| f.estimate)
    }
}
