//! Central finite-difference checks of the analytic gradients.
//!
//! Each check builds a random instance from `seed`, perturbs every parameter (and every
//! input, for the layers) by `±FD_STEP` and returns the largest relative error
//! `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::encdec::{EncoderDecoderNet, Sample};
use super::layers::{Dense, Gru, Lstm, Params};
use super::rvae::{RvaeConfig, RvaeNet};
use crate::linalg::Matrix;
use crate::rng::{rng_from_seed, Rng};

pub const FD_STEP: f64 = 1e-5;
/// Magnitude below which errors are measured absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn randv(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Scrambles every parameter so that biases are non-zero too.
fn perturb<P: Params>(p: &mut P, rng: &mut Rng, scale: f64) {
    p.visit_mut(&mut |b, _| {
        for x in b.iter_mut() {
            *x += scale * rng.random_range(-1.0..1.0);
        }
    });
}

fn check_params<P: Params>(p: &P, analytic: &P, loss: impl Fn(&P) -> f64) -> f64 {
    let flat = p.flatten();
    let grad = analytic.flatten();
    let mut worst: f64 = 0.0;
    let mut q = p.clone();
    for k in 0..flat.len() {
        let mut plus = flat.clone();
        plus[k] += FD_STEP;
        q.load(&plus);
        let lp = loss(&q);
        let mut minus = flat.clone();
        minus[k] -= FD_STEP;
        q.load(&minus);
        let lm = loss(&q);
        worst = worst.max(relative_error(grad[k], (lp - lm) / (2.0 * FD_STEP)));
    }
    worst
}

fn check_inputs(xs: &[Vec<f64>], analytic: &[Vec<f64>], loss: impl Fn(&[Vec<f64>]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for t in 0..xs.len() {
        for k in 0..xs[t].len() {
            let mut plus = xs.to_vec();
            plus[t][k] += FD_STEP;
            let mut minus = xs.to_vec();
            minus[t][k] -= FD_STEP;
            let n = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[t][k], n));
        }
    }
    worst
}

/// Sizes drawn for a random instance: input width, hidden width (≤ 8), sequence length.
fn dims(rng: &mut Rng) -> (usize, usize, usize) {
    (rng.random_range(1..=3), rng.random_range(1..=8), rng.random_range(2..=5))
}

pub fn check_dense(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let (i, o, _) = dims(&mut rng);
    let mut layer = Dense::new(i, o, &mut rng);
    perturb(&mut layer, &mut rng, 0.3);
    let x = randv(&mut rng, i);
    let r = randv(&mut rng, o);
    let loss = |l: &Dense, x: &[f64]| l.forward(x).iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
    let mut g = layer.zeros_like();
    let mut dx = vec![0.0; i];
    layer.backward(&x, &r, &mut g, &mut dx);
    let wp = check_params(&layer, &g, |l| loss(l, &x));
    let wx = check_inputs(&[x.clone()], &[dx], |xs| loss(&layer, &xs[0]));
    wp.max(wx)
}

pub fn check_lstm(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let (i, h, t) = dims(&mut rng);
    let mut layer = Lstm::new(i, h, &mut rng);
    perturb(&mut layer, &mut rng, 0.3);
    let xs: Vec<Vec<f64>> = (0..t).map(|_| randv(&mut rng, i)).collect();
    let h0 = randv(&mut rng, h);
    let c0 = randv(&mut rng, h);
    let rs: Vec<Vec<f64>> = (0..t).map(|_| randv(&mut rng, h)).collect();
    let loss = |l: &Lstm, xs: &[Vec<f64>]| {
        l.forward_seq(xs, &h0, &c0)
            .iter()
            .zip(&rs)
            .map(|(c, r)| c.h.iter().zip(r).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>()
    };
    let caches = layer.forward_seq(&xs, &h0, &c0);
    let mut g = layer.zeros_like();
    let (dxs, _, _) = layer.backward_seq(&caches, &rs, &mut g);
    let wp = check_params(&layer, &g, |l| loss(l, &xs));
    let wx = check_inputs(&xs, &dxs, |x| loss(&layer, x));
    wp.max(wx)
}

pub fn check_gru(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let (i, h, t) = dims(&mut rng);
    let mut layer = Gru::new(i, h, &mut rng);
    perturb(&mut layer, &mut rng, 0.3);
    let xs: Vec<Vec<f64>> = (0..t).map(|_| randv(&mut rng, i)).collect();
    let h0 = randv(&mut rng, h);
    let rs: Vec<Vec<f64>> = (0..t).map(|_| randv(&mut rng, h)).collect();
    let run = |l: &Gru, xs: &[Vec<f64>]| {
        let mut hprev = h0.clone();
        let mut caches = Vec::new();
        for x in xs {
            let c = l.forward_step(x, &hprev);
            hprev = c.h.clone();
            caches.push(c);
        }
        caches
    };
    let loss = |l: &Gru, xs: &[Vec<f64>]| {
        run(l, xs).iter().zip(&rs).map(|(c, r)| c.h.iter().zip(r).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>()
    };
    let caches = run(&layer, &xs);
    let mut g = layer.zeros_like();
    let mut dxs = vec![vec![0.0; i]; t];
    let mut dh_next = vec![0.0; h];
    for s in (0..t).rev() {
        let dh: Vec<f64> = dh_next.iter().zip(&rs[s]).map(|(a, b)| a + b).collect();
        dh_next = layer.backward_step(&caches[s], &dh, &mut g, &mut dxs[s]);
    }
    let wp = check_params(&layer, &g, |l| loss(l, &xs));
    let wx = check_inputs(&xs, &dxs, |x| loss(&layer, x));
    wp.max(wx)
}

/// Full teacher-forced loss of the encoder-decoder, propensity weighted, with L2.
pub fn check_encoder_decoder(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let hidden = rng.random_range(1..=8);
    let mut net = EncoderDecoderNet::new(1, hidden, &mut rng);
    perturb(&mut net, &mut rng, 0.2);
    let b = rng.random_range(1..=3);
    let t0 = rng.random_range(2..=5);
    let t_star = rng.random_range(1..=4);
    let samples: Vec<Sample> = (0..b)
        .map(|_| {
            let w: Vec<f64> = (0..t_star).map(|_| rng.random_range(0.05..0.95)).collect();
            Sample::from_rows(&randv(&mut rng, t0), &randv(&mut rng, t_star), Some(&w))
        })
        .collect();
    let batch: Vec<&Sample> = samples.iter().collect();
    let l2 = 1e-3;
    let (_, g) = net.loss_and_grad(&batch, l2, None);
    check_params(&net, &g, |n| n.loss(&batch, l2))
}

/// Recurrent VAE loss with fixed reparameterisation noise.
pub fn check_rvae(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let cfg = RvaeConfig {
        enc_hidden: rng.random_range(1..=6),
        latent_dim: rng.random_range(1..=4),
        dec_hidden: rng.random_range(1..=6),
        ..RvaeConfig::default()
    };
    let mut net = RvaeNet::new(1, &cfg, &mut rng);
    perturb(&mut net, &mut rng, 0.2);
    let t0 = rng.random_range(2..=5);
    let xs: Vec<Matrix> = (0..2).map(|_| Matrix::from_fn(t0, 1, |_, _| rng.random_range(-1.0..1.0))).collect();
    let eps: Vec<Vec<f64>> = (0..2).map(|_| randv(&mut rng, cfg.latent_dim)).collect();
    let refs: Vec<&Matrix> = xs.iter().collect();
    let (_, g) = net.loss_and_grad(&refs, &eps, 1e-3);
    check_params(&net, &g, |n| n.loss_and_grad(&refs, &eps, 1e-3).0)
}
