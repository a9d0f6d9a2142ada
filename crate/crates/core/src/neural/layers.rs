//! Dense, LSTM and GRU layers with explicit forward caches and backward passes.
//!
//! Gradients live in a value of the same type as the layer (see [`Params::zeros_like`]),
//! so an optimizer can walk parameters and gradients in lockstep.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::linalg::Matrix;
use crate::math::{sigmoid, sqrt, tanh};
use crate::rng::{rng_from_seed, Rng};

/// Walks every parameter buffer. The flag marks weight matrices, which carry the L2
/// penalty; biases are visited with `false`.
pub trait Params: Clone {
    fn visit(&self, f: &mut dyn FnMut(&[f64], bool));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64], bool));

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |b, _| b.fill(0.0));
        z
    }

    fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |b, _| n += b.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.visit(&mut |b, _| out.extend_from_slice(b));
        out
    }

    fn load(&mut self, flat: &[f64]) {
        let mut k = 0;
        self.visit_mut(&mut |b, _| {
            b.copy_from_slice(&flat[k..k + b.len()]);
            k += b.len();
        });
        debug_assert_eq!(k, flat.len());
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.n_params());
        self.visit(&mut |b, w| out.extend(core::iter::repeat_n(w, b.len())));
        out
    }

    /// `Σ ‖W‖²` over weight matrices.
    fn weight_norm_sq(&self) -> f64 {
        let mut s = 0.0;
        self.visit(&mut |b, w| {
            if w {
                s += b.iter().map(|x| x * x).sum::<f64>();
            }
        });
        s
    }

    fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |b, _| ok &= b.iter().all(|x| x.is_finite()));
        ok
    }

    /// `self += other`, elementwise.
    fn accumulate(&mut self, other: &Self) {
        let flat = other.flatten();
        let mut k = 0;
        self.visit_mut(&mut |b, _| {
            for x in b.iter_mut() {
                *x += flat[k];
                k += 1;
            }
        });
    }
}

fn xavier_fill(rng: &mut Rng, m: &mut Matrix, fan_in: usize, fan_out: usize) {
    let bound = sqrt(6.0 / (fan_in + fan_out) as f64);
    for x in m.as_mut_slice() {
        *x = rng.random_range(-bound..=bound);
    }
}

/// A `fan_out × fan_in` matrix drawn uniformly from `±√(6 / (fan_in + fan_out))`.
pub fn xavier_init(fan_in: usize, fan_out: usize, seed: u64) -> Matrix {
    let mut m = Matrix::zeros(fan_out, fan_in);
    xavier_fill(&mut rng_from_seed(seed), &mut m, fan_in, fan_out);
    m
}

/// `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dense {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        let mut w = Matrix::zeros(output, input);
        xavier_fill(rng, &mut w, input, output);
        Self { w, b: vec![0.0; output] }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self { w: Matrix::zeros(output, input), b: vec![0.0; output] }
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub fn output_size(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.b.clone();
        self.w.gemv_acc(x, &mut y);
        y
    }

    /// Accumulates parameter gradients into `grads` and adds `Wᵀ dy` to `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Dense, dx: &mut [f64]) {
        grads.w.add_outer(dy, x);
        for (g, d) in grads.b.iter_mut().zip(dy) {
            *g += d;
        }
        self.w.gemv_t_acc(dy, dx);
    }
}

impl Params for Dense {
    fn visit(&self, f: &mut dyn FnMut(&[f64], bool)) {
        f(self.w.as_slice(), true);
        f(&self.b, false);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64], bool)) {
        f(self.w.as_mut_slice(), true);
        f(&mut self.b, false);
    }
}

/// LSTM with gate blocks stacked as input, forget, candidate, output.
///
/// Gates are sigmoids and the candidate is `tanh`; the hidden output is linear in the
/// cell state, `h = o ⊙ c`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Lstm {
    /// `4H × I`
    pub w: Matrix,
    /// `4H × H`
    pub u: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated `[i, f, g, o]`.
    pub gates: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl Lstm {
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut w = Matrix::zeros(4 * hidden, input);
        let mut u = Matrix::zeros(4 * hidden, hidden);
        xavier_fill(rng, &mut w, input, hidden);
        xavier_fill(rng, &mut u, hidden, hidden);
        Self { w, u, b: vec![0.0; 4 * hidden] }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self { w: Matrix::zeros(4 * hidden, input), u: Matrix::zeros(4 * hidden, hidden), b: vec![0.0; 4 * hidden] }
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.u.cols()
    }

    pub fn forward_step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmCache {
        let hs = self.hidden_size();
        let mut a = self.b.clone();
        self.w.gemv_acc(x, &mut a);
        self.u.gemv_acc(h_prev, &mut a);
        let mut c = vec![0.0; hs];
        let mut h = vec![0.0; hs];
        for k in 0..hs {
            let i = sigmoid(a[k]);
            let f = sigmoid(a[hs + k]);
            let g = tanh(a[2 * hs + k]);
            let o = sigmoid(a[3 * hs + k]);
            a[k] = i;
            a[hs + k] = f;
            a[2 * hs + k] = g;
            a[3 * hs + k] = o;
            c[k] = f * c_prev[k] + i * g;
            h[k] = o * c[k];
        }
        LstmCache { x: x.to_vec(), h_prev: h_prev.to_vec(), c_prev: c_prev.to_vec(), gates: a, h, c }
    }

    /// Back-propagates one step. `dh` and `dc` are the gradients reaching this step's
    /// outputs; returns the gradients for `h_prev` and `c_prev` and adds the input
    /// gradient to `dx`.
    pub fn backward_step(
        &self,
        cache: &LstmCache,
        dh: &[f64],
        dc: &[f64],
        grads: &mut Lstm,
        dx: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let hs = self.hidden_size();
        let g = &cache.gates;
        let mut da = vec![0.0; 4 * hs];
        let mut dc_prev = vec![0.0; hs];
        for k in 0..hs {
            let (i, f, cand, o) = (g[k], g[hs + k], g[2 * hs + k], g[3 * hs + k]);
            let dct = dc[k] + dh[k] * o;
            da[k] = dct * cand * i * (1.0 - i);
            da[hs + k] = dct * cache.c_prev[k] * f * (1.0 - f);
            da[2 * hs + k] = dct * i * (1.0 - cand * cand);
            da[3 * hs + k] = dh[k] * cache.c[k] * o * (1.0 - o);
            dc_prev[k] = dct * f;
        }
        grads.w.add_outer(&da, &cache.x);
        grads.u.add_outer(&da, &cache.h_prev);
        for (gb, d) in grads.b.iter_mut().zip(&da) {
            *gb += d;
        }
        self.w.gemv_t_acc(&da, dx);
        let mut dh_prev = vec![0.0; hs];
        self.u.gemv_t_acc(&da, &mut dh_prev);
        (dh_prev, dc_prev)
    }

    /// Runs a whole sequence from `(h0, c0)`.
    pub fn forward_seq(&self, xs: &[Vec<f64>], h0: &[f64], c0: &[f64]) -> Vec<LstmCache> {
        let mut out: Vec<LstmCache> = Vec::with_capacity(xs.len());
        for x in xs {
            let cache = match out.last() {
                Some(prev) => self.forward_step(x, &prev.h, &prev.c),
                None => self.forward_step(x, h0, c0),
            };
            out.push(cache);
        }
        out
    }

    /// Backpropagation through time. `dhs[t]` is the loss gradient with respect to
    /// the hidden output at step `t`. Returns per-step input gradients and the
    /// gradients for the initial state.
    pub fn backward_seq(
        &self,
        caches: &[LstmCache],
        dhs: &[Vec<f64>],
        grads: &mut Lstm,
    ) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let hs = self.hidden_size();
        let mut dxs = vec![vec![0.0; self.input_size()]; caches.len()];
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        for t in (0..caches.len()).rev() {
            let dh: Vec<f64> = dh_next.iter().zip(&dhs[t]).map(|(a, b)| a + b).collect();
            let (dhp, dcp) = self.backward_step(&caches[t], &dh, &dc_next, grads, &mut dxs[t]);
            dh_next = dhp;
            dc_next = dcp;
        }
        (dxs, dh_next, dc_next)
    }
}

impl Params for Lstm {
    fn visit(&self, f: &mut dyn FnMut(&[f64], bool)) {
        f(self.w.as_slice(), true);
        f(self.u.as_slice(), true);
        f(&self.b, false);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64], bool)) {
        f(self.w.as_mut_slice(), true);
        f(self.u.as_mut_slice(), true);
        f(&mut self.b, false);
    }
}

/// One LSTM step without caching.
pub fn lstm_step(params: &Lstm, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let cache = params.forward_step(x, h_prev, c_prev);
    (cache.h, cache.c)
}

/// GRU with gate blocks stacked as update, reset, candidate.
///
/// `n = W_n x + r ⊙ (U_n h) + b_n` is linear, and `h' = (1 - z) ⊙ h + z ⊙ n`, so a
/// closed update gate passes the state through unchanged.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Gru {
    /// `3H × I`
    pub w: Matrix,
    /// `3H × H`
    pub u: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    /// `U_n h_prev`
    pub un: Vec<f64>,
    pub n: Vec<f64>,
    pub h: Vec<f64>,
}

impl Gru {
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut w = Matrix::zeros(3 * hidden, input);
        let mut u = Matrix::zeros(3 * hidden, hidden);
        xavier_fill(rng, &mut w, input, hidden);
        xavier_fill(rng, &mut u, hidden, hidden);
        Self { w, u, b: vec![0.0; 3 * hidden] }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self { w: Matrix::zeros(3 * hidden, input), u: Matrix::zeros(3 * hidden, hidden), b: vec![0.0; 3 * hidden] }
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.u.cols()
    }

    pub fn forward_step(&self, x: &[f64], h_prev: &[f64]) -> GruCache {
        let hs = self.hidden_size();
        let mut a = self.b.clone();
        self.w.gemv_acc(x, &mut a);
        let mut uh = vec![0.0; 3 * hs];
        self.u.gemv_acc(h_prev, &mut uh);
        let mut z = vec![0.0; hs];
        let mut r = vec![0.0; hs];
        let mut n = vec![0.0; hs];
        let mut h = vec![0.0; hs];
        for k in 0..hs {
            z[k] = sigmoid(a[k] + uh[k]);
            r[k] = sigmoid(a[hs + k] + uh[hs + k]);
            n[k] = a[2 * hs + k] + r[k] * uh[2 * hs + k];
            h[k] = (1.0 - z[k]) * h_prev[k] + z[k] * n[k];
        }
        let un = uh[2 * hs..].to_vec();
        GruCache { x: x.to_vec(), h_prev: h_prev.to_vec(), z, r, un, n, h }
    }

    /// Back-propagates one step; returns the gradient for `h_prev` and adds the input
    /// gradient to `dx`.
    pub fn backward_step(&self, cache: &GruCache, dh: &[f64], grads: &mut Gru, dx: &mut [f64]) -> Vec<f64> {
        let hs = self.hidden_size();
        let mut dax = vec![0.0; 3 * hs];
        let mut dah = vec![0.0; 3 * hs];
        let mut dh_prev = vec![0.0; hs];
        for k in 0..hs {
            let (z, r) = (cache.z[k], cache.r[k]);
            let dn = dh[k] * z;
            let dz = dh[k] * (cache.n[k] - cache.h_prev[k]);
            let dr = dn * cache.un[k];
            dh_prev[k] = dh[k] * (1.0 - z);
            let daz = dz * z * (1.0 - z);
            let dar = dr * r * (1.0 - r);
            dax[k] = daz;
            dax[hs + k] = dar;
            dax[2 * hs + k] = dn;
            dah[k] = daz;
            dah[hs + k] = dar;
            dah[2 * hs + k] = dn * r;
        }
        grads.w.add_outer(&dax, &cache.x);
        grads.u.add_outer(&dah, &cache.h_prev);
        for (gb, d) in grads.b.iter_mut().zip(&dax) {
            *gb += d;
        }
        self.w.gemv_t_acc(&dax, dx);
        self.u.gemv_t_acc(&dah, &mut dh_prev);
        dh_prev
    }
}

impl Params for Gru {
    fn visit(&self, f: &mut dyn FnMut(&[f64], bool)) {
        f(self.w.as_slice(), true);
        f(self.u.as_slice(), true);
        f(&self.b, false);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64], bool)) {
        f(self.w.as_mut_slice(), true);
        f(self.u.as_mut_slice(), true);
        f(&mut self.b, false);
    }
}

/// One GRU step without caching.
pub fn gru_step(params: &Gru, h_prev: &[f64], x: &[f64]) -> Vec<f64> {
    params.forward_step(x, h_prev).h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lstm_stays_at_zero() {
        let l = Lstm::zeros(2, 3);
        let (h, c) = lstm_step(&l, &[0.0; 3], &[0.0; 3], &[0.0; 2]);
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn saturated_forget_gate_keeps_memory() {
        let mut l = Lstm::zeros(1, 2);
        // input gate closed, forget gate open
        l.b[0..2].fill(-1e3);
        l.b[2..4].fill(1e3);
        let (_, c) = lstm_step(&l, &[0.0; 2], &[0.7, -1.3], &[5.0]);
        assert_eq!(c, vec![0.7, -1.3]);
    }

    #[test]
    fn closed_update_gate_passes_state() {
        let mut rng = rng_from_seed(3);
        let mut g = Gru::new(2, 3, &mut rng);
        g.b[0..3].fill(-1e3);
        g.w.row_mut(0).fill(0.0);
        let h_prev = [0.2, -0.4, 1.1];
        let h = gru_step(&g, &h_prev, &[0.3, 0.1]);
        for (a, b) in h.iter().zip(&h_prev) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(gru_step(&Gru::zeros(2, 3), &[0.0; 3], &[0.0; 2]), vec![0.0; 3]);
    }

    #[test]
    fn xavier_bounds_and_variance() {
        let m = xavier_init(3, 3, 11);
        assert!(m.as_slice().iter().all(|x| x.abs() <= 1.0));
        assert_eq!(m, xavier_init(3, 3, 11));
        let big = xavier_init(400, 250, 5);
        let n = big.as_slice().len() as f64;
        let mean = big.as_slice().iter().sum::<f64>() / n;
        let var = big.as_slice().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        let target = 2.0 / 650.0;
        assert!((var / target - 1.0).abs() < 0.05, "{var} vs {target}");
    }

    #[test]
    fn flatten_load_round_trip() {
        let mut rng = rng_from_seed(1);
        let l = Lstm::new(2, 3, &mut rng);
        let flat = l.flatten();
        let mut z = l.zeros_like();
        z.load(&flat);
        assert_eq!(z, l);
        let mask = l.decay_mask();
        assert_eq!(mask.iter().filter(|&&w| !w).count(), 12);
    }
}
