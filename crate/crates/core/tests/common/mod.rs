//! Test-only oracles, written independently of the library code paths they check.
#![allow(dead_code)]

use gait_core::autoencoder::{batch_loss, forward_batch, Autoencoder, DecoderFeed};
use gait_core::lstm::{lstm_forward, Gate, LstmParams, LstmState};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-5;

/// Relative error whose denominator is floored at `1e-5`: entries smaller
/// than that are judged against the truncation noise of a central difference
/// with step `1e-5` (about `1e-10` absolute) instead of their own magnitude.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-5);
    (analytic - numeric).abs() / scale
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_lstm(d: usize, h: usize, rng: &mut ChaCha8Rng) -> LstmParams {
    let mut p = LstmParams::zeros(d, h);
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v = rng.random_range(-0.9..0.9));
    }
    p
}

pub fn random_autoencoder(d: usize, h: usize, rng: &mut ChaCha8Rng) -> Autoencoder {
    let mut net = Autoencoder::zeros(d, h);
    for t in net.tensors_mut() {
        t.iter_mut().for_each(|v| *v = rng.random_range(-0.7..0.7));
    }
    net
}

pub fn random_matrix(r: usize, c: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(lo..hi))
}

/// Linear functional of an LSTM run: sum_t <g_t, h_t> + <gc, c_T> + <gh, h_T>.
pub fn lstm_functional(
    p: &LstmParams,
    xs: &[Array2<f64>],
    init: &LstmState,
    g: &[Array2<f64>],
    fin: &LstmState,
) -> f64 {
    let (states, _) = lstm_forward(p, xs, init).unwrap();
    let mut total = 0.0;
    for (s, gt) in states.iter().zip(g) {
        total += (&s.h * gt).sum();
    }
    let last = states.last().unwrap();
    total + (&last.c * &fin.c).sum() + (&last.h * &fin.h).sum()
}

/// Central difference of `f` with respect to every entry of every tensor of `params`.
pub fn fd_gradient<P: Clone>(
    params: &P,
    tensors_mut: impl Fn(&mut P) -> Vec<&mut [f64]>,
    f: impl Fn(&P) -> f64,
) -> Vec<Vec<f64>> {
    let mut work = params.clone();
    let shapes: Vec<usize> = tensors_mut(&mut work).iter().map(|t| t.len()).collect();
    let mut out = Vec::new();
    for (k, &n) in shapes.iter().enumerate() {
        let mut grad = vec![0.0; n];
        for (j, gj) in grad.iter_mut().enumerate() {
            let orig = tensors_mut(&mut work)[k][j];
            tensors_mut(&mut work)[k][j] = orig + FD_EPS;
            let up = f(&work);
            tensors_mut(&mut work)[k][j] = orig - FD_EPS;
            let down = f(&work);
            tensors_mut(&mut work)[k][j] = orig;
            *gj = (up - down) / (2.0 * FD_EPS);
        }
        out.push(grad);
    }
    out
}

pub fn autoencoder_loss(net: &Autoencoder, xs: &[Array2<f64>], feed: DecoderFeed) -> f64 {
    let trace = forward_batch(net, xs, xs, feed).unwrap();
    batch_loss(&trace, xs)
}

/// Max relative error between analytic and numeric tensors, with the
/// location of the worst entry.
pub fn worst(analytic: &[&[f64]], numeric: &[Vec<f64>]) -> (f64, usize, usize) {
    let mut w = (0.0, 0, 0);
    for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert_eq!(a.len(), n.len());
        for j in 0..a.len() {
            let e = rel_err(a[j], n[j]);
            if e > w.0 {
                w = (e, k, j);
            }
        }
    }
    w
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Straight-line transcription of the six peephole LSTM equations for a
/// single unit with a single input. Returns (c_t, h_t).
#[allow(clippy::too_many_arguments)]
pub fn scalar_cell(
    x: f64,
    h_prev: f64,
    c_prev: f64,
    w: &ScalarWeights,
) -> (f64, f64) {
    let i = logistic(w.ix * x + w.ih * h_prev + w.ic * c_prev + w.bi);
    let f = logistic(w.fx * x + w.fh * h_prev + w.fc * c_prev + w.bf);
    let c_hat = (w.cx * x + w.ch * h_prev + w.bc).tanh();
    let c = f * c_prev + i * c_hat;
    let o = logistic(w.ox * x + w.oh * h_prev + w.oc * c + w.bo);
    let h = o * c.tanh();
    (c, h)
}

#[derive(Debug, Clone, Copy)]
pub struct ScalarWeights {
    pub ix: f64,
    pub ih: f64,
    pub ic: f64,
    pub bi: f64,
    pub fx: f64,
    pub fh: f64,
    pub fc: f64,
    pub bf: f64,
    pub cx: f64,
    pub ch: f64,
    pub bc: f64,
    pub ox: f64,
    pub oh: f64,
    pub oc: f64,
    pub bo: f64,
}

impl ScalarWeights {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut r = || rng.random_range(-2.0..2.0);
        ScalarWeights {
            ix: r(),
            ih: r(),
            ic: r(),
            bi: r(),
            fx: r(),
            fh: r(),
            fc: r(),
            bf: r(),
            cx: r(),
            ch: r(),
            bc: r(),
            ox: r(),
            oh: r(),
            oc: r(),
            bo: r(),
        }
    }

    pub fn to_params(self) -> LstmParams {
        let mut p = LstmParams::zeros(1, 1);
        for (gate, wx, wh, b) in [
            (Gate::Input, self.ix, self.ih, self.bi),
            (Gate::Forget, self.fx, self.fh, self.bf),
            (Gate::Cell, self.cx, self.ch, self.bc),
            (Gate::Output, self.ox, self.oh, self.bo),
        ] {
            p.w_x_mut(gate).fill(wx);
            p.w_h_mut(gate).fill(wh);
            p.bias_mut(gate).fill(b);
        }
        p.peephole_mut(Gate::Input).unwrap().fill(self.ic);
        p.peephole_mut(Gate::Forget).unwrap().fill(self.fc);
        p.peephole_mut(Gate::Output).unwrap().fill(self.oc);
        p
    }
}

/// Agreement to `digits` significant digits.
pub fn same_digits(a: f64, b: f64, digits: i32) -> bool {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        return true;
    }
    (a - b).abs() <= scale * 10f64.powi(-digits) || (a - b).abs() < 1e-300
}

/// Pairwise AUC: P(pos > neg) + 0.5 P(pos == neg).
pub fn pairwise_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Number of window offsets found by walking every start position.
pub fn enumerate_windows(n: usize, len: usize, stride: usize) -> Vec<usize> {
    (0..n).filter(|s| s % stride == 0 && s + len <= n).collect()
}
