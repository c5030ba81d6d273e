//! Peephole LSTM cell with explicit reverse-mode gradients.
//!
//! All tensors are batched: a state or input is a `batch x dim` matrix whose
//! rows are independent sequences. A single sequence is a batch of one.
//!
//! Gate equations per step:
//!
//! ```text
//! i  = sigmoid(W_ix x + W_ih h' + p_i * c' + b_i)
//! f  = sigmoid(W_fx x + W_fh h' + p_f * c' + b_f)
//! g  = tanh(W_cx x + W_ch h' + b_c)
//! c  = f * c' + i * g
//! o  = sigmoid(W_ox x + W_oh h' + p_o * c + b_o)
//! h  = o * tanh(c)
//! ```
//!
//! where `h'`, `c'` are the previous output and cell state. The output gate
//! peeks at the *updated* cell state. Peephole weights are diagonal and are
//! stored as vectors.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis as NdAxis, Zip};
use rand::Rng;

use crate::error::{GaitError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Cell,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Cell, Gate::Output];

    /// Block position inside the stacked `4H` gate dimension.
    pub fn block(self) -> usize {
        match self {
            Gate::Input => 0,
            Gate::Forget => 1,
            Gate::Cell => 2,
            Gate::Output => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Gate::Input => "input",
            Gate::Forget => "forget",
            Gate::Cell => "cell",
            Gate::Output => "output",
        }
    }
}

/// Weights of one peephole LSTM. The four gate matrices are stacked by row
/// in `Gate` order, so `w_x` is `4H x D` and `w_h` is `4H x H`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    input_dim: usize,
    hidden_dim: usize,
    w_x: Array2<f64>,
    w_h: Array2<f64>,
    bias: Array1<f64>,
    peep_i: Array1<f64>,
    peep_f: Array1<f64>,
    peep_o: Array1<f64>,
}

/// Gradients share the parameter layout.
pub type LstmGrads = LstmParams;

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        assert!(input_dim > 0 && hidden_dim > 0, "LSTM dims must be positive");
        let g = 4 * hidden_dim;
        LstmParams {
            input_dim,
            hidden_dim,
            w_x: Array2::zeros((g, input_dim)),
            w_h: Array2::zeros((g, hidden_dim)),
            bias: Array1::zeros(g),
            peep_i: Array1::zeros(hidden_dim),
            peep_f: Array1::zeros(hidden_dim),
            peep_o: Array1::zeros(hidden_dim),
        }
    }

    /// Weights uniform in `(-s, s)` with `s = 1/sqrt(hidden_dim)`, zero biases
    /// except a forget bias of 1, zero peepholes.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut p = LstmParams::zeros(input_dim, hidden_dim);
        let s = init_scale(hidden_dim);
        p.w_x.mapv_inplace(|_| rng.random_range(-s..s));
        p.w_h.mapv_inplace(|_| rng.random_range(-s..s));
        p.bias_mut(Gate::Forget).fill(1.0);
        p
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn rows(&self, gate: Gate) -> std::ops::Range<usize> {
        let h = self.hidden_dim;
        gate.block() * h..(gate.block() + 1) * h
    }

    pub fn w_x(&self, gate: Gate) -> ArrayView2<'_, f64> {
        self.w_x.slice(s![self.rows(gate), ..])
    }

    pub fn w_x_mut(&mut self, gate: Gate) -> ArrayViewMut2<'_, f64> {
        let r = self.rows(gate);
        self.w_x.slice_mut(s![r, ..])
    }

    pub fn w_h(&self, gate: Gate) -> ArrayView2<'_, f64> {
        self.w_h.slice(s![self.rows(gate), ..])
    }

    pub fn w_h_mut(&mut self, gate: Gate) -> ArrayViewMut2<'_, f64> {
        let r = self.rows(gate);
        self.w_h.slice_mut(s![r, ..])
    }

    pub fn bias(&self, gate: Gate) -> ArrayView1<'_, f64> {
        self.bias.slice(s![self.rows(gate)])
    }

    pub fn bias_mut(&mut self, gate: Gate) -> ndarray::ArrayViewMut1<'_, f64> {
        let r = self.rows(gate);
        self.bias.slice_mut(s![r])
    }

    /// Diagonal peephole weights; the cell-candidate gate has none.
    pub fn peephole(&self, gate: Gate) -> Option<&Array1<f64>> {
        match gate {
            Gate::Input => Some(&self.peep_i),
            Gate::Forget => Some(&self.peep_f),
            Gate::Output => Some(&self.peep_o),
            Gate::Cell => None,
        }
    }

    pub fn peephole_mut(&mut self, gate: Gate) -> Option<&mut Array1<f64>> {
        match gate {
            Gate::Input => Some(&mut self.peep_i),
            Gate::Forget => Some(&mut self.peep_f),
            Gate::Output => Some(&mut self.peep_o),
            Gate::Cell => None,
        }
    }

    /// Every tensor as a flat slice, in a fixed order:
    /// `w_x, w_h, bias, peep_i, peep_f, peep_o`.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.w_x.as_slice().expect("standard layout"),
            self.w_h.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
            self.peep_i.as_slice().expect("standard layout"),
            self.peep_f.as_slice().expect("standard layout"),
            self.peep_o.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w_x.as_slice_mut().expect("standard layout"),
            self.w_h.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
            self.peep_i.as_slice_mut().expect("standard layout"),
            self.peep_f.as_slice_mut().expect("standard layout"),
            self.peep_o.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>, state: &LstmState) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(GaitError::Shape(format!(
                "input width {} != input_dim {}",
                x.ncols(),
                self.input_dim
            )));
        }
        if state.c.ncols() != self.hidden_dim || state.h.ncols() != self.hidden_dim {
            return Err(GaitError::Shape(format!(
                "state width {} != hidden_dim {}",
                state.h.ncols(),
                self.hidden_dim
            )));
        }
        if state.c.nrows() != x.nrows() || state.h.nrows() != x.nrows() {
            return Err(GaitError::Shape(format!(
                "state batch {} != input batch {}",
                state.h.nrows(),
                x.nrows()
            )));
        }
        Ok(())
    }
}

pub fn init_scale(hidden_dim: usize) -> f64 {
    1.0 / (hidden_dim as f64).sqrt()
}

/// Recurrent carry `(c, h)`, one row per sequence in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub c: Array2<f64>,
    pub h: Array2<f64>,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden_dim: usize) -> Self {
        LstmState {
            c: Array2::zeros((batch, hidden_dim)),
            h: Array2::zeros((batch, hidden_dim)),
        }
    }

    /// A batch-of-one state from plain vectors.
    pub fn single(c: &[f64], h: &[f64]) -> Self {
        LstmState {
            c: Array2::from_shape_vec((1, c.len()), c.to_vec()).expect("row vector"),
            h: Array2::from_shape_vec((1, h.len()), h.to_vec()).expect("row vector"),
        }
    }

    pub fn batch(&self) -> usize {
        self.h.nrows()
    }
}

/// Everything a step saw and produced, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GateTrace {
    pub x: Array2<f64>,
    pub h_prev: Array2<f64>,
    pub c_prev: Array2<f64>,
    pub i: Array2<f64>,
    pub f: Array2<f64>,
    pub g: Array2<f64>,
    pub o: Array2<f64>,
    pub c: Array2<f64>,
    pub tanh_c: Array2<f64>,
    pub h: Array2<f64>,
}

impl GateTrace {
    pub fn state(&self) -> LstmState {
        LstmState {
            c: self.c.clone(),
            h: self.h.clone(),
        }
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn ensure_finite(a: &Array2<f64>, gate: &'static str, step: usize) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GaitError::NonFinite { gate, step })
    }
}

/// One time step. `step` only labels errors.
pub fn lstm_step(
    params: &LstmParams,
    prev: &LstmState,
    x: ArrayView2<'_, f64>,
    step: usize,
) -> Result<(LstmState, GateTrace)> {
    params.check_input(&x, prev)?;
    let h = params.hidden_dim;

    let mut pre = x.dot(&params.w_x.t());
    pre += &prev.h.dot(&params.w_h.t());
    pre += &params.bias;

    let block = |k: usize| pre.slice(s![.., k * h..(k + 1) * h]);

    let mut i = block(0).to_owned();
    Zip::from(&mut i)
        .and(&prev.c)
        .and_broadcast(&params.peep_i)
        .for_each(|a, &c, &p| *a = sigmoid(*a + p * c));
    ensure_finite(&i, "input", step)?;

    let mut f = block(1).to_owned();
    Zip::from(&mut f)
        .and(&prev.c)
        .and_broadcast(&params.peep_f)
        .for_each(|a, &c, &p| *a = sigmoid(*a + p * c));
    ensure_finite(&f, "forget", step)?;

    let g = block(2).mapv(f64::tanh);
    ensure_finite(&g, "cell", step)?;

    let mut c = Array2::zeros(f.raw_dim());
    Zip::from(&mut c)
        .and(&f)
        .and(&prev.c)
        .and(&i)
        .and(&g)
        .for_each(|c, &f, &cp, &i, &g| *c = f * cp + i * g);
    ensure_finite(&c, "cell", step)?;

    let mut o = block(3).to_owned();
    Zip::from(&mut o)
        .and(&c)
        .and_broadcast(&params.peep_o)
        .for_each(|a, &c, &p| *a = sigmoid(*a + p * c));
    ensure_finite(&o, "output", step)?;

    let tanh_c = c.mapv(f64::tanh);
    let h_out = &o * &tanh_c;

    let state = LstmState {
        c: c.clone(),
        h: h_out.clone(),
    };
    let trace = GateTrace {
        x: x.to_owned(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        i,
        f,
        g,
        o,
        c,
        tanh_c,
        h: h_out,
    };
    Ok((state, trace))
}

/// Folds [`lstm_step`] over `xs` starting from `init`.
pub fn lstm_forward(
    params: &LstmParams,
    xs: &[Array2<f64>],
    init: &LstmState,
) -> Result<(Vec<LstmState>, Vec<GateTrace>)> {
    if xs.is_empty() {
        return Err(GaitError::Shape("empty input sequence".into()));
    }
    let mut states = Vec::with_capacity(xs.len());
    let mut traces = Vec::with_capacity(xs.len());
    let mut state = init.clone();
    for (t, x) in xs.iter().enumerate() {
        let (next, trace) = lstm_step(params, &state, x.view(), t)?;
        states.push(next.clone());
        traces.push(trace);
        state = next;
    }
    Ok((states, traces))
}

/// Gradients flowing out of one step.
#[derive(Debug, Clone)]
pub struct StepGrads {
    /// Pre-activation gradient, `batch x 4H`, consumed by
    /// [`accumulate_weight_grads`].
    pub dpre: Array2<f64>,
    pub dx: Array2<f64>,
    pub dh_prev: Array2<f64>,
    pub dc_prev: Array2<f64>,
}

/// Reverse of one step given the total gradients on `h_t` and `c_t`.
///
/// Bias and peephole gradients are accumulated into `grads`; the dense
/// weight gradients are left to [`accumulate_weight_grads`] so a whole
/// sequence can be reduced with one matrix product.
pub fn lstm_step_backward(
    params: &LstmParams,
    trace: &GateTrace,
    dh: ArrayView2<'_, f64>,
    dc: ArrayView2<'_, f64>,
    grads: &mut LstmGrads,
) -> StepGrads {
    let h = params.hidden_dim;
    let batch = trace.h.nrows();
    debug_assert_eq!(dh.dim(), (batch, h));
    debug_assert_eq!(dc.dim(), (batch, h));

    let mut dpre = Array2::<f64>::zeros((batch, 4 * h));
    let mut dc_prev = Array2::<f64>::zeros((batch, h));

    {
        let (mut da_i, rest) = dpre.view_mut().split_at(NdAxis(1), h);
        let (mut da_f, rest) = rest.split_at(NdAxis(1), h);
        let (mut da_g, mut da_o) = rest.split_at(NdAxis(1), h);

        for b in 0..batch {
            for j in 0..h {
                let o = trace.o[[b, j]];
                let tc = trace.tanh_c[[b, j]];
                let c = trace.c[[b, j]];
                let cp = trace.c_prev[[b, j]];
                let i = trace.i[[b, j]];
                let f = trace.f[[b, j]];
                let g = trace.g[[b, j]];
                let dh_bj = dh[[b, j]];

                let a_o = dh_bj * tc * o * (1.0 - o);
                let dct =
                    dc[[b, j]] + dh_bj * o * (1.0 - tc * tc) + a_o * params.peep_o[j];
                let a_i = dct * g * i * (1.0 - i);
                let a_f = dct * cp * f * (1.0 - f);
                let a_g = dct * i * (1.0 - g * g);

                da_i[[b, j]] = a_i;
                da_f[[b, j]] = a_f;
                da_g[[b, j]] = a_g;
                da_o[[b, j]] = a_o;

                dc_prev[[b, j]] = dct * f + a_i * params.peep_i[j] + a_f * params.peep_f[j];

                grads.peep_i[j] += a_i * cp;
                grads.peep_f[j] += a_f * cp;
                grads.peep_o[j] += a_o * c;
            }
        }
    }

    grads.bias += &dpre.sum_axis(NdAxis(0));
    let dx = dpre.dot(&params.w_x);
    let dh_prev = dpre.dot(&params.w_h);
    StepGrads {
        dpre,
        dx,
        dh_prev,
        dc_prev,
    }
}

/// Adds `sum_t dpre_t^T [x_t | h_{t-1}]` into the dense weight gradients.
pub fn accumulate_weight_grads(traces: &[&GateTrace], dpres: &[&Array2<f64>], grads: &mut LstmGrads) {
    assert_eq!(traces.len(), dpres.len());
    if traces.is_empty() {
        return;
    }
    let xs: Vec<_> = traces.iter().map(|t| t.x.view()).collect();
    let hs: Vec<_> = traces.iter().map(|t| t.h_prev.view()).collect();
    let ds: Vec<_> = dpres.iter().map(|d| d.view()).collect();
    let x = ndarray::concatenate(NdAxis(0), &xs).expect("uniform input width");
    let hp = ndarray::concatenate(NdAxis(0), &hs).expect("uniform hidden width");
    let d = ndarray::concatenate(NdAxis(0), &ds).expect("uniform gate width");
    ndarray::linalg::general_mat_mul(1.0, &d.t(), &x, 1.0, &mut grads.w_x);
    ndarray::linalg::general_mat_mul(1.0, &d.t(), &hp, 1.0, &mut grads.w_h);
}

/// Result of [`lstm_backward`].
#[derive(Debug, Clone)]
pub struct LstmBackward {
    pub grads: LstmGrads,
    /// Gradient on each input `x_t`.
    pub dxs: Vec<Array2<f64>>,
    /// Gradient on the initial state.
    pub d_init: LstmState,
}

/// Backpropagation through time for a loss whose sensitivity on each `h_t` is
/// `grad_h_seq[t]`, plus `grad_final` on the last `(c, h)`.
pub fn lstm_backward(
    params: &LstmParams,
    traces: &[GateTrace],
    grad_h_seq: &[Array2<f64>],
    grad_final: &LstmState,
) -> Result<LstmBackward> {
    if traces.is_empty() {
        return Err(GaitError::Shape("no traces to backpropagate".into()));
    }
    if grad_h_seq.len() != traces.len() {
        return Err(GaitError::Shape(format!(
            "{} output gradients for {} steps",
            grad_h_seq.len(),
            traces.len()
        )));
    }
    let batch = traces[0].h.nrows();
    for tr in traces {
        if tr.x.ncols() != params.input_dim
            || tr.h.ncols() != params.hidden_dim
            || tr.h.nrows() != batch
        {
            return Err(GaitError::Shape("trace does not match parameters".into()));
        }
    }
    for g in grad_h_seq.iter().chain([&grad_final.h, &grad_final.c]) {
        if g.dim() != (batch, params.hidden_dim) {
            return Err(GaitError::Shape("gradient does not match trace shape".into()));
        }
    }

    let mut grads = LstmParams::zeros(params.input_dim, params.hidden_dim);
    let mut dxs = vec![Array2::zeros((0, 0)); traces.len()];
    let mut dpres = vec![Array2::zeros((0, 0)); traces.len()];
    let mut dh_next = grad_final.h.clone();
    let mut dc_next = grad_final.c.clone();

    for t in (0..traces.len()).rev() {
        dh_next += &grad_h_seq[t];
        let step = lstm_step_backward(params, &traces[t], dh_next.view(), dc_next.view(), &mut grads);
        dxs[t] = step.dx;
        dpres[t] = step.dpre;
        dh_next = step.dh_prev;
        dc_next = step.dc_prev;
    }

    let tr: Vec<&GateTrace> = traces.iter().collect();
    let dp: Vec<&Array2<f64>> = dpres.iter().collect();
    accumulate_weight_grads(&tr, &dp, &mut grads);

    Ok(LstmBackward {
        grads,
        dxs,
        d_init: LstmState {
            c: dc_next,
            h: dh_next,
        },
    })
}

/// Raw constructor used by model deserialization.
pub(crate) struct RawLstm {
    pub w_x: [Vec<f64>; 4],
    pub w_h: [Vec<f64>; 4],
    pub bias: [Vec<f64>; 4],
    pub peep: [Vec<f64>; 3],
}

impl LstmParams {
    pub(crate) fn from_raw(input_dim: usize, hidden_dim: usize, raw: RawLstm) -> Result<Self> {
        let mut p = LstmParams::zeros(input_dim, hidden_dim);
        let bad = |what: &str, n: usize, want: usize| {
            GaitError::Model(format!("{what}: {n} values, expected {want}"))
        };
        for (k, gate) in Gate::ALL.into_iter().enumerate() {
            let wx = &raw.w_x[k];
            if wx.len() != hidden_dim * input_dim {
                return Err(bad("input weights", wx.len(), hidden_dim * input_dim));
            }
            p.w_x_mut(gate)
                .iter_mut()
                .zip(wx)
                .for_each(|(d, s)| *d = *s);
            let wh = &raw.w_h[k];
            if wh.len() != hidden_dim * hidden_dim {
                return Err(bad("recurrent weights", wh.len(), hidden_dim * hidden_dim));
            }
            p.w_h_mut(gate)
                .iter_mut()
                .zip(wh)
                .for_each(|(d, s)| *d = *s);
            let b = &raw.bias[k];
            if b.len() != hidden_dim {
                return Err(bad("bias", b.len(), hidden_dim));
            }
            p.bias_mut(gate).iter_mut().zip(b).for_each(|(d, s)| *d = *s);
        }
        for (dst, src) in [&mut p.peep_i, &mut p.peep_f, &mut p.peep_o]
            .into_iter()
            .zip(&raw.peep)
        {
            if src.len() != hidden_dim {
                return Err(bad("peephole", src.len(), hidden_dim));
            }
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = *s);
        }
        if !p.is_finite() {
            return Err(GaitError::Model("non-finite parameter value".into()));
        }
        Ok(p)
    }
}
