//! Sequence autoencoder: an encoder LSTM compresses a window into its final
//! `(c, h)`, a second LSTM starts from that state and emits the window back
//! in reverse order through an affine output projection.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis as NdAxis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::lstm::{
    accumulate_weight_grads, init_scale, lstm_backward, lstm_step, lstm_step_backward, Gate,
    GateTrace, LstmParams, LstmState, RawLstm,
};
use crate::skeleton::{Axis, AxisSegment, SELECTED_JOINTS};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: usize = 256;

/// Trainable weights of the encoder/decoder pair plus output projection.
/// Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub encoder: LstmParams,
    pub decoder: LstmParams,
    /// `input_dim x hidden_dim`.
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

impl Autoencoder {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Autoencoder {
            encoder: LstmParams::zeros(input_dim, hidden_dim),
            decoder: LstmParams::zeros(input_dim, hidden_dim),
            out_w: Array2::zeros((input_dim, hidden_dim)),
            out_b: Array1::zeros(input_dim),
        }
    }

    /// Encoder, decoder, then projection; the projection shares the LSTM
    /// weight range and starts with a zero bias.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let encoder = LstmParams::init(input_dim, hidden_dim, rng);
        let decoder = LstmParams::init(input_dim, hidden_dim, rng);
        let s = init_scale(hidden_dim);
        let out_w = Array2::from_shape_fn((input_dim, hidden_dim), |_| rng.random_range(-s..s));
        Autoencoder {
            encoder,
            decoder,
            out_w,
            out_b: Array1::zeros(input_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.hidden_dim()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::with_capacity(14);
        v.extend(self.encoder.tensors());
        v.extend(self.decoder.tensors());
        v.push(self.out_w.as_slice().expect("standard layout"));
        v.push(self.out_b.as_slice().expect("standard layout"));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::with_capacity(14);
        v.extend(self.encoder.tensors_mut());
        v.extend(self.decoder.tensors_mut());
        v.push(self.out_w.as_slice_mut().expect("standard layout"));
        v.push(self.out_b.as_slice_mut().expect("standard layout"));
        v
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn project(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut y = h.dot(&self.out_w.t());
        y += &self.out_b;
        y
    }
}

/// How the decoder is fed after its first (zero) input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecoderFeed {
    /// Each step consumes the frame emitted by the previous step.
    #[default]
    SelfConditioned,
    /// Each step consumes the ground-truth frame the previous step should have emitted.
    TeacherForced,
}

/// Forward record of a batch through the autoencoder, used for backprop.
#[derive(Debug, Clone)]
pub struct AutoencoderTrace {
    pub encoder: Vec<GateTrace>,
    pub decoder: Vec<GateTrace>,
    /// Emitted frames in decoder order: `emitted[k]` reconstructs time `T-1-k`.
    pub emitted: Vec<Array2<f64>>,
}

impl AutoencoderTrace {
    /// Reconstruction of time step `t` (forward order).
    pub fn frame(&self, t: usize) -> &Array2<f64> {
        let n = self.emitted.len();
        &self.emitted[n - 1 - t]
    }
}

/// Runs the full autoencoder on a batch.
///
/// `enc_inputs[t]` is what the encoder sees at time `t` (possibly after
/// dropout); `targets[t]` are the clean frames, only read under teacher forcing.
pub fn forward_batch(
    net: &Autoencoder,
    enc_inputs: &[Array2<f64>],
    targets: &[Array2<f64>],
    feed: DecoderFeed,
) -> Result<AutoencoderTrace> {
    let steps = enc_inputs.len();
    if steps == 0 {
        return Err(GaitError::Model("empty segment".into()));
    }
    let batch = enc_inputs[0].nrows();
    let hidden = net.hidden_dim();

    let mut encoder = Vec::with_capacity(steps);
    let mut state = LstmState::zeros(batch, hidden);
    for (t, x) in enc_inputs.iter().enumerate() {
        let (next, tr) = lstm_step(&net.encoder, &state, x.view(), t)?;
        encoder.push(tr);
        state = next;
    }

    let (decoder, emitted) = run_decoder(net, state, steps, targets, feed)?;
    Ok(AutoencoderTrace {
        encoder,
        decoder,
        emitted,
    })
}

fn run_decoder(
    net: &Autoencoder,
    latent: LstmState,
    steps: usize,
    targets: &[Array2<f64>],
    feed: DecoderFeed,
) -> Result<(Vec<GateTrace>, Vec<Array2<f64>>)> {
    let batch = latent.batch();
    let mut traces = Vec::with_capacity(steps);
    let mut emitted: Vec<Array2<f64>> = Vec::with_capacity(steps);
    let mut state = latent;
    let zero = Array2::zeros((batch, net.input_dim()));
    for k in 0..steps {
        let input: ArrayView2<'_, f64> = match (k, feed) {
            (0, _) => zero.view(),
            (_, DecoderFeed::SelfConditioned) => emitted[k - 1].view(),
            (_, DecoderFeed::TeacherForced) => targets[steps - k].view(),
        };
        let (next, tr) = lstm_step(&net.decoder, &state, input, k)?;
        let y = net.project(&next.h);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(GaitError::NonFinite {
                gate: "projection",
                step: k,
            });
        }
        emitted.push(y);
        traces.push(tr);
        state = next;
    }
    Ok((traces, emitted))
}

/// Mean over rows of the per-row squared error, i.e. the batch-mean MSE.
pub fn batch_loss(trace: &AutoencoderTrace, targets: &[Array2<f64>]) -> f64 {
    per_row_mse(trace, targets).iter().sum::<f64>() / targets[0].nrows() as f64
}

/// Per-sequence MSE over all `T x D` entries.
pub fn per_row_mse(trace: &AutoencoderTrace, targets: &[Array2<f64>]) -> Vec<f64> {
    let steps = targets.len();
    let (batch, width) = targets[0].dim();
    let mut sums = vec![0.0; batch];
    for (t, x) in targets.iter().enumerate() {
        let y = trace.frame(t);
        for b in 0..batch {
            for j in 0..width {
                let d = x[[b, j]] - y[[b, j]];
                sums[b] += d * d;
            }
        }
    }
    let n = (steps * width) as f64;
    sums.into_iter().map(|s| s / n).collect()
}

/// Gradient of [`batch_loss`] with respect to every weight.
pub fn backward_batch(
    net: &Autoencoder,
    trace: &AutoencoderTrace,
    targets: &[Array2<f64>],
    feed: DecoderFeed,
) -> Result<Autoencoder> {
    let steps = targets.len();
    let (batch, width) = targets[0].dim();
    let hidden = net.hidden_dim();
    let scale = 2.0 / (batch * steps * width) as f64;

    let mut grads = Autoencoder::zeros(width, hidden);
    let mut dh = Array2::<f64>::zeros((batch, hidden));
    let mut dc = Array2::<f64>::zeros((batch, hidden));
    let mut d_next_input: Option<Array2<f64>> = None;
    let mut dpres = vec![Array2::zeros((0, 0)); steps];

    for k in (0..steps).rev() {
        let mut dy = (&trace.emitted[k] - &targets[steps - 1 - k]) * scale;
        if let Some(du) = d_next_input.take() {
            dy += &du;
        }
        let h_k = &trace.decoder[k].h;
        grads.out_w += &dy.t().dot(h_k);
        grads.out_b += &dy.sum_axis(NdAxis(0));
        dh += &dy.dot(&net.out_w);

        let step = lstm_step_backward(
            &net.decoder,
            &trace.decoder[k],
            dh.view(),
            dc.view(),
            &mut grads.decoder,
        );
        if feed == DecoderFeed::SelfConditioned && k > 0 {
            d_next_input = Some(step.dx);
        }
        dpres[k] = step.dpre;
        dh = step.dh_prev;
        dc = step.dc_prev;
    }
    let tr: Vec<&GateTrace> = trace.decoder.iter().collect();
    let dp: Vec<&Array2<f64>> = dpres.iter().collect();
    accumulate_weight_grads(&tr, &dp, &mut grads.decoder);

    let no_output_grad = vec![Array2::zeros((batch, hidden)); steps];
    let enc = lstm_backward(
        &net.encoder,
        &trace.encoder,
        &no_output_grad,
        &LstmState { c: dc, h: dh },
    )?;
    grads.encoder = enc.grads;
    Ok(grads)
}

/// Splits `[T x D]` segments into `T` batch matrices of shape `B x D`.
pub fn stack_time_major(segments: &[&Array2<f64>]) -> Vec<Array2<f64>> {
    let (steps, width) = segments[0].dim();
    (0..steps)
        .map(|t| Array2::from_shape_fn((segments.len(), width), |(b, j)| segments[b][[t, j]]))
        .collect()
}

/// One trained per-axis model.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisModel {
    pub axis: Axis,
    pub net: Autoencoder,
    /// Reconstruction MSE over the training set, without dropout.
    pub train_mse: f64,
}

/// Reconstructed frames (forward time order) and their MSE against the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub ys: Array2<f64>,
    pub mse: f64,
}

impl AxisModel {
    pub fn new(axis: Axis, net: Autoencoder) -> Self {
        AxisModel {
            axis,
            net,
            train_mse: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.net.hidden_dim()
    }

    fn check_segment(&self, seg: &AxisSegment) -> Result<()> {
        if seg.axis() != self.axis {
            return Err(GaitError::Model(format!(
                "{} segment given to {} model",
                seg.axis(),
                self.axis
            )));
        }
        if seg.width() != self.input_dim() {
            return Err(GaitError::Model(format!(
                "segment width {} != model input_dim {}",
                seg.width(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Final encoder state after reading the segment from a zero state.
    pub fn encode(&self, seg: &AxisSegment) -> Result<LstmState> {
        self.check_segment(seg)?;
        let mut state = LstmState::zeros(1, self.hidden_dim());
        for (t, row) in seg.values().axis_iter(NdAxis(0)).enumerate() {
            let x = row.insert_axis(NdAxis(0));
            state = lstm_step(&self.net.encoder, &state, x, t)?.0;
        }
        Ok(state)
    }

    /// Emits `steps` frames from `latent`, returned in forward time order.
    pub fn decode(&self, latent: &LstmState, steps: usize) -> Result<Array2<f64>> {
        if steps == 0 {
            return Err(GaitError::Model("decode length must be at least 1".into()));
        }
        let (_, emitted) = run_decoder(
            &self.net,
            latent.clone(),
            steps,
            &[],
            DecoderFeed::SelfConditioned,
        )?;
        let width = self.input_dim();
        Ok(Array2::from_shape_fn((steps, width), |(t, j)| {
            emitted[steps - 1 - t][[0, j]]
        }))
    }

    pub fn reconstruct(&self, seg: &AxisSegment) -> Result<Reconstruction> {
        let latent = self.encode(seg)?;
        let ys = self.decode(&latent, seg.len())?;
        let mse = mse(seg.values(), &ys);
        Ok(Reconstruction { ys, mse })
    }

    /// Reconstruction MSE of many equal-length segments, evaluated in
    /// fixed-size batches.
    pub fn score_segments(&self, segs: &[AxisSegment], batch_size: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(segs.len());
        for chunk in segs.chunks(batch_size.max(1)) {
            for s in chunk {
                self.check_segment(s)?;
                if s.len() != chunk[0].len() {
                    return Err(GaitError::Model("segments differ in length".into()));
                }
            }
            let views: Vec<&Array2<f64>> = chunk.iter().map(|s| s.values()).collect();
            let xs = stack_time_major(&views);
            let trace = forward_batch(&self.net, &xs, &xs, DecoderFeed::SelfConditioned)?;
            out.extend(per_row_mse(&trace, &xs));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| GaitError::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &ModelFile::from(self)).map_err(|e| GaitError::json(path, e))?;
        w.write_all(b"\n").map_err(|e| GaitError::io(path, e))?;
        w.flush().map_err(|e| GaitError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| GaitError::io(path, e))?;
        let raw: ModelFile =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| GaitError::json(path, e))?;
        raw.into_model()
            .map_err(|e| GaitError::Model(format!("{}: {e}", path.display())))
    }
}

/// Mean of squared differences over all entries.
pub fn mse(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    assert_eq!(x.dim(), y.dim());
    let n = x.len() as f64;
    x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LstmFile {
    w_ix: Vec<f64>,
    w_fx: Vec<f64>,
    w_cx: Vec<f64>,
    w_ox: Vec<f64>,
    w_ih: Vec<f64>,
    w_fh: Vec<f64>,
    w_ch: Vec<f64>,
    w_oh: Vec<f64>,
    p_i: Vec<f64>,
    p_f: Vec<f64>,
    p_o: Vec<f64>,
    b_i: Vec<f64>,
    b_f: Vec<f64>,
    b_c: Vec<f64>,
    b_o: Vec<f64>,
}

impl From<&LstmParams> for LstmFile {
    fn from(p: &LstmParams) -> Self {
        let wx = |g| p.w_x(g).iter().copied().collect();
        let wh = |g| p.w_h(g).iter().copied().collect();
        let b = |g| p.bias(g).to_vec();
        let peep = |g| p.peephole(g).expect("gate has a peephole").to_vec();
        LstmFile {
            w_ix: wx(Gate::Input),
            w_fx: wx(Gate::Forget),
            w_cx: wx(Gate::Cell),
            w_ox: wx(Gate::Output),
            w_ih: wh(Gate::Input),
            w_fh: wh(Gate::Forget),
            w_ch: wh(Gate::Cell),
            w_oh: wh(Gate::Output),
            p_i: peep(Gate::Input),
            p_f: peep(Gate::Forget),
            p_o: peep(Gate::Output),
            b_i: b(Gate::Input),
            b_f: b(Gate::Forget),
            b_c: b(Gate::Cell),
            b_o: b(Gate::Output),
        }
    }
}

impl LstmFile {
    fn into_params(self, input_dim: usize, hidden_dim: usize) -> Result<LstmParams> {
        LstmParams::from_raw(
            input_dim,
            hidden_dim,
            RawLstm {
                w_x: [self.w_ix, self.w_fx, self.w_cx, self.w_ox],
                w_h: [self.w_ih, self.w_fh, self.w_ch, self.w_oh],
                bias: [self.b_i, self.b_f, self.b_c, self.b_o],
                peep: [self.p_i, self.p_f, self.p_o],
            },
        )
    }
}

/// On-disk model layout; every tensor is a flat row-major array.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    axis: Axis,
    input_dim: usize,
    hidden_dim: usize,
    train_mse: f64,
    encoder: LstmFile,
    decoder: LstmFile,
    out_proj_weight: Vec<f64>,
    out_proj_bias: Vec<f64>,
}

impl From<&AxisModel> for ModelFile {
    fn from(m: &AxisModel) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            axis: m.axis,
            input_dim: m.input_dim(),
            hidden_dim: m.hidden_dim(),
            train_mse: m.train_mse,
            encoder: (&m.net.encoder).into(),
            decoder: (&m.net.decoder).into(),
            out_proj_weight: m.net.out_w.iter().copied().collect(),
            out_proj_bias: m.net.out_b.to_vec(),
        }
    }
}

impl ModelFile {
    fn into_model(self) -> Result<AxisModel> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(GaitError::Model(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        let (d, h) = (self.input_dim, self.hidden_dim);
        if d == 0 || h == 0 {
            return Err(GaitError::Model("dimensions must be positive".into()));
        }
        if !(self.train_mse.is_finite() && self.train_mse >= 0.0) {
            return Err(GaitError::Model("train_mse must be finite and >= 0".into()));
        }
        let encoder = self.encoder.into_params(d, h)?;
        let decoder = self.decoder.into_params(d, h)?;
        let out_w = Array2::from_shape_vec((d, h), self.out_proj_weight)
            .map_err(|e| GaitError::Model(format!("out_proj_weight: {e}")))?;
        if self.out_proj_bias.len() != d {
            return Err(GaitError::Model("out_proj_bias length".into()));
        }
        let out_b = Array1::from(self.out_proj_bias);
        if out_w.iter().chain(out_b.iter()).any(|v| !v.is_finite()) {
            return Err(GaitError::Model("non-finite projection value".into()));
        }
        Ok(AxisModel {
            axis: self.axis,
            net: Autoencoder {
                encoder,
                decoder,
                out_w,
                out_b,
            },
            train_mse: self.train_mse,
        })
    }
}

/// Default geometry: 17 joints in, 256 hidden units.
pub fn default_model<R: Rng + ?Sized>(axis: Axis, rng: &mut R) -> AxisModel {
    AxisModel::new(axis, Autoencoder::init(SELECTED_JOINTS, DEFAULT_HIDDEN, rng))
}
