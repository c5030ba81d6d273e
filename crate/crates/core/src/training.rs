//! Mini-batch training of one per-axis autoencoder by backpropagation
//! through time, with optional inverted dropout on the encoder input.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{
    backward_batch, batch_loss, forward_batch, stack_time_major, Autoencoder, AxisModel,
    DecoderFeed, DEFAULT_HIDDEN,
};
use crate::error::{GaitError, Result};
use crate::optim::{clip_global_norm, Adam};
use crate::skeleton::AxisSegment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Retention probability of the encoder-input dropout; 1.0 disables it.
    pub dropout_keep: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: Option<f64>,
    pub teacher_forcing: bool,
    pub hidden_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 32,
            dropout_keep: 1.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: None,
            teacher_forcing: false,
            hidden_dim: DEFAULT_HIDDEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GaitError::Config(format!("train.{m}")));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return bad("dropout_keep must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must be in [0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam_eps must be positive");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad("grad_clip must be positive");
            }
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be positive");
        }
        Ok(())
    }

    fn feed(&self) -> DecoderFeed {
        if self.teacher_forcing {
            DecoderFeed::TeacherForced
        } else {
            DecoderFeed::SelfConditioned
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean training loss of each epoch, with dropout active when enabled.
    pub epoch_losses: Vec<f64>,
    pub train_mse: f64,
    pub wall_time_secs: f64,
    pub config: TrainConfig,
}

impl TrainReport {
    /// `epoch,mean_mse` rows, epochs counted from 1.
    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| GaitError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| GaitError::io(path, e);
        writeln!(w, "epoch,mean_mse").map_err(io)?;
        for (k, loss) in self.epoch_losses.iter().enumerate() {
            writeln!(w, "{},{}", k + 1, loss).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Zeroes each component with probability `1 - keep` and scales survivors by `1 / keep`.
pub fn apply_input_dropout<R: Rng + ?Sized>(
    x: ArrayView1<'_, f64>,
    keep: f64,
    rng: &mut R,
) -> Vec<f64> {
    if keep >= 1.0 {
        return x.to_vec();
    }
    let scale = 1.0 / keep;
    x.iter()
        .map(|&v| if rng.random::<f64>() < keep { v * scale } else { 0.0 })
        .collect()
}

fn drop_batch<R: Rng + ?Sized>(xs: &[Array2<f64>], keep: f64, rng: &mut R) -> Vec<Array2<f64>> {
    xs.iter()
        .map(|x| {
            let mut out = x.clone();
            for mut row in out.rows_mut() {
                let dropped = apply_input_dropout(row.view(), keep, rng);
                row.iter_mut().zip(dropped).for_each(|(d, s)| *d = s);
            }
            out
        })
        .collect()
}

fn check_segments(segments: &[AxisSegment]) -> Result<()> {
    let first = segments
        .first()
        .ok_or_else(|| GaitError::Training("empty training set".into()))?;
    if first.len() < 2 {
        return Err(GaitError::Training(
            "training segments need at least 2 frames".into(),
        ));
    }
    for (k, s) in segments.iter().enumerate() {
        if s.axis() != first.axis() {
            return Err(GaitError::Training(format!(
                "segment {k} is {} but the set is {}",
                s.axis(),
                first.axis()
            )));
        }
        if s.values().dim() != first.values().dim() {
            return Err(GaitError::Training(format!(
                "segment {k} has shape {:?}, expected {:?}",
                s.values().dim(),
                first.values().dim()
            )));
        }
    }
    Ok(())
}

/// Evaluation batch size used for the post-training MSE and for scoring.
pub const EVAL_BATCH: usize = 64;

pub fn train_axis_model(
    segments: &[AxisSegment],
    cfg: &TrainConfig,
) -> Result<(AxisModel, TrainReport)> {
    cfg.validate()?;
    check_segments(segments)?;
    let started = Instant::now();
    let axis = segments[0].axis();
    let width = segments[0].width();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Autoencoder::init(width, cfg.hidden_dim, &mut rng);
    let mut adam = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let feed = cfg.feed();

    let mut order: Vec<usize> = (0..segments.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let views: Vec<&Array2<f64>> = batch.iter().map(|&i| segments[i].values()).collect();
            let targets = stack_time_major(&views);
            let inputs = if cfg.dropout_keep < 1.0 {
                drop_batch(&targets, cfg.dropout_keep, &mut rng)
            } else {
                targets.clone()
            };

            let trace = forward_batch(&net, &inputs, &targets, feed)
                .map_err(|_| GaitError::Diverged { epoch, batch: b })?;
            let loss = batch_loss(&trace, &targets);
            if !loss.is_finite() {
                return Err(GaitError::Diverged { epoch, batch: b });
            }
            total += loss * batch.len() as f64;

            let mut grads = backward_batch(&net, &trace, &targets, feed)?;
            if let Some(max_norm) = cfg.grad_clip {
                clip_global_norm(grads.tensors_mut(), max_norm);
            }
            adam.step(net.tensors_mut(), grads.tensors());
        }
        let mean = total / segments.len() as f64;
        log::debug!("{axis} epoch {}: mean mse {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }

    let mut model = AxisModel::new(axis, net);
    let scores = model.score_segments(segments, EVAL_BATCH)?;
    model.train_mse = scores.iter().sum::<f64>() / scores.len() as f64;
    if !model.train_mse.is_finite() {
        return Err(GaitError::Training("non-finite training MSE".into()));
    }

    let report = TrainReport {
        epoch_losses,
        train_mse: model.train_mse,
        wall_time_secs: started.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    Ok((model, report))
}
