//! End-to-end commands: synthesize a dataset, train the three axis models,
//! score held-out sequences, evaluate the scores and export weights.
//!
//! Every command reads a [`RunConfig`] and works on the directories named in
//! its `paths`; all outputs are deterministic given the config.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::AxisModel;
use crate::dataset::{load_manifest, segment_sequence, Label, Manifest, SequenceRef, WindowConfig};
use crate::error::{GaitError, Result};
use crate::gait_index::{FusionFile, FusionWeights, ScoredSequence};
use crate::lstm::Gate;
use crate::metrics::{confusion_at, roc, write_roc_csv, Scored};
use crate::skeleton::{AxisSegment, Axis};
use crate::synth::{generate_synthetic, SynthConfig};
use crate::training::{train_axis_model, TrainConfig, TrainReport, EVAL_BATCH};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FUSION_FILE: &str = "fusion.json";
pub const SEGMENTS_FILE: &str = "segments.csv";
pub const SEQUENCES_FILE: &str = "sequences.csv";
pub const REPORT_FILE: &str = "report.json";

pub fn model_file(axis: Axis) -> String {
    format!("model_{}.json", axis.tag())
}

pub fn loss_file(axis: Axis) -> String {
    format!("loss_{}.csv", axis.tag())
}

pub fn weights_file(axis: Axis) -> String {
    format!("weights_{}.csv", axis.tag())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset_dir: PathBuf,
    pub model_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset_dir: "data".into(),
            model_dir: "models".into(),
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    /// Also score the training subjects' sequences. Their normal sequences
    /// were seen during training, so the resulting metrics are optimistic.
    pub include_train: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Fixed decision threshold for every row; the row's EER threshold otherwise.
    pub threshold: Option<f64>,
    /// `segments.csv` produced by models trained with input dropout; adds
    /// the "weighted + dropout" rows.
    pub dropout_segments: Option<PathBuf>,
    /// Write one `fpr,tpr,threshold` CSV per report row.
    pub write_roc: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Training windows; scoring always uses non-overlapping windows of the same length.
    pub window: WindowConfig,
    pub synth: SynthConfig,
    pub score: ScoreConfig,
    pub eval: EvalConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GaitError::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| GaitError::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.window
            .validate()
            .map_err(|e| GaitError::Config(format!("window: {e}")))?;
        if self.window.length < 2 {
            return Err(GaitError::Config("window.length must be at least 2".into()));
        }
        self.synth.validate()?;
        if let Some(t) = self.eval.threshold {
            if !t.is_finite() {
                return Err(GaitError::Config("eval.threshold must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn test_window(&self) -> WindowConfig {
        WindowConfig {
            length: self.window.length,
            stride: self.window.length,
        }
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate()?;
    if cfg.synth.frames < cfg.window.length {
        return Err(GaitError::Config(format!(
            "synth.frames ({}) is shorter than the window length ({})",
            cfg.synth.frames, cfg.window.length
        )));
    }
    generate_synthetic(&cfg.synth, &cfg.paths.dataset_dir)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| GaitError::io(dir, e))
}

/// Windows and preprocesses sequences, returning one segment list per axis.
fn axis_segments(seqs: &[SequenceRef], window: &WindowConfig) -> Result<[Vec<AxisSegment>; 3]> {
    let mut out: [Vec<AxisSegment>; 3] = Default::default();
    for seq in seqs {
        let frames = seq.load()?;
        let triples = segment_sequence(&frames, window)
            .map_err(|e| GaitError::Dataset(format!("{}: {e}", seq.path.display())))?;
        for [x, y, z] in triples {
            out[0].push(x);
            out[1].push(y);
            out[2].push(z);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub reports: [TrainReport; 3],
    pub fusion: FusionFile,
    pub windows: usize,
}

/// Trains the X, Y and Z models on the normal sequences of the training
/// subjects, running up to `jobs` trainings at once. Axis `k` is seeded
/// with `train.seed + k`, so results do not depend on `jobs`.
pub fn cmd_train(cfg: &RunConfig, jobs: usize) -> Result<TrainOutcome> {
    cfg.validate()?;
    let splits = load_manifest(&cfg.paths.dataset_dir.join(MANIFEST_FILE))?;
    let segments = axis_segments(&splits.train, &cfg.window)?;
    let windows = segments[0].len();
    log::info!(
        "training on {windows} windows from {} sequences",
        splits.train.len()
    );

    let train_one = |axis: Axis| {
        let tc = TrainConfig {
            seed: cfg.train.seed.wrapping_add(axis.index() as u64),
            ..cfg.train.clone()
        };
        train_axis_model(&segments[axis.index()], &tc)
    };
    let mut results: Vec<Option<Result<(AxisModel, TrainReport)>>> = vec![None, None, None];
    for group in Axis::ALL.chunks(jobs.clamp(1, 3)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = group
                .iter()
                .map(|&axis| (axis, s.spawn(move || train_one(axis))))
                .collect();
            for (axis, h) in handles {
                let r = h
                    .join()
                    .unwrap_or_else(|_| Err(GaitError::Training(format!("{axis} training panicked"))));
                results[axis.index()] = Some(r);
            }
        });
    }

    create_dir(&cfg.paths.model_dir)?;
    let mut models = Vec::with_capacity(3);
    let mut reports = Vec::with_capacity(3);
    for (axis, r) in Axis::ALL.into_iter().zip(results) {
        let (model, report) = r.expect("every axis was trained")?;
        log::info!(
            "{axis} model: train mse {:.6}, {:.1}s",
            report.train_mse,
            report.wall_time_secs
        );
        model.save(&cfg.paths.model_dir.join(model_file(axis)))?;
        report.write_loss_csv(&cfg.paths.model_dir.join(loss_file(axis)))?;
        models.push(model);
        reports.push(report);
    }
    let fusion = FusionFile::from_errors(models[0].train_mse, models[1].train_mse, models[2].train_mse)?;
    fusion.save(&cfg.paths.model_dir.join(FUSION_FILE))?;
    let reports: [TrainReport; 3] = reports.try_into().expect("three reports");
    Ok(TrainOutcome {
        reports,
        fusion,
        windows,
    })
}

/// The three trained models and their fusion weights.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub models: [AxisModel; 3],
    pub fusion: FusionFile,
}

impl ModelSet {
    pub fn load(dir: &Path) -> Result<Self> {
        let mut models = Vec::with_capacity(3);
        for axis in Axis::ALL {
            let path = dir.join(model_file(axis));
            if !path.is_file() {
                return Err(GaitError::Pipeline(format!(
                    "missing model file {}; run `train` first",
                    path.display()
                )));
            }
            let m = AxisModel::load(&path)?;
            if m.axis != axis {
                return Err(GaitError::Pipeline(format!(
                    "{} holds a {} model",
                    path.display(),
                    m.axis
                )));
            }
            models.push(m);
        }
        let fusion = FusionFile::load(&dir.join(FUSION_FILE))?;
        Ok(ModelSet {
            models: models.try_into().expect("three models"),
            fusion,
        })
    }

    pub fn weights(&self) -> FusionWeights {
        self.fusion.weights()
    }

    /// Scores one sequence with non-overlapping windows of length `length`.
    pub fn score_sequence(&self, seq: &SequenceRef, length: usize) -> Result<ScoredSequence> {
        let window = WindowConfig::new(length, length)?;
        let segs = axis_segments(std::slice::from_ref(seq), &window)?;
        let mut per_axis = Vec::with_capacity(3);
        for (model, segs) in self.models.iter().zip(&segs) {
            per_axis.push(model.score_segments(segs, EVAL_BATCH)?);
        }
        let mse: Vec<[f64; 3]> = (0..segs[0].len())
            .map(|k| [per_axis[0][k], per_axis[1][k], per_axis[2][k]])
            .collect();
        ScoredSequence::new(seq.id.clone(), seq.label.is_abnormal(), mse, &self.weights())
    }
}

/// One row of `segments.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub sequence_id: String,
    pub label: Label,
    pub segment_idx: usize,
    pub mse_x: f64,
    pub mse_y: f64,
    pub mse_z: f64,
    pub fused_index: f64,
}

impl SegmentRow {
    pub fn nonweighted_index(&self) -> f64 {
        self.mse_x + self.mse_y + self.mse_z
    }
}

/// One row of `sequences.csv`: per-sequence means of the segment columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRow {
    pub sequence_id: String,
    pub subject: String,
    pub label: Label,
    pub segments: usize,
    pub mse_x: f64,
    pub mse_y: f64,
    pub mse_z: f64,
    pub nonweighted_index: f64,
    pub weighted_index: f64,
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| GaitError::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| GaitError::csv(path, e))?;
    }
    w.flush().map_err(|e| GaitError::io(path, e))
}

pub fn read_segments_csv(path: &Path) -> Result<Vec<SegmentRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| GaitError::csv(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<SegmentRow>, _>>()
        .map_err(|e| GaitError::csv(path, e))
}

/// Scores the test split (plus the training subjects when
/// `score.include_train` is set) and writes `segments.csv` and `sequences.csv`.
pub fn cmd_score(cfg: &RunConfig) -> Result<Vec<ScoredSequence>> {
    cfg.validate()?;
    let models = ModelSet::load(&cfg.paths.model_dir)?;
    let splits = load_manifest(&cfg.paths.dataset_dir.join(MANIFEST_FILE))?;
    let mut seqs = splits.test;
    if cfg.score.include_train {
        seqs.extend(splits.train);
        seqs.extend(splits.train_abnormal);
    }
    if seqs.is_empty() {
        return Err(GaitError::Pipeline("no sequences to score".into()));
    }

    let mut scored = Vec::with_capacity(seqs.len());
    let mut seg_rows = Vec::new();
    let mut seq_rows = Vec::with_capacity(seqs.len());
    for seq in &seqs {
        let s = models.score_sequence(seq, cfg.window.length)?;
        let n = s.segment_mse.len();
        let mean = |f: &dyn Fn(usize) -> f64| (0..n).map(f).sum::<f64>() / n as f64;
        seq_rows.push(SequenceRow {
            sequence_id: s.id.clone(),
            subject: seq.subject.clone(),
            label: seq.label,
            segments: n,
            mse_x: mean(&|k| s.segment_mse[k][0]),
            mse_y: mean(&|k| s.segment_mse[k][1]),
            mse_z: mean(&|k| s.segment_mse[k][2]),
            nonweighted_index: mean(&|k| s.segment_mse[k].iter().sum()),
            weighted_index: s.index,
        });
        for (k, (m, idx)) in s.segment_mse.iter().zip(&s.segment_index).enumerate() {
            seg_rows.push(SegmentRow {
                sequence_id: s.id.clone(),
                label: seq.label,
                segment_idx: k,
                mse_x: m[0],
                mse_y: m[1],
                mse_z: m[2],
                fused_index: *idx,
            });
        }
        scored.push(s);
    }

    create_dir(&cfg.paths.output_dir)?;
    write_csv_rows(&cfg.paths.output_dir.join(SEGMENTS_FILE), &seg_rows)?;
    write_csv_rows(&cfg.paths.output_dir.join(SEQUENCES_FILE), &seq_rows)?;
    Ok(scored)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Segment,
    Sequence,
}

/// One line of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub granularity: Granularity,
    pub index: String,
    pub auc: f64,
    pub eer: f64,
    pub eer_threshold: f64,
    /// Threshold the confusion counts below were taken at.
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub orientation: &'static str,
    pub threshold_rule: &'static str,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, granularity: Granularity, index: &str) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.granularity == granularity && r.index == index)
    }
}

pub const ORIENTATION: &str =
    "higher index = more abnormal; a segment or sequence is called abnormal when its index >= threshold";

/// Row names, in report order.
pub const INDEX_X: &str = "X";
pub const INDEX_Y: &str = "Y";
pub const INDEX_Z: &str = "Z";
pub const INDEX_NONWEIGHTED: &str = "non-weighted sum";
pub const INDEX_WEIGHTED: &str = "weighted sum";
pub const INDEX_WEIGHTED_DROPOUT: &str = "weighted sum + dropout";

/// Per-sequence means of `f` over each sequence's segments, in order of first appearance.
fn per_sequence(rows: &[SegmentRow], f: impl Fn(&SegmentRow) -> f64) -> Result<Vec<Scored>> {
    let mut order: Vec<&str> = Vec::new();
    let mut acc: std::collections::HashMap<&str, (f64, usize, Label)> = Default::default();
    for r in rows {
        let e = acc.entry(&r.sequence_id).or_insert_with(|| {
            order.push(&r.sequence_id);
            (0.0, 0, r.label)
        });
        if e.2 != r.label {
            return Err(GaitError::Pipeline(format!(
                "sequence {} has segments with different labels",
                r.sequence_id
            )));
        }
        e.0 += f(r);
        e.1 += 1;
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let (sum, n, label) = acc[id];
            Scored::new(sum / n as f64, label.is_abnormal())
        })
        .collect())
}

fn per_segment(rows: &[SegmentRow], f: impl Fn(&SegmentRow) -> f64) -> Vec<Scored> {
    rows.iter()
        .map(|r| Scored::new(f(r), r.label.is_abnormal()))
        .collect()
}

fn eval_row(
    granularity: Granularity,
    index: &str,
    scores: &[Scored],
    threshold: Option<f64>,
) -> Result<(EvalRow, Vec<crate::metrics::RocPoint>)> {
    let r = roc(scores)?;
    let t = threshold.unwrap_or(r.eer_threshold);
    let c = confusion_at(scores, t)?;
    Ok((
        EvalRow {
            granularity,
            index: index.to_string(),
            auc: r.auc,
            eer: r.eer,
            eer_threshold: r.eer_threshold,
            threshold: t,
            sensitivity: c.sensitivity,
            specificity: c.specificity,
            precision: c.precision,
            accuracy: c.accuracy,
            f1: c.f1,
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            n_pos: r.n_pos,
            n_neg: r.n_neg,
        },
        r.points,
    ))
}

/// Metrics table over scored segments: per-segment rows for each axis, the
/// non-weighted and the weighted sum, then per-sequence rows for the two
/// sums. `dropout` adds the weighted sum of a dropout-trained model set at
/// both granularities.
pub fn evaluate(
    rows: &[SegmentRow],
    dropout: Option<&[SegmentRow]>,
    threshold: Option<f64>,
) -> Result<(EvalReport, Vec<Vec<crate::metrics::RocPoint>>)> {
    if rows.is_empty() {
        return Err(GaitError::Pipeline("no scored segments to evaluate".into()));
    }
    if dropout.is_some_and(|d| d.is_empty()) {
        return Err(GaitError::Pipeline("no dropout-model segments to evaluate".into()));
    }
    use Granularity::{Segment, Sequence};
    let mut table: Vec<(Granularity, &str, Vec<Scored>)> = vec![
        (Segment, INDEX_X, per_segment(rows, |r| r.mse_x)),
        (Segment, INDEX_Y, per_segment(rows, |r| r.mse_y)),
        (Segment, INDEX_Z, per_segment(rows, |r| r.mse_z)),
        (Segment, INDEX_NONWEIGHTED, per_segment(rows, SegmentRow::nonweighted_index)),
        (Segment, INDEX_WEIGHTED, per_segment(rows, |r| r.fused_index)),
    ];
    if let Some(d) = dropout {
        table.push((Segment, INDEX_WEIGHTED_DROPOUT, per_segment(d, |r| r.fused_index)));
    }
    table.push((Sequence, INDEX_NONWEIGHTED, per_sequence(rows, SegmentRow::nonweighted_index)?));
    table.push((Sequence, INDEX_WEIGHTED, per_sequence(rows, |r| r.fused_index)?));
    if let Some(d) = dropout {
        table.push((Sequence, INDEX_WEIGHTED_DROPOUT, per_sequence(d, |r| r.fused_index)?));
    }

    let mut out = Vec::with_capacity(table.len());
    let mut curves = Vec::with_capacity(table.len());
    for (g, name, scores) in &table {
        let (row, points) = eval_row(*g, name, scores, threshold)?;
        out.push(row);
        curves.push(points);
    }
    let report = EvalReport {
        orientation: ORIENTATION,
        threshold_rule: if threshold.is_some() { "fixed" } else { "eer" },
        rows: out,
    };
    Ok((report, curves))
}

fn slug(row: &EvalRow) -> String {
    let g = match row.granularity {
        Granularity::Segment => "segment",
        Granularity::Sequence => "sequence",
    };
    let name: Vec<String> = row
        .index
        .to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect();
    format!("roc_{g}_{}.csv", name.join("_"))
}

/// Evaluates `segments.csv` in the output directory and writes `report.json`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let rows = read_segments_csv(&cfg.paths.output_dir.join(SEGMENTS_FILE))?;
    let dropout = match &cfg.eval.dropout_segments {
        Some(p) => Some(read_segments_csv(p)?),
        None => None,
    };
    let (report, curves) = evaluate(&rows, dropout.as_deref(), cfg.eval.threshold)?;

    let path = cfg.paths.output_dir.join(REPORT_FILE);
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| GaitError::json(&path, e))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| GaitError::io(&path, e))?;
    if cfg.eval.write_roc {
        for (row, points) in report.rows.iter().zip(&curves) {
            write_roc_csv(points, &cfg.paths.output_dir.join(slug(row)))?;
        }
    }
    Ok(report)
}

/// Encoder input weights of one model: a row per (gate, hidden unit)
/// holding that unit's weights on the 17 joint inputs.
pub fn write_weights_csv(model: &AxisModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| GaitError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| GaitError::io(path, e);
    let d = model.input_dim();
    let header: Vec<String> = (0..d).map(|j| format!("w{j}")).collect();
    writeln!(w, "gate,unit,{}", header.join(",")).map_err(io)?;
    for gate in Gate::ALL {
        for (unit, row) in model.net.encoder.w_x(gate).rows().into_iter().enumerate() {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{unit},{}", gate_tag(gate), vals.join(",")).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn gate_tag(g: Gate) -> &'static str {
    match g {
        Gate::Input => "i",
        Gate::Forget => "f",
        Gate::Cell => "c",
        Gate::Output => "o",
    }
}

/// One parsed row of an exported weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub gate: Gate,
    pub unit: usize,
    pub weights: Vec<f64>,
}

pub fn read_weights_csv(path: &Path) -> Result<Vec<WeightRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| GaitError::csv(path, e))?;
    let bad = |line: usize, what: &str| GaitError::Pipeline(format!("{}: row {line}: {what}", path.display()));
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| GaitError::csv(path, e))?;
        let gate = match rec.get(0) {
            Some("i") => Gate::Input,
            Some("f") => Gate::Forget,
            Some("c") => Gate::Cell,
            Some("o") => Gate::Output,
            _ => return Err(bad(k, "unknown gate")),
        };
        let unit = rec
            .get(1)
            .and_then(|u| u.parse().ok())
            .ok_or_else(|| bad(k, "bad unit"))?;
        let weights = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(k, "bad weight"))?;
        out.push(WeightRow { gate, unit, weights });
    }
    Ok(out)
}

/// Writes `weights_{x,y,z}.csv` for the trained models into the output directory.
pub fn cmd_export_weights(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let models = ModelSet::load(&cfg.paths.model_dir)?;
    create_dir(&cfg.paths.output_dir)?;
    let mut written = Vec::with_capacity(3);
    for m in &models.models {
        let path = cfg.paths.output_dir.join(weights_file(m.axis));
        write_weights_csv(m, &path)?;
        written.push(path);
    }
    Ok(written)
}
