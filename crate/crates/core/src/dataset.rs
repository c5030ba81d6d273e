//! Windowing of frame sequences and the on-disk dataset layout: one CSV per
//! gait sequence plus a JSON manifest assigning subjects to splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::skeleton::{preprocess_window, select_joints, AxisSegment, Skeleton17, Skeleton25, RAW_JOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    /// Frames per segment.
    pub length: usize,
    /// Offset between consecutive segment starts.
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig::TRAIN
    }
}

impl WindowConfig {
    /// Overlapping split used for training: 12 frames, 6 shared.
    pub const TRAIN: WindowConfig = WindowConfig {
        length: 12,
        stride: 6,
    };
    /// Non-overlapping split used for scoring.
    pub const TEST: WindowConfig = WindowConfig {
        length: 12,
        stride: 12,
    };

    pub fn new(length: usize, stride: usize) -> Result<Self> {
        let cfg = WindowConfig { length, stride };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || self.stride == 0 || self.stride > self.length {
            return Err(GaitError::Dataset(format!(
                "window needs 1 <= stride <= length, got length {} stride {}",
                self.length, self.stride
            )));
        }
        Ok(())
    }

    /// `floor((n - length) / stride) + 1`, or 0 when the sequence is too short.
    pub fn count(&self, n: usize) -> usize {
        if n < self.length {
            0
        } else {
            (n - self.length) / self.stride + 1
        }
    }

    pub fn offsets(&self, n: usize) -> impl Iterator<Item = usize> {
        let stride = self.stride;
        (0..self.count(n)).map(move |k| k * stride)
    }
}

/// Cuts `frames` into windows starting at `0, stride, 2*stride, ...`.
/// Trailing frames that do not fill a window are dropped.
pub fn window_sequence<'a>(frames: &'a [Skeleton17], cfg: &WindowConfig) -> Result<Vec<&'a [Skeleton17]>> {
    cfg.validate()?;
    if frames.len() < cfg.length {
        return Err(GaitError::Dataset(format!(
            "sequence of {} frames is shorter than the window length {}",
            frames.len(),
            cfg.length
        )));
    }
    Ok(cfg
        .offsets(frames.len())
        .map(|o| &frames[o..o + cfg.length])
        .collect())
}

/// Windows a sequence and preprocesses every window into its three
/// normalized axis segments.
pub fn segment_sequence(frames: &[Skeleton17], cfg: &WindowConfig) -> Result<Vec<[AxisSegment; 3]>> {
    window_sequence(frames, cfg)?
        .into_iter()
        .map(preprocess_window)
        .collect()
}

/// Reads one gait sequence: 75 numeric columns per row, `#` lines ignored.
pub fn read_sequence_csv(path: &Path) -> Result<Vec<Skeleton25>> {
    let file = File::open(path).map_err(|e| GaitError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut frames = Vec::new();
    let mut values = Vec::with_capacity(RAW_JOINTS * 3);
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| GaitError::csv(path, e))?;
        values.clear();
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| {
                GaitError::Dataset(format!(
                    "{}: frame {k}: cannot parse {field:?} as a number",
                    path.display()
                ))
            })?;
            values.push(v);
        }
        let frame = Skeleton25::from_flat(&values, k)
            .map_err(|e| GaitError::Dataset(format!("{}: {e}", path.display())))?;
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(GaitError::Dataset(format!("{}: no frames", path.display())));
    }
    Ok(frames)
}

/// Reads a sequence file and applies joint selection to every frame.
pub fn load_sequence(path: &Path) -> Result<Vec<Skeleton17>> {
    Ok(read_sequence_csv(path)?.iter().map(select_joints).collect())
}

pub fn write_sequence_csv(path: &Path, frames: &[Skeleton25]) -> Result<()> {
    let file = File::create(path).map_err(|e| GaitError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| GaitError::io(path, e);
    let header: Vec<String> = (0..RAW_JOINTS)
        .flat_map(|j| ["x", "y", "z"].map(|c| format!("joint{j}_{c}")))
        .collect();
    writeln!(w, "# {}", header.join(",")).map_err(io)?;
    let mut line = String::with_capacity(RAW_JOINTS * 3 * 8);
    for frame in frames {
        line.clear();
        for (k, v) in frame.flat().enumerate() {
            if k > 0 {
                line.push(',');
            }
            // 0.1 mm resolution, finer than the sensor's
            line.push_str(&format!("{v:.4}"));
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn is_abnormal(self) -> bool {
        self == Label::Abnormal
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Label::Normal),
            "abnormal" => Ok(Label::Abnormal),
            other => Err(GaitError::Dataset(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub subject: String,
    pub label: Label,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sequences: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| GaitError::json(path, e))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| GaitError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GaitError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| GaitError::json(path, e))
    }
}

/// A sequence resolved against its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRef {
    /// File stem, unique within the manifest.
    pub id: String,
    pub path: PathBuf,
    pub subject: String,
    pub label: Label,
}

impl SequenceRef {
    pub fn load(&self) -> Result<Vec<Skeleton17>> {
        load_sequence(&self.path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    /// Normal sequences of training subjects only.
    pub train: Vec<SequenceRef>,
    /// Every sequence of test subjects.
    pub test: Vec<SequenceRef>,
    /// Abnormal sequences of training subjects; never used for training.
    pub train_abnormal: Vec<SequenceRef>,
}

/// Reads and validates a manifest: subject-disjoint splits, unique ids,
/// existing files and a non-empty normal training set.
pub fn load_manifest(path: &Path) -> Result<DatasetSplits> {
    let manifest = Manifest::read(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut splits_of: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for e in &manifest.sequences {
        let s = match e.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        splits_of.entry(&e.subject).or_default().insert(s);
    }
    if let Some((subject, _)) = splits_of.iter().find(|(_, s)| s.len() > 1) {
        return Err(GaitError::Dataset(format!(
            "subject {subject:?} appears in both train and test splits"
        )));
    }

    let mut ids = BTreeSet::new();
    let mut out = DatasetSplits {
        train: Vec::new(),
        test: Vec::new(),
        train_abnormal: Vec::new(),
    };
    for e in manifest.sequences {
        let full = if e.path.is_absolute() {
            e.path.clone()
        } else {
            base.join(&e.path)
        };
        if !full.is_file() {
            return Err(GaitError::Dataset(format!(
                "sequence file {} is missing",
                full.display()
            )));
        }
        let id = e
            .path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if !ids.insert(id.clone()) {
            return Err(GaitError::Dataset(format!("duplicate sequence id {id:?}")));
        }
        let r = SequenceRef {
            id,
            path: full,
            subject: e.subject,
            label: e.label,
        };
        match (e.split, e.label) {
            (Split::Train, Label::Normal) => out.train.push(r),
            (Split::Train, Label::Abnormal) => out.train_abnormal.push(r),
            (Split::Test, _) => out.test.push(r),
        }
    }
    if out.train.is_empty() {
        return Err(GaitError::Dataset(
            "empty training set: no normal sequences in the train split".into(),
        ));
    }
    Ok(out)
}
