//! ROC analysis of scored indices against binary labels.
//!
//! Orientation: the positive class is *abnormal* gait and a higher index
//! means more abnormal. A sample is predicted positive when its index is
//! `>=` the threshold.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{GaitError, Result};

/// One scored sample: the index and whether it is truly abnormal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub index: f64,
    pub abnormal: bool,
}

impl Scored {
    pub fn new(index: f64, abnormal: bool) -> Self {
        Scored { index, abnormal }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Smallest index still called positive at this point. The first point
    /// (nothing called positive) has an infinite threshold.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocResult {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub eer: f64,
    pub eer_threshold: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn count_classes(scores: &[Scored]) -> (usize, usize) {
    let pos = scores.iter().filter(|s| s.abnormal).count();
    (pos, scores.len() - pos)
}

/// Sweeps every distinct index as a threshold, from highest to lowest.
/// Equal indices form a single step, so ties contribute half credit to the AUC.
pub fn roc(scores: &[Scored]) -> Result<RocResult> {
    if let Some(s) = scores.iter().find(|s| !s.index.is_finite()) {
        return Err(GaitError::Metrics(format!("non-finite index {}", s.index)));
    }
    let (n_pos, n_neg) = count_classes(scores);
    if n_pos == 0 || n_neg == 0 {
        return Err(GaitError::Metrics(format!(
            "ROC needs both classes, got {n_pos} abnormal and {n_neg} normal"
        )));
    }

    let mut sorted: Vec<Scored> = scores.to_vec();
    sorted.sort_by(|a, b| b.index.total_cmp(&a.index));

    let (p, n) = (n_pos as f64, n_neg as f64);
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < sorted.len() {
        let threshold = sorted[k].index;
        while k < sorted.len() && sorted[k].index == threshold {
            if sorted[k].abnormal {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
            threshold,
        });
    }

    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();

    let (eer, eer_threshold) = equal_error_rate(&points);
    Ok(RocResult {
        points,
        auc,
        eer,
        eer_threshold,
        n_pos,
        n_neg,
    })
}

/// Crossing of FPR with FNR = 1 - TPR, linearly interpolated between the
/// bracketing points. The threshold is that of the finite-threshold point
/// nearest the crossing.
fn equal_error_rate(points: &[RocPoint]) -> (f64, f64) {
    let gap = |q: &RocPoint| q.fpr + q.tpr - 1.0;
    let k = points
        .iter()
        .position(|q| gap(q) >= 0.0)
        .expect("last ROC point is (1, 1)");
    let eer = if k == 0 || gap(&points[k]) == 0.0 {
        points[k].fpr
    } else {
        let (a, b) = (&points[k - 1], &points[k]);
        let t = -gap(a) / (gap(b) - gap(a));
        a.fpr + t * (b.fpr - a.fpr)
    };
    let best = points[1..]
        .iter()
        .min_by(|a, b| gap(a).abs().total_cmp(&gap(b).abs()))
        .expect("at least one finite threshold");
    (eer, best.threshold)
}

/// Confusion-matrix summary at a fixed threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionMetrics {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub f1: f64,
    /// Names of ratios whose denominator was zero; they are reported as 0.
    pub undefined: Vec<&'static str>,
}

pub fn confusion_at(scores: &[Scored], threshold: f64) -> Result<ConfusionMetrics> {
    if scores.is_empty() {
        return Err(GaitError::Metrics("no scores to evaluate".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for s in scores {
        match (s.index >= threshold, s.abnormal) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let mut undefined = Vec::new();
    let mut ratio = |name: &'static str, num: f64, den: f64| {
        if den == 0.0 {
            undefined.push(name);
            0.0
        } else {
            num / den
        }
    };
    let sensitivity = ratio("sensitivity", tp as f64, (tp + fn_) as f64);
    let specificity = ratio("specificity", tn as f64, (tn + fp) as f64);
    let precision = ratio("precision", tp as f64, (tp + fp) as f64);
    let accuracy = ratio("accuracy", (tp + tn) as f64, scores.len() as f64);
    let f1 = ratio(
        "f1",
        2.0 * precision * sensitivity,
        precision + sensitivity,
    );
    Ok(ConfusionMetrics {
        threshold,
        tp,
        fp,
        tn,
        fn_,
        sensitivity,
        specificity,
        precision,
        accuracy,
        f1,
        undefined,
    })
}

/// `fpr,tpr,threshold` rows.
pub fn write_roc_csv(points: &[RocPoint], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| GaitError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| GaitError::io(path, e);
    writeln!(w, "fpr,tpr,threshold").map_err(io)?;
    for q in points {
        writeln!(w, "{},{},{}", q.fpr, q.tpr, q.threshold).map_err(io)?;
    }
    w.flush().map_err(io)
}
