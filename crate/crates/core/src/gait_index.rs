//! Fusion of the three per-axis weak indices into one gait index.
//!
//! Each axis model `k` gets weight `w_k = (e_X + e_Y + e_Z) / e_k`, where
//! `e_k` is its reconstruction MSE over the training set. A model that
//! reconstructs normal gait poorly contributes less.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::skeleton::Axis;

pub const FUSION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub w_x: f64,
    pub w_y: f64,
    pub w_z: f64,
}

impl FusionWeights {
    /// Plain sum of the three weak indices.
    pub const UNIFORM: FusionWeights = FusionWeights {
        w_x: 1.0,
        w_y: 1.0,
        w_z: 1.0,
    };

    pub fn get(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.w_x,
            Axis::Y => self.w_y,
            Axis::Z => self.w_z,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.w_x, self.w_y, self.w_z]
    }
}

pub fn fusion_weights(e_x: f64, e_y: f64, e_z: f64) -> Result<FusionWeights> {
    for (axis, e) in Axis::ALL.into_iter().zip([e_x, e_y, e_z]) {
        if !(e.is_finite() && e > 0.0) {
            return Err(GaitError::Fusion(format!(
                "training MSE of the {axis} model must be positive and finite, got {e}"
            )));
        }
    }
    let total = e_x + e_y + e_z;
    Ok(FusionWeights {
        w_x: total / e_x,
        w_y: total / e_y,
        w_z: total / e_z,
    })
}

/// Weighted sum of per-axis reconstruction errors, ordered `[x, y, z]`.
pub fn segment_index(weights: &FusionWeights, mse: [f64; 3]) -> f64 {
    weights.w_x * mse[0] + weights.w_y * mse[1] + weights.w_z * mse[2]
}

pub fn sequence_index(per_segment: &[f64]) -> Result<f64> {
    if per_segment.is_empty() {
        return Err(GaitError::Fusion(
            "cannot average an empty list of segment indices".into(),
        ));
    }
    Ok(per_segment.iter().sum::<f64>() / per_segment.len() as f64)
}

/// Persisted fusion state: training errors and the weights derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionFile {
    pub e_x: f64,
    pub e_y: f64,
    pub e_z: f64,
    pub w_x: f64,
    pub w_y: f64,
    pub w_z: f64,
    pub format_version: u32,
}

impl FusionFile {
    pub fn from_errors(e_x: f64, e_y: f64, e_z: f64) -> Result<Self> {
        let w = fusion_weights(e_x, e_y, e_z)?;
        Ok(FusionFile {
            e_x,
            e_y,
            e_z,
            w_x: w.w_x,
            w_y: w.w_y,
            w_z: w.w_z,
            format_version: FUSION_FORMAT_VERSION,
        })
    }

    pub fn weights(&self) -> FusionWeights {
        FusionWeights {
            w_x: self.w_x,
            w_y: self.w_y,
            w_z: self.w_z,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| GaitError::json(path, e))?;
        text.push('\n');
        File::create(path)
            .and_then(|mut f| f.write_all(text.as_bytes()))
            .map_err(|e| GaitError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| GaitError::io(path, e))?;
        let raw: FusionFile =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| GaitError::json(path, e))?;
        if raw.format_version != FUSION_FORMAT_VERSION {
            return Err(GaitError::Fusion(format!(
                "{}: unsupported format_version {}",
                path.display(),
                raw.format_version
            )));
        }
        let recomputed = fusion_weights(raw.e_x, raw.e_y, raw.e_z)?;
        if recomputed != raw.weights() {
            return Err(GaitError::Fusion(format!(
                "{}: weights do not match the stored training errors",
                path.display()
            )));
        }
        Ok(raw)
    }
}

/// Per-segment and per-sequence indices of one scored sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSequence {
    pub id: String,
    pub abnormal: bool,
    /// `[mse_x, mse_y, mse_z]` per segment.
    pub segment_mse: Vec<[f64; 3]>,
    pub segment_index: Vec<f64>,
    pub index: f64,
}

impl ScoredSequence {
    pub fn new(
        id: impl Into<String>,
        abnormal: bool,
        segment_mse: Vec<[f64; 3]>,
        weights: &FusionWeights,
    ) -> Result<Self> {
        let segment_index: Vec<f64> = segment_mse
            .iter()
            .map(|m| segment_index(weights, *m))
            .collect();
        let index = sequence_index(&segment_index)?;
        Ok(ScoredSequence {
            id: id.into(),
            abnormal,
            segment_mse,
            segment_index,
            index,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn symmetric_errors_give_equal_weights() {
        let w = fusion_weights(1.0, 1.0, 1.0).unwrap();
        assert_eq!(w.as_array(), [3.0, 3.0, 3.0]);
    }

    #[test]
    fn weights_by_substitution() {
        let w = fusion_weights(1.0, 2.0, 4.0).unwrap();
        assert_eq!(w.as_array(), [7.0, 3.5, 1.75]);
        let scaled = fusion_weights(10.0, 20.0, 40.0).unwrap();
        assert_eq!(scaled, w);
    }

    #[test]
    fn degenerate_errors_are_rejected() {
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(fusion_weights(bad, 1.0, 1.0).is_err());
            assert!(fusion_weights(1.0, 1.0, bad).is_err());
        }
    }

    #[test]
    fn segment_index_arithmetic() {
        let w = fusion_weights(1.0, 1.0, 1.0).unwrap();
        assert!((segment_index(&w, [0.1, 0.2, 0.3]) - 1.8).abs() < 1e-15);
        assert_eq!(segment_index(&w, [0.0; 3]), 0.0);
        let w = fusion_weights(1.0, 2.0, 4.0).unwrap();
        let base = segment_index(&w, [0.1, 0.2, 0.3]);
        let moved = segment_index(&w, [0.1 + 0.5, 0.2, 0.3]);
        assert!((moved - base - 7.0 * 0.5).abs() < 1e-12);
        assert_eq!(segment_index(&FusionWeights::UNIFORM, [0.25, 0.5, 1.0]), 1.75);
    }

    #[test]
    fn sequence_index_is_the_mean() {
        assert_eq!(sequence_index(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(sequence_index(&[0.7]).unwrap(), 0.7);
        assert_eq!(sequence_index(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert!(sequence_index(&[]).is_err());
    }

    #[test]
    fn fusion_file_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fusion.json");
        let f = FusionFile::from_errors(0.01, 0.02, 0.04).unwrap();
        f.save(&path).unwrap();
        assert_eq!(FusionFile::load(&path).unwrap(), f);

        let mut tampered = f.clone();
        tampered.w_x = 1.0;
        tampered.save(&path).unwrap();
        assert!(FusionFile::load(&path).is_err());
    }

    proptest! {
        #[test]
        fn power_of_two_rescaling_is_bit_exact(
            e in prop::array::uniform3(1e-6f64..10.0),
            shift in -40i32..40,
        ) {
            let c = 2f64.powi(shift);
            let a = fusion_weights(e[0], e[1], e[2]).unwrap();
            let b = fusion_weights(c * e[0], c * e[1], c * e[2]).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn arbitrary_rescaling_is_invariant_to_rounding(
            e in prop::array::uniform3(1e-6f64..10.0),
            c in 1e-3f64..1e3,
        ) {
            let a = fusion_weights(e[0], e[1], e[2]).unwrap();
            let b = fusion_weights(c * e[0], c * e[1], c * e[2]).unwrap();
            for (u, v) in a.as_array().iter().zip(b.as_array()) {
                prop_assert!((u - v).abs() <= 4.0 * f64::EPSILON * u);
            }
        }

        #[test]
        fn segment_index_is_monotone(
            w in prop::array::uniform3(0.1f64..50.0),
            m in prop::array::uniform3(0.0f64..1.0),
            axis in 0usize..3,
            bump in 0.0f64..1.0,
        ) {
            let w = FusionWeights { w_x: w[0], w_y: w[1], w_z: w[2] };
            let mut m2 = m;
            m2[axis] += bump;
            prop_assert!(segment_index(&w, m2) >= segment_index(&w, m));
        }

        #[test]
        fn sequence_index_within_hull(xs in prop::collection::vec(0.0f64..100.0, 1..50)) {
            let v = sequence_index(&xs).unwrap();
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
