//! Skeleton ingestion: Kinect-v2 joint selection, per-axis split and
//! min-max normalization of a window into `[0, 1]`.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};

pub type Joint = [f64; 3];

pub const RAW_JOINTS: usize = 25;
pub const SELECTED_JOINTS: usize = 17;

/// Kinect-v2 indices dropped before modelling: spine-mid, neck, both wrists,
/// both hand tips and both thumbs.
pub const DISCARDED_JOINTS: [usize; 8] = [1, 2, 6, 10, 21, 22, 23, 24];

/// Kinect-v2 joint enumeration.
pub mod kinect {
    pub const SPINE_BASE: usize = 0;
    pub const SPINE_MID: usize = 1;
    pub const NECK: usize = 2;
    pub const HEAD: usize = 3;
    pub const SHOULDER_LEFT: usize = 4;
    pub const ELBOW_LEFT: usize = 5;
    pub const WRIST_LEFT: usize = 6;
    pub const HAND_LEFT: usize = 7;
    pub const SHOULDER_RIGHT: usize = 8;
    pub const ELBOW_RIGHT: usize = 9;
    pub const WRIST_RIGHT: usize = 10;
    pub const HAND_RIGHT: usize = 11;
    pub const HIP_LEFT: usize = 12;
    pub const KNEE_LEFT: usize = 13;
    pub const ANKLE_LEFT: usize = 14;
    pub const FOOT_LEFT: usize = 15;
    pub const HIP_RIGHT: usize = 16;
    pub const KNEE_RIGHT: usize = 17;
    pub const ANKLE_RIGHT: usize = 18;
    pub const FOOT_RIGHT: usize = 19;
    pub const SPINE_SHOULDER: usize = 20;
    pub const HAND_TIP_LEFT: usize = 21;
    pub const THUMB_LEFT: usize = 22;
    pub const HAND_TIP_RIGHT: usize = 23;
    pub const THUMB_RIGHT: usize = 24;
}

/// Raw indices of the 17 kept joints, in output order.
pub const fn selected_indices() -> [usize; SELECTED_JOINTS] {
    let mut out = [0; SELECTED_JOINTS];
    let mut n = 0;
    let mut j = 0;
    while j < RAW_JOINTS {
        let mut dropped = false;
        let mut k = 0;
        while k < DISCARDED_JOINTS.len() {
            if DISCARDED_JOINTS[k] == j {
                dropped = true;
            }
            k += 1;
        }
        if !dropped {
            out[n] = j;
            n += 1;
        }
        j += 1;
    }
    out
}

pub const SELECTED_INDICES: [usize; SELECTED_JOINTS] = selected_indices();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    /// Lowercase tag used in file names.
    pub fn tag(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
        };
        f.write_str(s)
    }
}

/// One tracked frame with all 25 Kinect-v2 joints, camera coordinates in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton25 {
    joints: [Joint; RAW_JOINTS],
}

impl Skeleton25 {
    pub fn new(joints: [Joint; RAW_JOINTS], frame: usize) -> Result<Self> {
        check_finite(&joints, frame)?;
        Ok(Skeleton25 { joints })
    }

    /// Builds a frame from 75 values ordered `j0x, j0y, j0z, ..., j24z`.
    pub fn from_flat(values: &[f64], frame: usize) -> Result<Self> {
        if values.len() != RAW_JOINTS * 3 {
            return Err(GaitError::MalformedFrame {
                frame,
                reason: format!(
                    "expected {} coordinates ({} joints), found {}",
                    RAW_JOINTS * 3,
                    RAW_JOINTS,
                    values.len()
                ),
            });
        }
        let mut joints = [[0.0; 3]; RAW_JOINTS];
        for (joint, chunk) in joints.iter_mut().zip(values.chunks_exact(3)) {
            joint.copy_from_slice(chunk);
        }
        Skeleton25::new(joints, frame)
    }

    pub fn joints(&self) -> &[Joint; RAW_JOINTS] {
        &self.joints
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.joints.iter().flat_map(|j| j.iter().copied())
    }
}

/// A frame after joint selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton17 {
    joints: [Joint; SELECTED_JOINTS],
}

impl Skeleton17 {
    pub fn new(joints: [Joint; SELECTED_JOINTS], frame: usize) -> Result<Self> {
        check_finite(&joints, frame)?;
        Ok(Skeleton17 { joints })
    }

    pub fn joints(&self) -> &[Joint; SELECTED_JOINTS] {
        &self.joints
    }
}

fn check_finite(joints: &[Joint], frame: usize) -> Result<()> {
    for (j, joint) in joints.iter().enumerate() {
        if let Some(c) = joint.iter().position(|v| !v.is_finite()) {
            return Err(GaitError::MalformedFrame {
                frame,
                reason: format!("joint {j} coordinate {c} is not finite"),
            });
        }
    }
    Ok(())
}

pub fn select_joints(frame: &Skeleton25) -> Skeleton17 {
    let mut joints = [[0.0; 3]; SELECTED_JOINTS];
    for (dst, &src) in joints.iter_mut().zip(SELECTED_INDICES.iter()) {
        *dst = frame.joints[src];
    }
    Skeleton17 { joints }
}

/// One coordinate axis of a window before normalization: `T x 17` values.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAxisSegment {
    pub axis: Axis,
    pub values: Array2<f64>,
}

/// Normalized model input: `T x 17` values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisSegment {
    axis: Axis,
    values: Array2<f64>,
}

impl AxisSegment {
    pub fn new(axis: Axis, values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(GaitError::Skeleton("empty axis segment".into()));
        }
        if let Some(v) = values
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(GaitError::Skeleton(format!(
                "axis segment value {v} outside [0, 1]"
            )));
        }
        Ok(AxisSegment { axis, values })
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }
}

/// Splits a sequence into its x, y and z coordinate matrices.
pub fn split_axes(seq: &[Skeleton17]) -> Result<[RawAxisSegment; 3]> {
    if seq.is_empty() {
        return Err(GaitError::Skeleton("cannot split an empty sequence".into()));
    }
    Ok(Axis::ALL.map(|axis| {
        let c = axis.index();
        RawAxisSegment {
            axis,
            values: Array2::from_shape_fn((seq.len(), SELECTED_JOINTS), |(t, j)| {
                seq[t].joints[j][c]
            }),
        }
    }))
}

/// Min-max scales the whole matrix into `[0, 1]`. A constant matrix maps to 0.5.
pub fn normalize_axis(raw: &RawAxisSegment) -> Result<AxisSegment> {
    let (lo, hi) = raw
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() || !hi.is_finite() {
        return Err(GaitError::Skeleton(
            "non-finite value in raw axis segment".into(),
        ));
    }
    let range = hi - lo;
    let values = if range > 0.0 {
        raw.values.mapv(|v| ((v - lo) / range).clamp(0.0, 1.0))
    } else {
        Array2::from_elem(raw.values.raw_dim(), 0.5)
    };
    AxisSegment::new(raw.axis, values)
}

/// Selection, axis split and normalization of one window of raw frames.
pub fn preprocess_window(frames: &[Skeleton17]) -> Result<[AxisSegment; 3]> {
    let [x, y, z] = split_axes(frames)?;
    Ok([normalize_axis(&x)?, normalize_axis(&y)?, normalize_axis(&z)?])
}
