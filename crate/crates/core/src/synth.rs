//! Synthetic treadmill gait in the sequence CSV format.
//!
//! Each subject walks toward the camera with a sinusoidal kinematic template:
//! hip flexion, knee flexion and arm swing oscillate around anatomical
//! offsets, the two sides half a cycle apart. Subjects differ in size,
//! proportions, cadence, swing amplitudes and position. Abnormal styles are
//! a raised leg (padded sole, three heights per side) or a damped swing on
//! one side (ankle weight, each side).

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_sequence_csv, Label, Manifest, ManifestEntry, Split};
use crate::error::{GaitError, Result};
use crate::skeleton::{kinect as k, Joint, Skeleton25, RAW_JOINTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub subjects: usize,
    /// The first `train_subjects` subjects form the train split.
    pub train_subjects: usize,
    pub frames: usize,
    pub fps: f64,
    /// Steps per second; one gait cycle is two steps.
    pub cadence: f64,
    /// Standard deviation of the per-coordinate Gaussian noise, meters.
    pub noise: f64,
    /// Padded-sole thicknesses in meters, applied to each side in turn.
    pub sole_heights: [f64; 3],
    /// Fraction of the normal leg swing kept on the weighted side.
    pub ankle_weight_swing: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 9,
            train_subjects: 5,
            frames: 1200,
            fps: 30.0,
            cadence: 1.4,
            noise: 0.005,
            sole_heights: [0.05, 0.10, 0.15],
            ankle_weight_swing: 0.6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GaitError::Config(format!("synth.{msg}")));
        if self.subjects < 2 {
            return bad(format!("subjects must be at least 2, got {}", self.subjects));
        }
        if self.train_subjects == 0 || self.train_subjects >= self.subjects {
            return bad(format!(
                "train_subjects must be in 1..{}, got {}",
                self.subjects, self.train_subjects
            ));
        }
        if self.frames == 0 {
            return bad("frames must be positive".into());
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if !(self.cadence.is_finite() && self.cadence > 0.0) {
            return bad(format!("cadence must be positive, got {}", self.cadence));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise must be non-negative, got {}", self.noise));
        }
        if self.sole_heights.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return bad(format!(
                "sole_heights must be non-negative, got {:?}",
                self.sole_heights
            ));
        }
        if !(self.ankle_weight_swing > 0.0 && self.ankle_weight_swing <= 1.0) {
            return bad(format!(
                "ankle_weight_swing must be in (0, 1], got {}",
                self.ankle_weight_swing
            ));
        }
        Ok(())
    }

    /// The nine recorded conditions of one subject, normal first.
    pub fn styles(&self) -> Vec<Style> {
        let mut out = vec![Style::Normal];
        for side in [Side::Left, Side::Right] {
            for (level, &height) in self.sole_heights.iter().enumerate() {
                out.push(Style::Sole {
                    side,
                    level: level + 1,
                    height,
                });
            }
        }
        for side in [Side::Left, Side::Right] {
            out.push(Style::AnkleWeight {
                side,
                swing: self.ankle_weight_swing,
            });
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn tag(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Style {
    Normal,
    /// The leg on `side` is raised by `height` meters.
    Sole { side: Side, level: usize, height: f64 },
    /// Hip and knee swing on `side` scaled by `swing`.
    AnkleWeight { side: Side, swing: f64 },
}

impl Style {
    pub fn name(&self) -> String {
        match self {
            Style::Normal => "normal".into(),
            Style::Sole { side, level, .. } => format!("sole_{}_{level}", side.tag()),
            Style::AnkleWeight { side, .. } => format!("ankle_weight_{}", side.tag()),
        }
    }

    /// A style with zero asymmetry walks exactly like `Normal`.
    pub fn is_abnormal(&self) -> bool {
        match *self {
            Style::Normal => false,
            Style::Sole { height, .. } => height != 0.0,
            Style::AnkleWeight { swing, .. } => swing != 1.0,
        }
    }

    fn sole(&self, side: Side) -> f64 {
        match *self {
            Style::Sole { side: s, height, .. } if s == side => height,
            _ => 0.0,
        }
    }

    fn swing(&self, side: Side) -> f64 {
        match *self {
            Style::AnkleWeight { side: s, swing } if s == side => swing,
            _ => 1.0,
        }
    }
}

/// Body measurements and gait parameters of one synthetic subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    /// Gait cycles per second.
    pub stride_freq: f64,
    pub phase0: f64,
    pub origin: [f64; 3],
    pub hip_height: f64,
    pub hip_half_width: f64,
    pub shoulder_half_width: f64,
    pub torso: f64,
    pub neck: f64,
    pub head: f64,
    pub thigh: f64,
    pub shank: f64,
    pub foot: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub hand: f64,
    pub lean: f64,
    pub hip_swing: f64,
    pub knee_flex: f64,
    pub arm_swing: f64,
    pub sway: f64,
    pub bob: f64,
}

impl Subject {
    fn draw(index: usize, cadence: f64, rng: &mut impl Rng) -> Self {
        let mut jit = |spread: f64| 1.0 + rng.random_range(-spread..=spread);
        let s = 1.72 * jit(0.08);
        let thigh = 0.245 * s * jit(0.04);
        let shank = 0.246 * s * jit(0.04);
        Subject {
            id: format!("s{:02}", index + 1),
            stride_freq: 0.5 * cadence * jit(0.1),
            phase0: 2.0 * PI * (jit(1.0) - 1.0),
            origin: [0.1 * (jit(1.0) - 1.0), 0.0, 2.3 + 0.3 * (jit(1.0) - 1.0)],
            hip_height: thigh + shank + 0.039 * s,
            hip_half_width: 0.055 * s * jit(0.1),
            shoulder_half_width: 0.11 * s * jit(0.08),
            torso: 0.288 * s * jit(0.05),
            neck: 0.06 * s * jit(0.1),
            head: 0.08 * s * jit(0.1),
            thigh,
            shank,
            foot: 0.1 * s * jit(0.08),
            upper_arm: 0.186 * s * jit(0.05),
            forearm: 0.146 * s * jit(0.05),
            hand: 0.05 * s * jit(0.1),
            lean: 0.05 * (jit(1.0) - 1.0).abs(),
            hip_swing: 0.35 * jit(0.15),
            knee_flex: 0.9 * jit(0.15),
            arm_swing: 0.3 * jit(0.3),
            sway: 0.02 * jit(0.3),
            bob: 0.015 * jit(0.3),
        }
    }

    /// Noise-free pose at gait phase `phase` (radians, left leg reference).
    pub fn pose(&self, style: &Style, phase: f64) -> [Joint; RAW_JOINTS] {
        let mut j = [[0.0; 3]; RAW_JOINTS];
        let [x0, _, z0] = self.origin;
        let pelvis = [
            x0 + self.sway * phase.sin(),
            self.hip_height + self.bob * (2.0 * phase).cos(),
            z0,
        ];
        // trunk leans toward the camera, i.e. along -z
        let up = |len: f64| [0.0, len * self.lean.cos(), -len * self.lean.sin()];
        let spine_mid = add(pelvis, up(0.5 * self.torso));
        let spine_shoulder = add(pelvis, up(self.torso));
        let neck = add(spine_shoulder, up(self.neck));
        j[k::SPINE_BASE] = pelvis;
        j[k::SPINE_MID] = spine_mid;
        j[k::SPINE_SHOULDER] = spine_shoulder;
        j[k::NECK] = neck;
        j[k::HEAD] = add(neck, up(self.head));

        for (side, psi, sign) in [(Side::Left, phase, 1.0), (Side::Right, phase + PI, -1.0)] {
            let [hip_i, knee_i, ankle_i, foot_i] = match side {
                Side::Left => [k::HIP_LEFT, k::KNEE_LEFT, k::ANKLE_LEFT, k::FOOT_LEFT],
                Side::Right => [k::HIP_RIGHT, k::KNEE_RIGHT, k::ANKLE_RIGHT, k::FOOT_RIGHT],
            };
            let lift = style.sole(side);
            let a = style.swing(side);
            let theta = a * self.hip_swing * psi.sin();
            let knee_bend = a * self.knee_flex * (0.5 + 0.5 * (psi + PI / 3.0).sin()).powi(2);
            let shank_angle = theta - knee_bend;
            let hip = add(pelvis, [sign * self.hip_half_width, -0.5 * self.hip_half_width + 0.5 * lift, 0.0]);
            let knee = add(hip, limb(self.thigh, theta, 0.5 * lift));
            let ankle = add(knee, limb(self.shank, shank_angle, 0.0));
            let foot_angle = 0.5 * shank_angle;
            let foot = add(
                ankle,
                [0.0, -0.04 * self.foot - self.foot * foot_angle.sin(), -self.foot * foot_angle.cos()],
            );
            j[hip_i] = hip;
            j[knee_i] = knee;
            j[ankle_i] = ankle;
            j[foot_i] = foot;

            // arms swing with the opposite leg
            let [sh_i, el_i, wr_i, ha_i, tip_i, th_i] = match side {
                Side::Left => [
                    k::SHOULDER_LEFT,
                    k::ELBOW_LEFT,
                    k::WRIST_LEFT,
                    k::HAND_LEFT,
                    k::HAND_TIP_LEFT,
                    k::THUMB_LEFT,
                ],
                Side::Right => [
                    k::SHOULDER_RIGHT,
                    k::ELBOW_RIGHT,
                    k::WRIST_RIGHT,
                    k::HAND_RIGHT,
                    k::HAND_TIP_RIGHT,
                    k::THUMB_RIGHT,
                ],
            };
            let alpha = -self.arm_swing * psi.sin();
            let beta = 1.3 * alpha + 0.25;
            let shoulder = add(
                spine_shoulder,
                [sign * self.shoulder_half_width, -0.02 * self.torso, 0.03 * psi.sin()],
            );
            let elbow = add(shoulder, limb(self.upper_arm, alpha, 0.0));
            let wrist = add(elbow, limb(self.forearm, beta, 0.0));
            let hand = add(wrist, limb(self.hand, beta, 0.0));
            j[sh_i] = shoulder;
            j[el_i] = elbow;
            j[wr_i] = wrist;
            j[ha_i] = hand;
            j[tip_i] = add(hand, limb(self.hand, beta, 0.0));
            j[th_i] = add(hand, [-sign * 0.3 * self.hand, -0.3 * self.hand, -0.5 * self.hand]);
        }
        j
    }
}

/// Segment of length `len` hanging from a joint, rotated forward (toward
/// the camera) by `angle`, with an extra vertical `lift`.
fn limb(len: f64, angle: f64, lift: f64) -> Joint {
    [0.0, -len * angle.cos() + lift, -len * angle.sin()]
}

fn add(a: Joint, b: Joint) -> Joint {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Subjects in order; subject `i` does not depend on how many are drawn.
pub fn subjects(cfg: &SynthConfig) -> Vec<Subject> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.subjects)
        .map(|i| Subject::draw(i, cfg.cadence, &mut rng))
        .collect()
}

/// Frames of one subject walking in `style`, noise stream `stream`.
pub fn synth_sequence(cfg: &SynthConfig, subject: &Subject, style: &Style, stream: u64) -> Result<Vec<Skeleton25>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| GaitError::Config(format!("synth.noise: {e}")))?;
    (0..cfg.frames)
        .map(|t| {
            let phase = subject.phase0 + 2.0 * PI * subject.stride_freq * t as f64 / cfg.fps;
            let mut joints = subject.pose(style, phase);
            if cfg.noise > 0.0 {
                for v in joints.iter_mut().flatten() {
                    *v += noise.sample(&mut rng);
                }
            }
            Skeleton25::new(joints, t)
        })
        .collect()
}

/// Writes every subject's nine sequences plus `manifest.json` into `dir`.
pub fn generate_synthetic(cfg: &SynthConfig, dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| GaitError::io(dir, e))?;
    let styles = cfg.styles();
    let mut manifest = Manifest { sequences: Vec::new() };
    for (si, subject) in subjects(cfg).iter().enumerate() {
        let split = if si < cfg.train_subjects {
            Split::Train
        } else {
            Split::Test
        };
        for (ki, style) in styles.iter().enumerate() {
            let stream = 1 + (si * styles.len() + ki) as u64;
            let frames = synth_sequence(cfg, subject, style, stream)?;
            let file = PathBuf::from(format!("{}_{}.csv", subject.id, style.name()));
            write_sequence_csv(&dir.join(&file), &frames)?;
            manifest.sequences.push(ManifestEntry {
                path: file,
                subject: subject.id.clone(),
                label: if style.is_abnormal() {
                    Label::Abnormal
                } else {
                    Label::Normal
                },
                split,
            });
        }
    }
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_manifest, WindowConfig};

    fn quiet() -> SynthConfig {
        SynthConfig {
            noise: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn ankles_are_half_cycle_mirror_images() {
        let cfg = quiet();
        let s = &subjects(&cfg)[0];
        let mid_x = s.origin[0];
        for step in 0..50 {
            let phase = step as f64 * 0.137;
            let now = s.pose(&Style::Normal, phase);
            let later = s.pose(&Style::Normal, phase + PI);
            for (l, r) in [(k::ANKLE_LEFT, k::ANKLE_RIGHT), (k::FOOT_LEFT, k::FOOT_RIGHT)] {
                let a = now[r];
                let b = later[l];
                assert!((a[0] - mid_x + (b[0] - mid_x)).abs() < 1e-12);
                assert!((a[1] - b[1]).abs() < 1e-12);
                assert!((a[2] - b[2]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_asymmetry_is_normal_gait() {
        let mut cfg = quiet();
        cfg.sole_heights = [0.0; 3];
        cfg.ankle_weight_swing = 1.0;
        let s = &subjects(&cfg)[1];
        let normal = synth_sequence(&cfg, s, &Style::Normal, 1).unwrap();
        for style in cfg.styles() {
            assert!(!style.is_abnormal());
            assert_eq!(synth_sequence(&cfg, s, &style, 1).unwrap(), normal);
        }
    }

    #[test]
    fn sole_raises_only_the_padded_leg() {
        let cfg = quiet();
        let s = &subjects(&cfg)[0];
        let style = cfg.styles()[3];
        assert_eq!(style.name(), "sole_left_3");
        let a = s.pose(&Style::Normal, 0.4);
        let b = s.pose(&style, 0.4);
        assert!((b[k::ANKLE_LEFT][1] - a[k::ANKLE_LEFT][1] - 0.15).abs() < 1e-12);
        assert_eq!(a[k::ANKLE_RIGHT], b[k::ANKLE_RIGHT]);
        assert_eq!(a[k::HEAD], b[k::HEAD]);
    }

    #[test]
    fn dataset_layout_and_determinism() {
        let cfg = SynthConfig {
            subjects: 3,
            train_subjects: 2,
            frames: 30,
            ..SynthConfig::default()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m = generate_synthetic(&cfg, d1.path()).unwrap();
        generate_synthetic(&cfg, d2.path()).unwrap();
        assert_eq!(m.sequences.len(), 27);
        for e in &m.sequences {
            let a = std::fs::read(d1.path().join(&e.path)).unwrap();
            let b = std::fs::read(d2.path().join(&e.path)).unwrap();
            assert_eq!(a, b, "{}", e.path.display());
        }
        let splits = load_manifest(&d1.path().join("manifest.json")).unwrap();
        assert_eq!(splits.train.len(), 2);
        assert_eq!(splits.test.len(), 9);
        assert_eq!(splits.train_abnormal.len(), 16);
        let frames = splits.train[0].load().unwrap();
        assert_eq!(frames.len(), 30);
    }

    #[test]
    fn full_length_normal_sequence_windows_into_199() {
        let cfg = SynthConfig::default();
        let s = &subjects(&cfg)[0];
        let frames = synth_sequence(&cfg, s, &Style::Normal, 1).unwrap();
        let selected: Vec<_> = frames.iter().map(crate::skeleton::select_joints).collect();
        let w = crate::dataset::window_sequence(&selected, &WindowConfig::TRAIN).unwrap();
        assert_eq!(w.len(), 199);
    }

    #[test]
    fn rejects_bad_configs() {
        for cfg in [
            SynthConfig { subjects: 1, ..SynthConfig::default() },
            SynthConfig { train_subjects: 9, ..SynthConfig::default() },
            SynthConfig { noise: -1.0, ..SynthConfig::default() },
            SynthConfig { ankle_weight_swing: 0.0, ..SynthConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
