//! Acceptance gate: one PASS/FAIL line per criterion on stderr.
//!
//! Criteria 7 and 9 run the whole pipeline at CI scale (3 subjects x 600
//! frames, 2 training subjects). Set `GAIT_ACCEPTANCE_FULL=1` to run them at
//! desk scale instead (9 subjects x 1200 frames, 5/4 split), which takes
//! roughly a quarter of an hour on one core.

mod common;

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use common::*;
use gait_core::autoencoder::{backward_batch, forward_batch, Autoencoder, DecoderFeed};
use gait_core::dataset::{window_sequence, WindowConfig};
use gait_core::gait_index::{fusion_weights, segment_index};
use gait_core::lstm::{lstm_backward, lstm_forward, lstm_step, LstmState};
use gait_core::metrics::{roc, Scored};
use gait_core::pipeline::{
    cmd_eval, cmd_score, cmd_synth, cmd_train, EvalReport, Granularity, RunConfig, TrainOutcome,
    INDEX_NONWEIGHTED, INDEX_WEIGHTED,
};
use gait_core::skeleton::{preprocess_window, select_joints, Axis};
use gait_core::synth::{subjects, synth_sequence, Style, SynthConfig};
use gait_core::training::{train_axis_model, TrainConfig};
use ndarray::Array2;
use rand::Rng;

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "criterion {n} [{}] {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    // written past the test harness capture so the gate shows in every log
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let (d, h) = (3, 4);
    let mut worst_lstm: f64 = 0.0;
    for seed in 0..5 {
        let mut r = rng(1000 + seed);
        let steps = 1 + seed as usize % 5;
        let p = random_lstm(d, h, &mut r);
        let xs: Vec<_> = (0..steps).map(|_| random_matrix(1, d, -1.0, 1.0, &mut r)).collect();
        let init = LstmState {
            c: random_matrix(1, h, -1.0, 1.0, &mut r),
            h: random_matrix(1, h, -0.9, 0.9, &mut r),
        };
        let g: Vec<_> = (0..steps).map(|_| random_matrix(1, h, -1.0, 1.0, &mut r)).collect();
        let fin = LstmState {
            c: random_matrix(1, h, -1.0, 1.0, &mut r),
            h: random_matrix(1, h, -1.0, 1.0, &mut r),
        };
        let (_, traces) = lstm_forward(&p, &xs, &init).unwrap();
        let back = lstm_backward(&p, &traces, &g, &fin).unwrap();
        let numeric = fd_gradient(
            &p,
            |p| p.tensors_mut().into_iter().collect(),
            |p| lstm_functional(p, &xs, &init, &g, &fin),
        );
        worst_lstm = worst_lstm.max(worst(&back.grads.tensors(), &numeric).0);
    }

    let mut worst_ae: f64 = 0.0;
    for (seed, feed) in [
        (0, DecoderFeed::SelfConditioned),
        (1, DecoderFeed::SelfConditioned),
        (2, DecoderFeed::TeacherForced),
    ] {
        let mut r = rng(2000 + seed);
        let net = random_autoencoder(d, h, &mut r);
        let xs: Vec<_> = (0..4).map(|_| random_matrix(2, d, 0.0, 1.0, &mut r)).collect();
        let trace = forward_batch(&net, &xs, &xs, feed).unwrap();
        let grads = backward_batch(&net, &trace, &xs, feed).unwrap();
        let numeric = fd_gradient(&net, |n: &mut Autoencoder| n.tensors_mut(), |n| {
            autoencoder_loss(n, &xs, feed)
        });
        worst_ae = worst_ae.max(worst(&grads.tensors(), &numeric).0);
    }
    let pass = worst_lstm < FD_REL_TOL && worst_ae < FD_REL_TOL;
    verdict(
        1,
        "gradient check",
        pass,
        &format!("max rel err cell {worst_lstm:.2e}, autoencoder {worst_ae:.2e} (< 1e-5)"),
    );
}

#[test]
fn criterion_2_scalar_oracle() {
    let mut r = rng(4242);
    let mut mismatches = 0;
    for _ in 0..100 {
        let w = ScalarWeights::random(&mut r);
        let x = r.random_range(-2.0..2.0);
        let hp = r.random_range(-1.0..1.0);
        let cp = r.random_range(-3.0..3.0);
        let (state, _) = lstm_step(
            &w.to_params(),
            &LstmState::single(&[cp], &[hp]),
            Array2::from_elem((1, 1), x).view(),
            0,
        )
        .unwrap();
        let (c, h) = scalar_cell(x, hp, cp, &w);
        if !(same_digits(state.c[[0, 0]], c, 12) && same_digits(state.h[[0, 0]], h, 12)) {
            mismatches += 1;
        }
    }
    verdict(
        2,
        "scalar oracle",
        mismatches == 0,
        &format!("{mismatches}/100 instances differ at 12 significant digits"),
    );
}

#[test]
fn criterion_3_window_counts() {
    let cfg = SynthConfig::default();
    let all = subjects(&cfg);
    let mut per_seq = Vec::new();
    for s in &all[..cfg.train_subjects] {
        let frames: Vec<_> = synth_sequence(&cfg, s, &Style::Normal, 1)
            .unwrap()
            .iter()
            .map(select_joints)
            .collect();
        per_seq.push(window_sequence(&frames, &WindowConfig::TRAIN).unwrap().len());
    }
    let total: usize = per_seq.iter().sum();
    let brute = enumerate_windows(1200, 12, 6).len();
    let pass = per_seq.iter().all(|&n| n == 199) && total == 995 && brute == 199;
    verdict(
        3,
        "window count",
        pass,
        &format!("{per_seq:?} windows per sequence, {total} total (expect 199 each, 995)"),
    );
}

#[test]
fn criterion_4_fusion_properties() {
    let w = fusion_weights(1.0, 2.0, 4.0).unwrap();
    let mut ok = w.as_array() == [7.0, 3.5, 1.75];
    ok &= fusion_weights(1.0, 1.0, 1.0).unwrap().as_array() == [3.0, 3.0, 3.0];
    ok &= fusion_weights(10.0, 20.0, 40.0).unwrap() == w;

    let mut r = rng(77);
    let mut bit_exact = true;
    for _ in 0..200 {
        let e: [f64; 3] = std::array::from_fn(|_| r.random_range(1e-5..1.0));
        let c = 2f64.powi(r.random_range(-30..30));
        bit_exact &= fusion_weights(e[0], e[1], e[2]).unwrap()
            == fusion_weights(c * e[0], c * e[1], c * e[2]).unwrap();
    }

    // ranking and AUC on a fixed score set under a non-power-of-two rescale
    let e = [3.1e-4, 1.7e-4, 2.3e-4];
    let base = fusion_weights(e[0], e[1], e[2]).unwrap();
    let scaled = fusion_weights(7.3 * e[0], 7.3 * e[1], 7.3 * e[2]).unwrap();
    let set: Vec<([f64; 3], bool)> = (0..300)
        .map(|k| {
            let abnormal = k % 3 == 0;
            let shift = if abnormal { 2e-4 } else { 0.0 };
            (std::array::from_fn(|_| r.random_range(0.0..6e-4) + shift), abnormal)
        })
        .collect();
    let score = |w| -> Vec<Scored> {
        set.iter()
            .map(|(m, a)| Scored::new(segment_index(&w, *m), *a))
            .collect()
    };
    let (a, b) = (score(base), score(scaled));
    let order = |s: &[Scored]| {
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&i, &j| s[i].index.total_cmp(&s[j].index));
        idx
    };
    let same_rank = order(&a) == order(&b);
    let (auc_a, auc_b) = (roc(&a).unwrap().auc, roc(&b).unwrap().auc);
    let pass = ok && bit_exact && same_rank && auc_a == auc_b;
    verdict(
        4,
        "fusion weights",
        pass,
        &format!(
            "examples {ok}, bit-invariant under 2^k {bit_exact}, ranking kept {same_rank}, AUC {auc_a:.6} vs {auc_b:.6}"
        ),
    );
}

#[test]
fn criterion_5_auc_oracle() {
    let mut r = rng(5005);
    let mut worst_gap: f64 = 0.0;
    for _ in 0..1000 {
        let n = r.random_range(2..=200);
        let grid = r.random_range(3..50) as f64;
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for k in 0..n {
            // coarse values force ties
            let v = (r.random_range(0.0..1.0f64) * grid).floor() / grid;
            let abnormal = if k == 0 { true } else if k == 1 { false } else { r.random_bool(0.4) };
            if abnormal {
                pos.push(v + 0.1);
            } else {
                neg.push(v);
            }
        }
        let scores: Vec<Scored> = pos
            .iter()
            .map(|&v| Scored::new(v, true))
            .chain(neg.iter().map(|&v| Scored::new(v, false)))
            .collect();
        let gap = (roc(&scores).unwrap().auc - pairwise_auc(&pos, &neg)).abs();
        worst_gap = worst_gap.max(gap);
    }
    verdict(
        5,
        "AUC oracle",
        worst_gap < 1e-12,
        &format!("max |sweep - pairwise| = {worst_gap:.2e} over 1000 instances"),
    );
}

#[test]
fn criterion_6_overfit_one_segment() {
    let cfg = SynthConfig::default();
    let s = &subjects(&cfg)[0];
    let frames: Vec<_> = synth_sequence(&cfg, s, &Style::Normal, 1)
        .unwrap()
        .iter()
        .map(select_joints)
        .collect();
    let segs = preprocess_window(&frames[..12]).unwrap();
    let tc = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let mut details = Vec::new();
    let mut pass = true;
    for axis in Axis::ALL {
        let repeated = vec![segs[axis.index()].clone(); tc.batch_size];
        let (model, report) = train_axis_model(&repeated, &tc).unwrap();
        let first = report.epoch_losses.iter().position(|&l| l < 1e-3).map(|k| k + 1);
        pass &= model.train_mse < 1e-3;
        details.push(format!(
            "{axis}: final mse {:.2e}, below 1e-3 from epoch {}",
            model.train_mse,
            first.map_or("-".into(), |e| e.to_string())
        ));
    }
    verdict(6, "overfit sanity", pass, &details.join("; "));
}

struct EndToEnd {
    train: TrainOutcome,
    report: EvalReport,
    scale: &'static str,
}

fn end_to_end() -> &'static EndToEnd {
    static RUN: OnceLock<EndToEnd> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let full = std::env::var("GAIT_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
        let mut cfg = RunConfig::default();
        if !full {
            cfg.synth.subjects = 3;
            cfg.synth.train_subjects = 2;
            cfg.synth.frames = 600;
        }
        set_paths(&mut cfg, dir.path());
        cmd_synth(&cfg).unwrap();
        let train = cmd_train(&cfg, 3).unwrap();
        cmd_score(&cfg).unwrap();
        let report = cmd_eval(&cfg).unwrap();
        EndToEnd {
            train,
            report,
            scale: if full { "9x1200, 5/4 split" } else { "3x600, 2/1 split" },
        }
    })
}

fn set_paths(cfg: &mut RunConfig, dir: &Path) {
    cfg.paths.dataset_dir = dir.join("data");
    cfg.paths.model_dir = dir.join("models");
    cfg.paths.output_dir = dir.join("out");
}

#[test]
fn criterion_7_synthetic_end_to_end() {
    let run = end_to_end();
    let auc = |g, i| run.report.row(g, i).unwrap().auc;
    let seq_w = auc(Granularity::Sequence, INDEX_WEIGHTED);
    let seg_w = auc(Granularity::Segment, INDEX_WEIGHTED);
    let seg_nw = auc(Granularity::Segment, INDEX_NONWEIGHTED);
    let a = seq_w >= 0.95;
    let b = seq_w >= seg_w;
    let c = seg_w >= seg_nw;
    verdict(
        7,
        "synthetic end-to-end",
        a && b && c,
        &format!(
            "{}: (a) sequence weighted AUC {seq_w:.4} >= 0.95 {a}; (b) >= segment weighted AUC {seg_w:.4} {b}; (c) segment weighted {seg_w:.4} >= non-weighted {seg_nw:.4} {c}",
            run.scale
        ),
    );
}

#[test]
fn criterion_8_determinism() {
    let files = |dir: &Path| -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for sub in ["data", "models", "out"] {
            let mut names: Vec<_> = std::fs::read_dir(dir.join(sub))
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            names.sort();
            for p in names {
                let name = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((name, std::fs::read(&p).unwrap()));
            }
        }
        out
    };
    let run = |dir: &Path| {
        let mut cfg = RunConfig::default();
        cfg.synth.subjects = 3;
        cfg.synth.train_subjects = 1;
        cfg.synth.frames = 60;
        cfg.train.epochs = 4;
        cfg.train.hidden_dim = 16;
        cfg.train.dropout_keep = 0.5;
        set_paths(&mut cfg, dir);
        cmd_synth(&cfg).unwrap();
        cmd_train(&cfg, 3).unwrap();
        cmd_score(&cfg).unwrap();
        cmd_eval(&cfg).unwrap();
        files(dir)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (fa, fb) = (run(a.path()), run(b.path()));
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let pass = fa.len() == fb.len() && differing.is_empty() && fa.len() > 30;
    verdict(
        8,
        "determinism",
        pass,
        &format!("{} files compared, differing: {differing:?}", fa.len()),
    );
}

#[test]
fn criterion_9_loss_shape() {
    let run = end_to_end();
    let mut pass = true;
    let mut details = Vec::new();
    for (axis, r) in Axis::ALL.iter().zip(&run.train.reports) {
        let l = &r.epoch_losses;
        let finite = l.iter().all(|v| v.is_finite());
        let head = l[..10].iter().sum::<f64>() / 10.0;
        let tail = l[l.len() - 10..].iter().sum::<f64>() / 10.0;
        pass &= finite && tail <= head;
        details.push(format!("{axis}: first-10 {head:.2e}, last-10 {tail:.2e}"));
    }
    verdict(9, "training loss shape", pass, &format!("{}: {}", run.scale, details.join("; ")));
}
