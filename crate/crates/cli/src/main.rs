use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use gait_core::pipeline::{
    cmd_eval, cmd_export_weights, cmd_score, cmd_synth, cmd_train, RunConfig, REPORT_FILE,
};

#[derive(Parser, Debug)]
#[command(name = "gaitidx", version, about = "Gait abnormality index from skeleton sequences")]
struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(short, long, global = true, env = "GAIT_CONFIG")]
    config: Option<PathBuf>,

    #[command(flatten)]
    paths: PathArgs,

    /// Root seed for synthesis and training.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct PathArgs {
    #[arg(long, global = true)]
    dataset_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    model_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset and its manifest.
    Synth {
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        train_subjects: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train the X, Y and Z models on normal training sequences.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        /// Retention probability of encoder-input dropout (0.5 in the usual setup).
        #[arg(long)]
        dropout_keep: Option<f64>,
        /// Feed ground-truth frames to the decoder during training.
        #[arg(long)]
        teacher_forcing: bool,
        /// Axis models trained concurrently.
        #[arg(long, default_value_t = 3)]
        jobs: usize,
    },
    /// Score held-out sequences with non-overlapping windows.
    Score {
        /// Also score training subjects (optimistic for their normal sequences).
        #[arg(long)]
        include_train: bool,
    },
    /// Compute AUC, EER and confusion metrics from scored segments.
    Eval {
        /// Fixed decision threshold instead of each row's EER threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// segments.csv of a dropout-trained model set.
        #[arg(long)]
        dropout_segments: Option<PathBuf>,
        /// Write ROC curves as CSV next to the report.
        #[arg(long)]
        roc: bool,
    },
    /// Export encoder input weights of each model as CSV.
    ExportWeights,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.paths.dataset_dir {
        cfg.paths.dataset_dir = d.clone();
    }
    if let Some(d) = &cli.paths.model_dir {
        cfg.paths.model_dir = d.clone();
    }
    if let Some(d) = &cli.paths.output_dir {
        cfg.paths.output_dir = d.clone();
    }
    if let Some(s) = cli.seed {
        cfg.synth.seed = s;
        cfg.train.seed = s;
    }
    match &cli.command {
        Command::Synth {
            subjects,
            train_subjects,
            frames,
        } => {
            set(&mut cfg.synth.subjects, *subjects);
            set(&mut cfg.synth.train_subjects, *train_subjects);
            set(&mut cfg.synth.frames, *frames);
        }
        Command::Train {
            epochs,
            hidden,
            dropout_keep,
            teacher_forcing,
            ..
        } => {
            set(&mut cfg.train.epochs, *epochs);
            set(&mut cfg.train.hidden_dim, *hidden);
            set(&mut cfg.train.dropout_keep, *dropout_keep);
            cfg.train.teacher_forcing |= teacher_forcing;
        }
        Command::Score { include_train } => cfg.score.include_train |= include_train,
        Command::Eval {
            threshold,
            dropout_segments,
            roc,
        } => {
            if threshold.is_some() {
                cfg.eval.threshold = *threshold;
            }
            if dropout_segments.is_some() {
                cfg.eval.dropout_segments = dropout_segments.clone();
            }
            cfg.eval.write_roc |= roc;
        }
        Command::ExportWeights => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Synth { .. } => {
            let m = cmd_synth(&cfg).context("synth")?;
            println!(
                "wrote {} sequences to {}",
                m.sequences.len(),
                cfg.paths.dataset_dir.display()
            );
        }
        Command::Train { jobs, .. } => {
            let out = cmd_train(&cfg, jobs).context("train")?;
            println!("trained on {} windows per axis", out.windows);
            for r in &out.reports {
                info!("wall time {:.1}s", r.wall_time_secs);
            }
            let f = &out.fusion;
            println!(
                "train mse x={:.6} y={:.6} z={:.6}; weights x={:.4} y={:.4} z={:.4}",
                f.e_x, f.e_y, f.e_z, f.w_x, f.w_y, f.w_z
            );
        }
        Command::Score { .. } => {
            let scored = cmd_score(&cfg).context("score")?;
            println!(
                "scored {} sequences into {}",
                scored.len(),
                cfg.paths.output_dir.display()
            );
        }
        Command::Eval { .. } => {
            let report = cmd_eval(&cfg).context("eval")?;
            println!("{:<9} {:<24} {:>7} {:>7}", "level", "index", "AUC", "EER");
            for r in &report.rows {
                let level = format!("{:?}", r.granularity).to_lowercase();
                println!("{level:<9} {:<24} {:>7.4} {:>7.4}", r.index, r.auc, r.eer);
            }
            println!(
                "report: {}",
                cfg.paths.output_dir.join(REPORT_FILE).display()
            );
        }
        Command::ExportWeights => {
            for p in cmd_export_weights(&cfg).context("export-weights")? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
