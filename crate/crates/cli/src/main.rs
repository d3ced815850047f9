//! `patchcode` — batch front end: spectrograms, dictionary learning,
//! encoding, per-trait SVM training, prediction and nested cross-validation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_traits, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] patchcode::Error),
}

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    /// Some clips failed and were skipped.
    Partial(usize),
}

#[derive(Parser, Debug)]
#[command(name = "patchcode", version, about = "Sparse spectrogram-patch coding and chi-squared SVM trait classification")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "PATCHCODE_THREADS")]
    threads: Option<usize>,
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct FrontEnd {
    #[arg(long)]
    window_len: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    stride_time: Option<usize>,
    #[arg(long)]
    stride_freq: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct LearnArgs {
    /// Dictionary size.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    n_iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    probe_size: Option<usize>,
    /// Patches sampled per clip for learning (default: all).
    #[arg(long)]
    max_patches_per_clip: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write one SPGM spectrogram dump per manifest clip.
    Spectro {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        front: FrontEnd,
    },
    /// Learn a dictionary from the patches of all manifest clips.
    LearnDict {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output SPDL file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        front: FrontEnd,
        #[command(flatten)]
        learn: LearnArgs,
    },
    /// Encode manifest clips into pooled histograms with a dictionary.
    Encode {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        dict: PathBuf,
        /// Output SPHS file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write one `clip_id,speaker_id,label,b0,...` CSV per trait here.
        #[arg(long)]
        csv_dir: Option<PathBuf>,
        #[arg(long)]
        l1_normalize: bool,
        /// Trait letters, e.g. `OCEAN` or `O,E`.
        #[arg(long)]
        traits: Option<String>,
    },
    /// Train one SVM per trait on a histogram set.
    Train {
        #[arg(long)]
        histograms: PathBuf,
        /// Dictionary the histograms were encoded with.
        #[arg(long)]
        dict: PathBuf,
        /// Output directory for `model_<T>.spsv` files.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trait letters, e.g. `OCEAN` or `O,E`.
        #[arg(long)]
        traits: Option<String>,
        #[arg(long = "c", default_value_t = 1.0)]
        cost: f64,
        /// Kernel width, divided by the median training chi-squared distance.
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Positive-class cost multiplier (default: n_neg / n_pos).
        #[arg(long)]
        pos_weight: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict trait labels; writes `clip_id,trait,label,decision_value`.
    Predict {
        #[arg(long)]
        dict: PathBuf,
        /// Model files; directories are scanned for `*.spsv`.
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long, conflicts_with = "histograms")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        histograms: Option<PathBuf>,
        /// Output CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Nested speaker-grouped cross-validation with grid search.
    Cv {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory for `results.csv`, `summary.json` and `folds.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        front: FrontEnd,
        #[command(flatten)]
        learn: LearnArgs,
        /// Grid of dictionary sizes.
        #[arg(long = "grid-m", value_delimiter = ',')]
        grid_m: Option<Vec<usize>>,
        #[arg(long = "grid-lambda", value_delimiter = ',')]
        grid_lambda: Option<Vec<f64>>,
        #[arg(long = "grid-c", value_delimiter = ',')]
        grid_c: Option<Vec<f64>>,
        #[arg(long = "grid-gamma", value_delimiter = ',')]
        grid_gamma: Option<Vec<f64>>,
        #[arg(long)]
        k_outer: Option<usize>,
        #[arg(long)]
        k_inner: Option<usize>,
        /// Score inner folds with the outer-training dictionary.
        #[arg(long)]
        reuse_dict: bool,
        /// Trait letters, e.g. `OCEAN` or `O,E`.
        #[arg(long)]
        traits: Option<String>,
    },
}

fn apply_front(cfg: &mut RunConfig, f: &FrontEnd) {
    if let Some(v) = f.window_len {
        cfg.spectrogram.window_len = v;
    }
    if let Some(v) = f.hop {
        cfg.spectrogram.hop = v;
    }
    if let Some(v) = f.patch_size {
        cfg.patch_grid.patch_size = v;
    }
    if let Some(v) = f.stride_time {
        cfg.patch_grid.stride_time = v;
    }
    if let Some(v) = f.stride_freq {
        cfg.patch_grid.stride_freq = v;
    }
}

fn apply_learn(cfg: &mut RunConfig, l: &LearnArgs) {
    if let Some(v) = l.m {
        cfg.learn.m = v;
    }
    if let Some(v) = l.lambda {
        cfg.learn.lambda = v;
    }
    if let Some(v) = l.n_iters {
        cfg.learn.n_iters = v;
    }
    if let Some(v) = l.batch {
        cfg.learn.batch = v;
    }
    if let Some(v) = l.probe_size {
        cfg.learn.probe_size = v;
    }
    if l.max_patches_per_clip.is_some() {
        cfg.max_patches_per_clip = l.max_patches_per_clip;
    }
}

fn set<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn set_traits(cfg: &mut RunConfig, traits: Option<String>) -> Result<(), CliError> {
    if let Some(t) = traits {
        cfg.traits = parse_traits(&t).map_err(CliError::Invalid)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.threads, cli.threads);
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(CliError::Invalid("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
    }

    match cli.command {
        Command::Spectro { manifest, out, front } => {
            set(&mut cfg.manifest, manifest);
            set(&mut cfg.out, out);
            apply_front(&mut cfg, &front);
            commands::spectro(&cfg)
        }
        Command::LearnDict { manifest, out, seed, front, learn } => {
            set(&mut cfg.manifest, manifest);
            set(&mut cfg.out, out);
            cfg.seed = seed.unwrap_or(cfg.seed);
            apply_front(&mut cfg, &front);
            apply_learn(&mut cfg, &learn);
            commands::learn_dict(&cfg)
        }
        Command::Encode { manifest, dict, out, csv_dir, l1_normalize, traits } => {
            set(&mut cfg.manifest, manifest);
            set(&mut cfg.out, out);
            cfg.pool.l1_normalize |= l1_normalize;
            set_traits(&mut cfg, traits)?;
            commands::encode(&cfg, &dict, csv_dir.as_deref())
        }
        Command::Train { histograms, dict, out, traits, cost, gamma, pos_weight, seed } => {
            set(&mut cfg.out, out);
            cfg.seed = seed.unwrap_or(cfg.seed);
            set_traits(&mut cfg, traits)?;
            let opts = commands::TrainOptions { cost, gamma, pos_weight };
            commands::train(&cfg, &histograms, &dict, &opts)
        }
        Command::Predict { dict, models, manifest, histograms, out } => {
            set(&mut cfg.manifest, manifest);
            set(&mut cfg.out, out);
            commands::predict(&cfg, &dict, &models, histograms.as_deref())
        }
        Command::Cv {
            manifest,
            out,
            seed,
            front,
            learn,
            grid_m,
            grid_lambda,
            grid_c,
            grid_gamma,
            k_outer,
            k_inner,
            reuse_dict,
            traits,
        } => {
            set(&mut cfg.manifest, manifest);
            set(&mut cfg.out, out);
            cfg.seed = seed.unwrap_or(cfg.seed);
            apply_front(&mut cfg, &front);
            apply_learn(&mut cfg, &learn);
            cfg.grid.m = grid_m.unwrap_or(cfg.grid.m);
            cfg.grid.lambda = grid_lambda.unwrap_or(cfg.grid.lambda);
            cfg.grid.cost = grid_c.unwrap_or(cfg.grid.cost);
            cfg.grid.gamma = grid_gamma.unwrap_or(cfg.grid.gamma);
            cfg.k_outer = k_outer.unwrap_or(cfg.k_outer);
            cfg.k_inner = k_inner.unwrap_or(cfg.k_inner);
            cfg.reuse_dict |= reuse_dict;
            set_traits(&mut cfg, traits)?;
            commands::cv(&cfg)
        }
    }
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
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(n)) => {
            eprintln!("warning: {n} clip(s) failed and were skipped");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
