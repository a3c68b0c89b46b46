//! `zbcnn` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
//! error (including a failed gradient check).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RawConfig;

#[derive(Parser)]
#[command(name = "zbcnn", version, about = "Zero-bias CNN for facial expression recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic face dataset (PGM images, manifest, factors).
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        per_subject: Option<usize>,
    },
    /// Train a model and write weights.zbc and metrics.jsonl.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Evaluate saved weights on the held-out split (or every sample).
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Subject-independent or manifest-fold cross-validation.
    Crossval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Top-N images and reconstructions for selected conv filters.
    Visualize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pick: FilterArgs,
        #[arg(long)]
        topn: Option<usize>,
        /// guided | plain
        #[arg(long)]
        mode: Option<String>,
        /// reconstruction | input | blend
        #[arg(long)]
        overlay: Option<String>,
        /// Render both modes and check receptive-field and guided-support invariants.
        #[arg(long)]
        verify: bool,
    },
    /// KL divergence between activation histograms with and without each action unit.
    AnalyzeFau {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pick: FilterArgs,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        min_support: Option<usize>,
    },
    /// Finite-difference check of every layer's backward pass.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Configuration file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    manifest: Option<String>,
    #[arg(long)]
    image_root: Option<String>,
    /// Comma-separated class names.
    #[arg(long)]
    classes: Option<String>,
    #[arg(long)]
    weights: Option<String>,
    /// holdout | ck_plus_10fold | tfd_5fold | none
    #[arg(long)]
    protocol: Option<String>,
    /// train | all
    #[arg(long)]
    split: Option<String>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// true | false
    #[arg(long)]
    augment: Option<bool>,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    layer: Option<usize>,
    /// Comma-separated filter indices, auto:K, or all.
    #[arg(long)]
    filters: Option<String>,
}

fn put(raw: &mut RawConfig, key: &str, v: Option<impl ToString>) {
    if let Some(v) = v {
        raw.set(key, &v.to_string()).expect("flag keys exist");
    }
}

impl Common {
    fn build(self) -> zbcnn::Result<RawConfig> {
        let mut raw = RawConfig::defaults();
        if let Some(path) = &self.config {
            raw.load_file(path)?;
        }
        put(&mut raw, "seed", self.seed);
        put(&mut raw, "out", self.out);
        put(&mut raw, "threads", self.threads);
        put(&mut raw, "manifest", self.manifest);
        put(&mut raw, "image_root", self.image_root);
        put(&mut raw, "classes", self.classes);
        put(&mut raw, "weights", self.weights);
        put(&mut raw, "protocol", self.protocol);
        put(&mut raw, "split", self.split);
        for s in &self.sets {
            raw.set_pair(s)?;
        }
        Ok(raw)
    }
}

impl ModelArgs {
    fn apply(self, raw: &mut RawConfig) {
        put(raw, "epochs", self.epochs);
        put(raw, "learning_rate", self.learning_rate);
        put(raw, "batch_size", self.batch_size);
        put(raw, "dropout", self.dropout);
        put(raw, "augment", self.augment);
    }
}

impl FilterArgs {
    fn apply(self, raw: &mut RawConfig) {
        put(raw, "layer", self.layer);
        put(raw, "filters", self.filters);
    }
}

fn run(command: Command) -> zbcnn::Result<()> {
    match command {
        Command::Synth { common, subjects, per_subject } => {
            let mut raw = common.build()?;
            put(&mut raw, "synth_subjects", subjects);
            put(&mut raw, "synth_per_subject", per_subject);
            commands::synth(&raw)
        }
        Command::Train { common, model } => {
            let mut raw = common.build()?;
            model.apply(&mut raw);
            commands::train_cmd(&raw)
        }
        Command::Eval { common } => commands::eval(&common.build()?),
        Command::Crossval { common, model } => {
            let mut raw = common.build()?;
            model.apply(&mut raw);
            commands::crossval(&raw)
        }
        Command::Visualize { common, pick, topn, mode, overlay, verify } => {
            let mut raw = common.build()?;
            pick.apply(&mut raw);
            put(&mut raw, "topn", topn);
            put(&mut raw, "mode", mode);
            put(&mut raw, "overlay", overlay);
            commands::visualize(&raw, verify)
        }
        Command::AnalyzeFau { common, pick, bins, min_support } => {
            let mut raw = common.build()?;
            pick.apply(&mut raw);
            put(&mut raw, "bins", bins);
            put(&mut raw, "min_support", min_support);
            commands::analyze_fau(&raw)
        }
        Command::Gradcheck { common, seeds } => commands::gradcheck(&common.build()?, seeds),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
