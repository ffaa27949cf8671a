use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;
mod settings;

use settings::ConfigError;

#[derive(Parser, Debug)]
#[command(name = "crush", version, about = "Context-aware hate speech classifier training")]
pub struct Cli {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set cr_lambda=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FinetuneMode {
    /// Task loss mixed with contextual regularization.
    Cr,
    /// Task loss only.
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Clustered labels over threads and user communities.
    EchoChamber,
    /// Authors with disjoint vocabularies.
    SeparableUsers,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a social graph snapshot from JSON-lines post records.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Continual masked-LM training on every post of the graph.
    PretrainCp {
        #[arg(long)]
        graph: PathBuf,
        /// Checkpoint to start from; a fresh model when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Resume file written by an interrupted run of this phase.
        #[arg(long, conflicts_with = "init")]
        resume: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// User-anchored contrastive training of the encoder.
    PretrainUa {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, conflicts_with = "init")]
        resume: Option<PathBuf>,
        /// Labeled posts for the robust variant's auxiliary term.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Supervised fine-tuning of encoder and head.
    Finetune {
        #[arg(long, value_enum, default_value = "cr")]
        mode: FinetuneMode,
        /// Needed for contextual regularization.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, conflicts_with = "init")]
        resume: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a checkpoint on labeled posts; prints the metrics JSON.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Adds a breakdown by available thread and user context.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learning curve over few-shot subsets of the training set.
    Fewshot {
        #[arg(long, value_enum, default_value = "cr")]
        mode: FinetuneMode,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.02, 0.05, 0.1, 0.2])]
        fractions: Vec<f64>,
        /// Run seeds; the config seed alone when omitted.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Predict one text with a trained checkpoint. Reads no graph.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text: String,
    },
    /// Write a synthetic corpus (posts, train and test splits) as JSON lines.
    Synth {
        #[arg(long, value_enum, default_value = "echo-chamber")]
        kind: SynthKind,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let config_error = e.downcast_ref::<ConfigError>().is_some()
                || matches!(e.downcast_ref::<crush_core::Error>(), Some(crush_core::Error::Config(_)));
            // causes whose text already appears upstream are left out
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}
