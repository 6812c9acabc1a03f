use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use chats_core::config::PipelineConfig;
use chats_core::pipeline::{self, GenerateMode};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Spoken-dialogue generation pipeline on discrete speech units.
#[derive(Parser)]
#[command(name = "chats", version)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Preset used for every key the file leaves out: desk or paper.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Override a configuration key, e.g. `--set train.steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic two-channel corpus with ground-truth labels.
    MakeCorpus,
    /// Encode the corpus frames with k-means content units and pitch units.
    Units,
    /// Turn transcripts into written dialogues and turn timelines.
    Prepare {
        /// Only write containment-labelled classifier examples.
        #[arg(long)]
        examples_only: bool,
    },
    /// Train the speaker/listener IPU classifier.
    TrainClassifier {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tokenize prepared dialogues and utterances into record files.
    Dataset,
    /// Pre-train on single-channel utterances.
    Pretrain,
    /// Train the two-channel dialogue model.
    Train,
    /// Generate unit streams for every written dialogue.
    Generate {
        #[arg(long, value_enum, default_value_t = Mode::Both)]
        mode: Mode,
    },
    /// Render unit streams to two WAV files per dialogue.
    Synthesize {
        /// Unit file to render instead of the generated one.
        #[arg(long)]
        units: Option<PathBuf>,
    },
    /// Compare generated dialogues with the corpus.
    Evaluate {
        /// Unit file to evaluate instead of the generated one.
        #[arg(long)]
        generated: Option<PathBuf>,
    },
    /// Redraw duration histograms from the last evaluation.
    Plot,
    /// Print the effective configuration.
    ShowConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Dialogue,
    Tts,
    Both,
}

fn print<T: Serialize>(report: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(report)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let text = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let cfg = PipelineConfig::build(text.as_deref(), cli.preset.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::MakeCorpus => print(&pipeline::make_corpus(&cfg)?),
        Command::Units => print(&pipeline::units(&cfg)?),
        Command::Prepare { examples_only } => print(&pipeline::prepare(&cfg, examples_only)?),
        Command::TrainClassifier { input, out } => {
            print(&pipeline::train_classifier(&cfg, input.as_deref(), out.as_deref())?)
        }
        Command::Dataset => print(&pipeline::write_dataset(&cfg)?),
        Command::Pretrain => print(&pipeline::pretrain(&cfg)?),
        Command::Train => print(&pipeline::train(&cfg)?),
        Command::Generate { mode } => {
            let mode = match mode {
                Mode::Dialogue => GenerateMode::Dialogue,
                Mode::Tts => GenerateMode::Tts,
                Mode::Both => GenerateMode::Both,
            };
            print(&pipeline::generate(&cfg, mode)?)
        }
        Command::Synthesize { units } => print(&pipeline::synthesize(&cfg, units.as_deref())?),
        Command::Evaluate { generated } => {
            let s = pipeline::evaluate(&cfg, generated.as_deref())?;
            print!("{}", s.metrics_csv());
            Ok(())
        }
        Command::Plot => {
            for p in pipeline::plot(&cfg)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::ShowConfig => {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CHATS_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<chats_core::Error>().map_or(2, |c| c.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
