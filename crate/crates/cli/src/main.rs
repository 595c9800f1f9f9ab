//! `pee`: topic pretraining, persona expansion, training, generation,
//! evaluation and chat.
//!
//! Exit codes: 0 success, 1 internal error, 2 bad input.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pee_core::config::Config;
use pee_core::pipeline::{self, Candidates};
use pee_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "pee",
    version,
    about = "Persona exploration and exploitation for dialogue generation"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults apply to every missing field
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// overrides `seed` from the configuration
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// output file: the checkpoint for pretrain-topic and train, the
    /// records otherwise (stdout when absent)
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the topic model on the training set plus extra corpora
    PretrainTopic {
        /// further Persona-Chat or DailyDialog files
        corpora: Vec<PathBuf>,
    },
    /// Write one persona expansion record per conversation
    Expand {
        #[arg(long, value_name = "PATH")]
        topic: PathBuf,
        /// Persona-Chat file (default: paths.train)
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
    },
    /// Train the response generator on the joint objective
    Train {
        #[arg(long, value_name = "PATH")]
        expansions: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        valid_expansions: Option<PathBuf>,
    },
    /// Generate one response per example
    Generate {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Persona-Chat file (default: paths.test)
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        expansions: Option<PathBuf>,
        /// include persona weights and per-step memory attention
        #[arg(long)]
        diagnostics: bool,
    },
    /// Score responses against the references
    Eval {
        #[arg(long, value_name = "PATH", required_unless_present = "responses")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "PATH", conflicts_with = "responses")]
        expansions: Option<PathBuf>,
        /// records written by `generate`, instead of decoding
        #[arg(long, value_name = "PATH", conflicts_with = "checkpoint")]
        responses: Option<PathBuf>,
        /// Persona-Chat file (default: paths.test)
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
    },
    /// Talk to a trained model on stdin
    Chat {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// persona sentences, one per line
        #[arg(long, value_name = "PATH")]
        persona: PathBuf,
        /// topic checkpoint for expanding the persona
        #[arg(long, value_name = "PATH")]
        topic: Option<PathBuf>,
    },
}

fn record_sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_error(p, e))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn io_error(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn checkpoint_out(out: Option<&Path>) -> Result<&Path> {
    out.ok_or_else(|| Error::Config("--out PATH is required for the checkpoint".into()))
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.common.seed {
        config.seed = seed;
    }
    let out = cli.common.out.as_deref();
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::PretrainTopic { corpora } => {
            pipeline::cmd_pretrain_topic(&config, &corpora, checkpoint_out(out)?, &mut stdout)?;
        }
        Command::Expand { topic, data } => {
            let mut sink = record_sink(out)?;
            pipeline::cmd_expand(&config, &topic, data.as_deref(), &mut sink)?;
            sink.flush().map_err(|e| io_error(Path::new("<output>"), e))?;
        }
        Command::Train {
            expansions,
            valid_expansions,
        } => {
            pipeline::cmd_train(
                &config,
                expansions.as_deref(),
                valid_expansions.as_deref(),
                checkpoint_out(out)?,
                &mut stdout,
            )?;
        }
        Command::Generate {
            checkpoint,
            data,
            expansions,
            diagnostics,
        } => {
            let mut sink = record_sink(out)?;
            pipeline::cmd_generate(
                &config,
                &checkpoint,
                data.as_deref(),
                expansions.as_deref(),
                diagnostics,
                &mut sink,
            )?;
            sink.flush().map_err(|e| io_error(Path::new("<output>"), e))?;
        }
        Command::Eval {
            checkpoint,
            expansions,
            responses,
            data,
        } => {
            let candidates = match (&responses, &checkpoint) {
                (Some(r), _) => Candidates::Responses(r),
                (None, Some(c)) => Candidates::Model {
                    checkpoint: c,
                    expansions: expansions.as_deref(),
                },
                (None, None) => unreachable!("clap requires one of them"),
            };
            let mut sink = record_sink(out)?;
            pipeline::cmd_eval(&config, candidates, data.as_deref(), &mut sink)?;
            sink.flush().map_err(|e| io_error(Path::new("<output>"), e))?;
        }
        Command::Chat {
            checkpoint,
            persona,
            topic,
        } => {
            let model = pipeline::load_model(&checkpoint)?;
            let persona = pipeline::read_persona(&persona)?;
            let expansion = match topic {
                Some(t) => {
                    let topic = pipeline::load_topic(&config, &t)?;
                    let vectors = topic.word_topic_vectors();
                    Some(pipeline::expand_conversation(&config, &topic, &vectors, 0, &persona)?)
                }
                None => None,
            };
            let stdin = io::stdin();
            pipeline::cmd_chat(
                &config,
                &model,
                &persona,
                expansion.as_ref(),
                &mut stdin.lock(),
                &mut stdout,
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match panic::catch_unwind(AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 2 } else { 1 })
        }
        Err(_) => ExitCode::from(1),
    }
}
