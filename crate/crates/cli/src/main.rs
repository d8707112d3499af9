mod commands;
mod config;
mod error;
mod manifest;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use crate::commands::{Ctx, ServeInputs, TrainInputs};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::Manifest;

#[derive(Debug, Parser)]
#[command(
    name = "changerisk",
    version,
    about = "Change-deployment risk scoring: ingest, label, train, explain, evaluate and serve",
    after_long_help = config::option_schema()
)]
struct Cli {
    /// TOML run configuration; keys not given keep their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (default: out/<command>).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for synthesis, text projection and boosting.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output on stderr; repeat for more.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    /// Override one option by dotted key; see --help for the list.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted signal.
    Synth {
        /// Number of changes (overrides synth.n_changes).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Validate raw CSV or JSONL exports into a clean corpus directory.
    Ingest {
        #[arg(long)]
        changes: PathBuf,
        #[arg(long)]
        incidents: Option<PathBuf>,
        #[arg(long)]
        releases: Option<PathBuf>,
    },
    /// Link incidents to the changes that caused them and derive labels.
    Link {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Fit the feature schema and write train, validation and test matrices.
    Featurize {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Add team history features (rows without a product are dropped).
        #[arg(long)]
        team: bool,
    },
    /// Train the booster on a feature matrix.
    Train {
        /// Output directory of `featurize`.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Score every change of a corpus.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Per-change attributions and global importance.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Change ids to explain; the top-scored test changes when omitted.
        #[arg(long = "change")]
        changes: Vec<String>,
    },
    /// Compare the rule baseline with a model on the test period.
    Evaluate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Rule file for the baseline.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Sliding-window retraining backtest.
    Backtest {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Also publish the windows to a service data directory.
        #[arg(long, value_name = "DATA_DIR")]
        publish: Option<PathBuf>,
    },
    /// Team-feature ablation.
    Ablate {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Link, featurize, train and evaluate in one go.
    Run {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Re-run the command recorded in a manifest with its resolved config.
    Replay {
        manifest: PathBuf,
    },
    /// Print the resolved configuration as TOML.
    Config,
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        listen: Option<SocketAddr>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Corpus loaded into the store before serving.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Ingest { .. } => "ingest",
            Command::Link { .. } => "link",
            Command::Featurize { .. } => "featurize",
            Command::Train { .. } => "train",
            Command::Score { .. } => "score",
            Command::Explain { .. } => "explain",
            Command::Evaluate { .. } => "evaluate",
            Command::Backtest { .. } => "backtest",
            Command::Ablate { .. } => "ablate",
            Command::Run { .. } => "run",
            Command::Replay { .. } => "replay",
            Command::Config => "config",
            Command::Serve { .. } => "serve",
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        2 => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    let _ = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .try_init();
}

fn dispatch(cli: Cli, args: Vec<String>, config: Option<RunConfig>) -> Result<()> {
    let config = match config {
        Some(c) => c,
        None => RunConfig::resolve(cli.config.as_deref(), &cli.set, cli.seed)?,
    };
    let command = cli.command.name();
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| Path::new("out").join(command));
    let ctx = Ctx {
        config,
        out,
        args,
        command,
    };
    let p = |o: &Option<PathBuf>| o.as_deref().map(Path::to_path_buf);
    let manifest = match &cli.command {
        Command::Synth { n } => commands::synth(&ctx, *n)?,
        Command::Ingest {
            changes,
            incidents,
            releases,
        } => commands::ingest(&ctx, changes, incidents.as_deref(), releases.as_deref())?,
        Command::Link { corpus } => commands::link(&ctx, corpus.as_deref())?,
        Command::Featurize { corpus, team } => commands::featurize(&ctx, corpus.as_deref(), *team)?,
        Command::Train {
            features,
            schema,
            matrix,
            validation,
            labels,
        } => commands::train(
            &ctx,
            TrainInputs {
                features: features.as_deref(),
                schema: schema.as_deref(),
                matrix: matrix.as_deref(),
                validation: validation.as_deref(),
                labels: labels.as_deref(),
            },
        )?,
        Command::Score { model, schema, corpus } => commands::score(&ctx, model, schema, corpus.as_deref())?,
        Command::Explain {
            model,
            schema,
            corpus,
            changes,
        } => commands::explain(&ctx, model, schema, corpus.as_deref(), changes)?,
        Command::Evaluate {
            corpus,
            baseline,
            model,
            schema,
        } => commands::evaluate(&ctx, corpus.as_deref(), baseline.as_deref(), model.as_deref(), schema.as_deref())?,
        Command::Backtest { corpus, publish } => commands::backtest(&ctx, corpus.as_deref(), publish.as_deref())?,
        Command::Ablate { corpus } => commands::ablate(&ctx, corpus.as_deref())?,
        Command::Run { corpus } => commands::pipeline(&ctx, corpus.as_deref())?,
        Command::Replay { manifest } => return replay(manifest, cli.out.clone()),
        Command::Config => {
            print!("{}", ctx.config.to_toml());
            return Ok(());
        }
        Command::Serve {
            listen,
            data_dir,
            model,
            schema,
            corpus,
        } => {
            let (model, schema, corpus) = (p(model), p(schema), p(corpus));
            return commands::serve(
                &ctx,
                ServeInputs {
                    listen: *listen,
                    data_dir: data_dir.as_deref(),
                    model: model.as_deref(),
                    schema: schema.as_deref(),
                    corpus: corpus.as_deref(),
                },
            );
        }
    };
    eprintln!("wrote {} ({} outputs)", ctx.out.display(), manifest.outputs.len());
    Ok(())
}

/// Re-parses the recorded arguments and runs them with the recorded config.
fn replay(path: &Path, out: Option<PathBuf>) -> Result<()> {
    let manifest = Manifest::load(path)?;
    let mut argv = vec!["changerisk".to_string()];
    argv.extend(manifest.args.iter().cloned());
    if let Some(o) = &out {
        argv.push("--out".into());
        argv.push(o.display().to_string());
    }
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::Option(e.to_string()))?;
    if matches!(cli.command, Command::Replay { .. }) {
        return Err(CliError::Option("a replay manifest cannot replay itself".into()));
    }
    let mut config = manifest.config.clone();
    config.out = None;
    dispatch(cli, manifest.args.clone(), Some(config))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match dispatch(cli, args, None) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({"error": {"kind": e.kind(), "message": e.to_string()}});
            eprintln!("{line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
