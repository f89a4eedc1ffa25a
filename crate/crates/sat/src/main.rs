use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};
use sat::commands::{self, GenArgs, GenKind, SplitName, Suite};
use sat::config::RunConfig;
use sat::jsonl::save_jsonl;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "sat", version, about = "Structure-aware graph transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as JSONL.
    Gen {
        #[arg(value_enum)]
        kind: GenKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of graphs.
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Nodes per graph (triangle-count).
        #[arg(long, default_value_t = 12)]
        nodes: usize,
        /// Edge probability (triangle-count).
        #[arg(long, default_value_t = 0.3)]
        p: f64,
        /// Block sizes (sbm).
        #[arg(long, value_delimiter = ',', default_value = "10,10")]
        blocks: Vec<usize>,
        #[arg(long, default_value_t = 0.5)]
        p_in: f64,
        #[arg(long, default_value_t = 0.05)]
        p_out: f64,
    },
    /// Train a model; writes model.satckpt and history.json into --out.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON file with `model`, `train` and `split` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides such as `k=3` or `train.epochs=50`.
        #[arg(long = "set", num_args = 1.., value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Print metrics of a checkpoint as JSON.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
    },
    /// Export the attention matrices of one graph as JSON.
    DumpAttention {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        graph_index: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run verification suites; exits 1 if any fails.
    Verify {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
}

fn print_json(value: &impl Serialize) -> sat::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => r.map_err(|source| sat::Error::Io { path: "<stdout>".into(), source }),
    }
}

fn run(cli: Cli) -> sat::Result<bool> {
    match cli.command {
        Command::Gen { kind, out, seed, n, nodes, p, blocks, p_in, p_out } => {
            let dataset = commands::generate(&GenArgs { kind, n, nodes, p, blocks, p_in, p_out, seed })?;
            save_jsonl(&dataset, &out)?;
            info!("wrote {} to {}", commands::describe(&dataset), out.display());
        }
        Command::Train { data, config, out, seed, set } => {
            let mut cfg = match config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig::default(),
            };
            cfg.apply_overrides(&set)?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            let summary = commands::train(&data, cfg, &out)?;
            print_json(&serde_json::json!({
                "checkpoint": out.join(commands::CHECKPOINT_FILE),
                "best_epoch": summary.history.best_epoch,
                "val": summary.val,
                "test": summary.test,
            }))?;
        }
        Command::Eval { data, checkpoint, split } => {
            print_json(&commands::evaluate(&data, &checkpoint, split)?)?;
        }
        Command::DumpAttention { data, checkpoint, graph_index, out } => {
            let dump = commands::dump_attention(&data, &checkpoint, graph_index)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, serde_json::to_string_pretty(&dump)?)
                        .map_err(|source| sat::Error::Io { path: path.clone(), source })?;
                    info!("wrote attention of graph {graph_index} to {}", path.display());
                }
                None => print_json(&dump)?,
            }
        }
        Command::Verify { suite, seed, trials } => {
            let report = commands::verify(suite, seed, trials)?;
            print_json(&report)?;
            return Ok(report.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
