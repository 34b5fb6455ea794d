use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crossflow::{cmd_evaluate, cmd_ingest, cmd_report, cmd_run, ExperimentConfig, Options};

#[derive(Debug, Parser)]
#[command(name = "crossflow", version, about = "Multi-agent RAG flow benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, default_value = "crossflow.toml")]
    config: PathBuf,
    /// Output directory, overriding `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated flow ids to restrict to, e.g. `1,3`.
    #[arg(long, value_delimiter = ',')]
    flows: Option<Vec<String>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Chunk and embed every domain corpus into an index.
    Ingest(Common),
    /// Run each flow over the question set.
    Run {
        #[command(flatten)]
        common: Common,
        /// Re-run records that already exist.
        #[arg(long)]
        force: bool,
    },
    /// Score run records and write the reports.
    Evaluate(Common),
    /// Print the report table from the last evaluation.
    Report(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> crossflow::Result<()> {
    let (common, force) = match cli.command {
        Command::Ingest(ref c) | Command::Evaluate(ref c) | Command::Report(ref c) => (c, false),
        Command::Run { ref common, force } => (common, force),
    };
    let cfg = ExperimentConfig::load(&common.config)?;
    let opts = Options { out: common.out.clone(), force, flows: common.flows.clone() };
    match cli.command {
        Command::Ingest(_) => {
            let summary = cmd_ingest(&cfg, &opts)?;
            for (domain, path, chunks) in summary.indexes {
                println!("{domain}: {chunks} chunks -> {}", path.display());
            }
        }
        Command::Run { .. } => {
            let s = cmd_run(&cfg, &opts)?;
            println!("{} records produced ({} failed), {} already present", s.produced, s.failed, s.skipped);
            if s.failed > 0 {
                // Failed records are kept and re-run on the next invocation.
                return Err(crossflow::Error::Runtime(format!("{} flow runs failed", s.failed)));
            }
        }
        Command::Evaluate(_) => {
            let s = cmd_evaluate(&cfg, &opts)?;
            if s.skipped > 0 {
                println!("{} records skipped", s.skipped);
            }
            print!("{}", s.report);
        }
        Command::Report(_) => print!("{}", cmd_report(&cfg, &opts)?),
    }
    Ok(())
}
