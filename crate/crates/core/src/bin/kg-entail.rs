use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kg_entail::experiment::{self, ExperimentConfig, RunDir, SweepAxis};
use kg_entail::{Error, Result};

/// Entity alignment by bi-directional textual entailment.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat TOML config; defaults are used when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run directory; defaults to `$KG_ENTAIL_ARTIFACTS/<run_name>`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load or generate the graphs and split the seeds.
    Prepare(Common),
    /// Train on the prepared data.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the last checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Rank the test queries with the best checkpoint.
    Align(Common),
    /// Score stored predictions.
    Evaluate(Common),
    /// Evaluate several thresholds or candidate counts.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `threshold` or `candidates`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// prepare, train, align and evaluate in one go.
    Run(Common),
}

fn setup(c: &Common) -> Result<(ExperimentConfig, RunDir)> {
    let cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p, &c.set)?,
        None => ExperimentConfig::from_toml_str("", &c.set)?,
    };
    let run = match &c.out {
        Some(p) => RunDir::new(p),
        None => RunDir::for_config(&cfg),
    };
    Ok((cfg, run))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(c) => {
            let (cfg, run) = setup(&c)?;
            experiment::prepare(&cfg, &run)?;
            println!("prepared {}", run.root.display());
        }
        Command::Train { common, resume } => {
            let (cfg, run) = setup(&common)?;
            let out = if resume {
                experiment::resume(&cfg, &run)?
            } else {
                experiment::train(&cfg, &run)?
            };
            let best = out
                .state
                .best_val_hits1
                .map_or_else(|| "n/a".to_string(), |h| format!("{h:.4}"));
            println!(
                "trained {} epochs, best validation Hits@1 {best} ({})",
                out.state.epoch, out.best_kind
            );
        }
        Command::Align(c) => {
            let (cfg, run) = setup(&c)?;
            let results = experiment::align(&cfg, &run)?;
            let reranked = results.iter().filter(|r| r.reranked).count();
            println!("aligned {} queries, {reranked} re-ranked", results.len());
        }
        Command::Evaluate(c) => {
            let (cfg, run) = setup(&c)?;
            println!("{}", experiment::evaluate(&cfg, &run)?);
        }
        Command::Sweep {
            common,
            axis,
            values,
        } => {
            let (cfg, run) = setup(&common)?;
            let axis: SweepAxis = axis.parse()?;
            let rows = experiment::sweep(&cfg, &run, axis, &values)?;
            print!("{}", experiment::sweep_table(axis, &rows, &cfg.hash()));
        }
        Command::Run(c) => {
            let (cfg, run) = setup(&c)?;
            println!("{}", experiment::run_experiment(&cfg, &run)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
