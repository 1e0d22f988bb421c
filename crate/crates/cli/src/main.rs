//! `qwire`: batch energy scans of disordered tight-binding wires.

mod config;
mod output;
mod run;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Engine, Format, Overrides, RunConfig};
use run::Command;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "qwire",
    version,
    about = "Transmission, density of states and localization length of disordered wires"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Transmission and reflection per energy (lattice chain or sampled continuum potential).
    Transmit(Args),
    /// Density of states and integrated density of states.
    Dos(Args),
    /// Lyapunov exponent and localization length.
    Lyapunov(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output file (default: the config's output.path, else stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Overrides disorder.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Engine for dos and lyapunov: finite, tl or both.
    #[arg(long)]
    mode: Option<Engine>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Transmit(a) => (Command::Transmit, a),
        Cmd::Dos(a) => (Command::Dos, a),
        Cmd::Lyapunov(a) => (Command::Lyapunov, a),
    };
    match execute(cmd, &args) {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            eprint!("{msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}

enum Failure {
    Config(String),
    Numerical(String),
}

fn execute(cmd: Command, args: &Args) -> Result<ExitCode, Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}\n", args.config.display())))?;
    let overrides = Overrides {
        seed: args.seed,
        engine: args.mode,
        output: args.output.clone(),
        format: args.format,
    };
    let cfg = RunConfig::parse(&text, &overrides).map_err(|e| Failure::Config(e.to_string()))?;
    if cmd == Command::Transmit {
        cfg.validate_transmit().map_err(|e| Failure::Config(e.to_string()))?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| Failure::Config(format!("cannot start {} threads: {e}\n", args.threads)))?;
    let records = pool.install(|| run::run(cmd, &cfg)).map_err(Failure::Numerical)?;

    let meta = output::Metadata::new(&text, cfg.disorder.seed());
    let written = match &cfg.output_path {
        Some(path) => File::create(path).and_then(|f| emit(BufWriter::new(f), cfg.format, &meta, &records)),
        None => emit(std::io::stdout().lock(), cfg.format, &meta, &records),
    };
    written.map_err(|e| Failure::Numerical(format!("cannot write output: {e}")))?;

    if run::acceptable(cmd, &records) {
        Ok(ExitCode::SUCCESS)
    } else {
        let failed = records.iter().filter(|r| r.failed_row()).count();
        Err(Failure::Numerical(format!(
            "{failed} of {} rows did not converge",
            records.len()
        )))
    }
}

fn emit<W: Write>(
    out: W,
    format: Format,
    meta: &output::Metadata,
    records: &[run::EnergyScanRecord],
) -> std::io::Result<()> {
    match format {
        Format::Csv => output::write_csv(out, meta, records),
        Format::Json => output::write_json(out, meta, records),
    }
}
