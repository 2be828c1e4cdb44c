mod commands;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jacobi_krein::Error;

use commands::{Format, Report};
use scenario::Scenario;

/// Scattering data, spectral shift, traces and Toda evolution for
/// compactly supported perturbations of periodic Jacobi operators.
#[derive(Parser)]
#[command(name = "jacobi-krein", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Band edges, Dirichlet data and eigenvalues (JSON by default).
    Spectrum(Common),
    /// α(z) and the perturbation determinant on the z grid.
    Alpha(Common),
    /// Perturbation determinant on the z grid.
    Det(Common),
    /// Spectral shift function profile.
    Shift(Common),
    /// τ_j by the direct, moment and recursion routes (JSON by default).
    Traces(Common),
    /// Conserved quantities along the Toda flow.
    Evolve(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Worker threads for grid evaluations.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
}

enum Failure {
    Input(String),
    Numerical(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(msg) => Failure::Input(msg),
            other => Failure::Numerical(other),
        }
    }
}

fn run(command: Command) -> Result<usize, Failure> {
    let (args, default_format, cmd): (Common, Format, fn(&Scenario, Format) -> _) = match command {
        Command::Spectrum(a) => (a, Format::Json, commands::spectrum),
        Command::Alpha(a) => (a, Format::Csv, commands::alpha),
        Command::Det(a) => (a, Format::Csv, commands::det),
        Command::Shift(a) => (a, Format::Csv, commands::shift),
        Command::Traces(a) => (a, Format::Json, commands::traces),
        Command::Evolve(a) => (a, Format::Csv, commands::evolve),
    };
    let scenario = Scenario::load(&args.scenario)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs as usize)
        .build()
        .map_err(|e| Failure::Input(e.to_string()))?;
    let format = args.format.unwrap_or(default_format);
    let Report { body, warnings } = pool.install(|| cmd(&scenario, format))?;
    match &args.out {
        Some(path) => std::fs::write(path, body)
            .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?,
        None => print!("{body}"),
    }
    Ok(warnings)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(warnings) => {
            eprintln!("{}", serde_json::json!({ "warnings": warnings }));
            ExitCode::SUCCESS
        }
        Err(Failure::Input(message)) => {
            eprintln!("{}", serde_json::json!({ "error": "schema", "message": message }));
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            let mut doc = serde_json::json!({
                "error": "numerical",
                "kind": e.kind(),
                "message": e.to_string(),
            });
            if let Error::PositivityLoss { step, time, dt, site } = e {
                doc["step"] = step.into();
                doc["time"] = time.into();
                doc["dt"] = dt.into();
                doc["site"] = site.into();
            }
            eprintln!("{doc}");
            ExitCode::from(3)
        }
    }
}
