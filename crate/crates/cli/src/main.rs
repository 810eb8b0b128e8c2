mod args;
mod commands;
mod output;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde::Serialize;
use serde_json::{json, Value};

use args::{Cli, Command};
use commands::{Context, Outcome};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hctb_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
            CliError::Csv(_) => "csv",
        }
    }
}

#[derive(Serialize)]
struct Stage {
    name: String,
    runtime_s: f64,
}

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    argv: Vec<String>,
    seed: u64,
    version: &'static str,
    threads: usize,
    outputs: Vec<String>,
    config: Value,
    stages: Vec<Stage>,
    total_runtime_s: f64,
    warnings: Vec<String>,
}

fn error_record(kind: &str, message: &str) {
    let rec = json!({"error": {"kind": kind, "message": message}});
    eprintln!("{rec}");
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let start = Instant::now();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let ctx = Context {
        seed: cli.seed,
        format: cli.format,
        record_runtime: cli.record_runtime,
    };
    let outcome: Outcome = match &cli.command {
        Command::Analyze(a) => commands::analyze_cmd(a, &ctx)?,
        Command::Simulate(a) => commands::simulate_cmd(a, &ctx)?,
        Command::Frt(a) => commands::frt_cmd(a, &ctx)?,
        Command::Match(a) => commands::match_cmd(a, &ctx)?,
    };
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    match &cli.out {
        None => {
            std::io::stdout().write_all(&outcome.body)?;
            for (_, extra) in &outcome.extras {
                std::io::stderr().write_all(extra)?;
            }
        }
        Some(out) => {
            std::fs::write(out, &outcome.body)?;
            let mut outputs = vec![out.display().to_string()];
            for (suffix, extra) in &outcome.extras {
                let path = sibling(out, suffix);
                std::fs::write(&path, extra)?;
                outputs.push(path.display().to_string());
            }
            let manifest = RunManifest {
                command: cli.command.name(),
                argv: std::env::args().collect(),
                seed: cli.seed,
                version: env!("CARGO_PKG_VERSION"),
                threads: rayon::current_num_threads(),
                outputs,
                config: outcome.config,
                stages: outcome
                    .stages
                    .into_iter()
                    .map(|(name, runtime_s)| Stage { name, runtime_s })
                    .collect(),
                total_runtime_s: start.elapsed().as_secs_f64(),
                warnings: outcome.warnings,
            };
            let mut text = serde_json::to_vec_pretty(&manifest)?;
            text.push(b'\n');
            std::fs::write(sibling(out, ".manifest.json"), text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            error_record("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error_record(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
