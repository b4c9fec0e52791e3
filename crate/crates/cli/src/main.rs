//! `bundlecalc`: JSON problem configs in, deterministic JSON results out.

mod commands;
mod config;
mod error;
mod json;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde_json::Value;

use commands::{Flags, Job, Outcome};
use config::ProblemConfig;
use error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Transport,
    Geodesic,
    Curvature,
    Flatness,
    Covd,
    Frames,
    Morphism,
    Check,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Transport => "transport",
            Command::Geodesic => "geodesic",
            Command::Curvature => "curvature",
            Command::Flatness => "flatness",
            Command::Covd => "covd",
            Command::Frames => "frames",
            Command::Morphism => "morphism",
            Command::Check => "check",
        }
    }
}

/// Connections on vector fibre bundles: transport, curvature, covariant
/// derivatives, frame changes and morphisms.
#[derive(Debug, Parser)]
#[command(name = "bundlecalc", version)]
struct Cli {
    command: Command,
    /// Problem config (JSON); required except for `check`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// RK4 steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Relative finite-difference step.
    #[arg(long = "fd-step")]
    fd_step: Option<f64>,
    /// Tolerance for flatness and preservation verdicts.
    #[arg(long)]
    tol: Option<f64>,
    /// Number of sample points.
    #[arg(long)]
    samples: Option<usize>,
    /// Acceptance criterion name or id for `check`, or `all`.
    #[arg(long)]
    suite: Option<String>,
}

fn load(path: &Option<PathBuf>) -> Result<(ProblemConfig, Value), CliError> {
    let path = path
        .as_ref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    ProblemConfig::parse(&text)
}

fn execute(cli: &Cli, flags: &Flags, raw: &mut Value) -> Result<Outcome, CliError> {
    if cli.command == Command::Check {
        return commands::check(flags);
    }
    let (cfg, value) = load(&cli.config)?;
    *raw = value;
    let job = Job { cfg: &cfg, flags };
    match cli.command {
        Command::Transport => commands::transport(&job),
        Command::Geodesic => commands::geodesic_cmd(&job),
        Command::Curvature => commands::curvature_cmd(&job),
        Command::Flatness => commands::flatness(&job),
        Command::Covd => commands::covd(&job),
        Command::Frames => commands::frames(&job),
        Command::Morphism => commands::morphism(&job),
        Command::Check => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            // Help and version go to stdout, usage errors to stderr.
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let flags = Flags {
        steps: cli.steps,
        fd_step: cli.fd_step,
        tol: cli.tol,
        samples: cli.samples,
        suite: cli.suite.clone(),
    };
    let mut raw = Value::Null;
    let outcome = execute(&cli, &flags, &mut raw);
    let inputs = json::object(vec![
        (
            "config_path",
            cli.config
                .as_ref()
                .map_or(Value::Null, |p| Value::from(p.display().to_string())),
        ),
        ("config", raw),
        ("flags", flags.to_json()),
    ]);
    let command = Value::from(cli.command.name());
    let (doc, code) = match outcome {
        Ok(out) => {
            let status = if out.failed { "failed" } else { "ok" };
            let doc = json::object(vec![
                ("command", command),
                ("inputs", inputs),
                ("result", out.result),
                ("diagnostics", out.diagnostics),
                ("status", Value::from(status)),
            ]);
            (doc, u8::from(out.failed))
        }
        Err(err) => {
            eprintln!("bundlecalc: {err}");
            let doc = json::object(vec![
                ("command", command),
                ("inputs", inputs),
                (
                    "error",
                    json::object(vec![
                        ("kind", Value::from(err.kind())),
                        ("message", Value::from(err.to_string())),
                        ("exit_code", Value::from(err.exit_code())),
                    ]),
                ),
                ("status", Value::from("error")),
            ]);
            (doc, err.exit_code())
        }
    };
    println!("{}", json::to_string(&doc));
    ExitCode::from(code)
}
