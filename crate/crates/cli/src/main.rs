//! `hypoheat`: heat-kernel and curvature reports for linear hypoelliptic
//! systems read from a JSON file.

mod commands;
mod output;
mod tolerance;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use output::Format;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Analysis(#[from] hypoheat::Error),
    #[error("cannot write output: {0}")]
    Output(String),
}

#[derive(Debug, Parser)]
#[command(name = "hypoheat", version, about = "Small-time heat kernel and curvature reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// System file: {"A": [[..]], "B": [[..]], "alpha": [..]}.
    system: PathBuf,
    /// Override a tolerance, e.g. `--tol rank_rel=1e-9` (repeatable).
    #[arg(long = "tol", value_name = "NAME=VALUE")]
    tol: Vec<String>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Flag, curvature invariants, asymptotics per point, and cross-checks.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Expansion order h.
        #[arg(long, default_value_t = 4)]
        order: usize,
        /// Point x0 as comma-separated coordinates (repeatable).
        #[arg(long = "point", value_parser = parse_vector, allow_hyphen_values = true)]
        points: Vec<Point>,
    },
    /// Exact transition density p(t, x, y).
    Kernel {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t: f64,
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        x: Point,
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        y: Point,
    },
    /// Minimum energy S_t(x1, x2) and the initial covector of the extremal.
    Cost {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t: f64,
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        x1: Point,
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        x2: Point,
    },
    /// Laurent invariants of Q(t), optionally checked against a least-squares fit.
    Curvature {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        order: usize,
        /// Compare with the least-squares fit of sampled t^2 Q(t).
        #[arg(long)]
        oracle: bool,
    },
    /// Exact against asymptotic diagonal kernel on a geometric grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        order: usize,
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        point: Point,
        #[arg(long, default_value_t = 1e-3)]
        t_min: f64,
        #[arg(long, default_value_t = 1e-1)]
        t_max: f64,
        #[arg(long, default_value_t = 20)]
        n_points: usize,
    },
    /// Monte Carlo ensemble and a moment check against the exact transition law.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        point: Point,
        #[arg(long, default_value_t = 1.0)]
        t_final: f64,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = commands::DEFAULT_SEED)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SchemeArg::Exact)]
        scheme: SchemeArg,
        /// Write endpoint samples here, one row per path.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    Exact,
    Euler,
}

/// Comma-separated coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(pub Vec<f64>);

fn parse_vector(s: &str) -> Result<Point, String> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| format!("'{p}' is not a number"))
        })
        .collect::<Result<_, _>>()
        .map(Point)
}

/// Report value, its CSV table if it has one, and whether every check passed.
pub struct Outcome {
    pub value: Value,
    pub table: Option<commands::Table>,
    pub passed: bool,
}

fn run(cli: Cli) -> Result<(Outcome, Format), CliError> {
    use commands::*;
    match cli.command {
        Command::Analyze {
            common,
            order,
            points,
        } => {
            let ctx = Context::load(&common.system, &common.tol)?;
            Ok((analyze(&ctx, order, &points)?, common.format.unwrap_or(Format::Text)))
        }
        Command::Kernel { common, t, x, y } => {
            let ctx = Context::load(&common.system, &common.tol)?;
            Ok((kernel(&ctx, t, &x.0, &y.0)?, common.format.unwrap_or(Format::Text)))
        }
        Command::Cost { common, t, x1, x2 } => {
            let ctx = Context::load(&common.system, &common.tol)?;
            Ok((cost(&ctx, t, &x1.0, &x2.0)?, common.format.unwrap_or(Format::Text)))
        }
        Command::Curvature {
            common,
            order,
            oracle,
        } => {
            let ctx = Context::load(&common.system, &common.tol)?;
            Ok((curvature(&ctx, order, oracle)?, common.format.unwrap_or(Format::Text)))
        }
        Command::Sweep {
            common,
            order,
            point,
            t_min,
            t_max,
            n_points,
        } => {
            let ctx = Context::load(&common.system, &common.tol)?;
            let out = sweep(&ctx, order, &point.0, t_min, t_max, n_points)?;
            Ok((out, common.format.unwrap_or(Format::Csv)))
        }
        Command::Simulate {
            common,
            point,
            t_final,
            dt,
            paths,
            seed,
            scheme,
            samples,
        } => {
            let ctx = Context::load(&common.system, &common.tol)?;
            let config = hypoheat::SimulationConfig {
                n_paths: paths,
                dt,
                t_final,
                seed,
                scheme: match scheme {
                    SchemeArg::Exact => hypoheat::Scheme::ExactGaussianStep,
                    SchemeArg::Euler => hypoheat::Scheme::EulerMaruyama,
                },
            };
            let out = simulate(&ctx, &point.0, &config, samples.as_deref())?;
            Ok((out, common.format.unwrap_or(Format::Text)))
        }
    }
}

fn emit(outcome: &Outcome, format: Format) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let err = |e: &dyn std::fmt::Display| CliError::Output(e.to_string());
    match format {
        Format::Json => out
            .write_all(output::to_json(&outcome.value).as_bytes())
            .map_err(|e| err(&e))?,
        Format::Text => output::write_text(&mut out, &outcome.value).map_err(|e| err(&e))?,
        Format::Csv => match &outcome.table {
            Some(table) => table.write_csv(&mut out).map_err(|e| err(&e))?,
            None => output::write_flat_csv(&mut out, &outcome.value).map_err(|e| err(&e))?,
        },
    }
    out.flush().map_err(|e| err(&e))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = run(cli).and_then(|(outcome, format)| {
        emit(&outcome, format)?;
        Ok(outcome.passed)
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification FAILED");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
