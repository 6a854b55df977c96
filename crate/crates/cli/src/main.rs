//! Command-line front end. Every subcommand writes its data files and a
//! `manifest.json` into the output directory.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure (with
//! `failure.json` written next to the other outputs).

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semidisperse::geometry::build_table;
use semidisperse::{tables, Table, TableDescription};

#[derive(Parser, Debug)]
#[command(name = "semidisperse", version, about = "Numerical experiments on semi-dispersing billiards")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Master seed; every sampler derives its streams from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 1 forces the sequential path.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory (overridden by SEMIDISPERSE_OUT).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

impl Common {
    pub fn out_dir(&self) -> PathBuf {
        std::env::var_os("SEMIDISPERSE_OUT").map_or_else(|| self.out.clone(), PathBuf::from)
    }
}

/// Table file (JSON description) or one of `square`, `sinai`, `pocket`.
#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct TableArg {
    #[arg(value_name = "TABLE", conflicts_with = "table")]
    pub path: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub table: Option<String>,
}

impl TableArg {
    pub fn load(&self) -> Result<(String, Table), Failure> {
        let spec = self
            .path
            .as_ref()
            .or(self.table.as_ref())
            .ok_or_else(|| Failure::config(anyhow::anyhow!("a table is required (--table PATH)")))?;
        let path = PathBuf::from(spec);
        if !path.exists() {
            if let Some(t) = tables::by_name(spec) {
                return Ok((spec.clone(), t));
            }
        }
        let desc = TableDescription::load(&path).map_err(Failure::config)?;
        let table = build_table(&desc).map_err(Failure::config)?;
        Ok((spec.clone(), table))
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a table and print its components and corners.
    Validate(commands::ValidateArgs),
    /// Iterate the collision map and write the trajectory.
    Simulate(commands::SimulateArgs),
    /// Trace the singularity curves S_n.
    TraceSing(commands::TraceArgs),
    /// Tubular radius on a grid over the collision space.
    ZtubMap(commands::ZtubArgs),
    /// Minimal expansions κ_{n,0} and κ_{n,δ} along sampled orbits.
    Kappa(commands::KappaArgs),
    /// Randomized check of the two-point divergent-front embedding.
    #[command(name = "lemma21-fuzz")]
    EmbeddingFuzz(commands::FuzzArgs),
    /// Synchronized frame around a bad point.
    SyncFrame(commands::FrameSource),
    /// Strip swept by the synchronized front, and containment of x3.
    StripCheck(commands::StripArgs),
    /// Monte Carlo estimate of the bad-set tail ν(U_ω^b) per δ.
    Tail(commands::TailArgs),
    /// Past sufficiency of points sampled on S_1.
    Ansatz(commands::AnsatzArgs),
    /// Lyapunov exponent from flat-front expansion.
    Lyapunov(commands::LyapunovArgs),
    /// Birkhoff averages of simple observables.
    Birkhoff(commands::BirkhoffArgs),
    /// Two-sample tests of ν against its image under the collision map.
    Invariance(commands::InvarianceArgs),
    /// Sweep of c3 on common samples.
    CalibrateC3(commands::CalibrateArgs),
}

#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
}

impl Failure {
    pub fn config(e: impl Into<anyhow::Error>) -> Self {
        Failure::Config(e.into())
    }

    pub fn numerical(e: impl Into<anyhow::Error>) -> Self {
        Failure::Numerical(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let out = cli.common.out_dir();
    let result = semidisperse::par::with_workers(cli.common.workers, || commands::run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            let report = serde_json::json!({
                "command": std::env::args().collect::<Vec<_>>(),
                "error": format!("{e:#}"),
            });
            if std::fs::create_dir_all(&out).is_ok() {
                let _ = output::write_json(&out.join("failure.json"), &report);
            }
            ExitCode::from(2)
        }
    }
}
