//! Command-line front end: JSON run configuration, the `geom`,
//! `check-constant`, `flow` and `identity-check` subcommands, and hashed,
//! reproducible output.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid configuration, 3
//! geometry error, 4 failed check (non-constant curvature, failed identity,
//! `--verify` mismatch), 5 diverged flow.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::{execute, Command, Overrides, EXIT_CHECK, EXIT_CONFIG, EXIT_IO};
use config::RunConfig;
use output::{inventory, write_all, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "nonhol", version, about = "Nonholonomic geometry and curve-flow hierarchies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.directory`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Recompute and compare against the manifest in the output directory
    /// instead of writing.
    #[arg(long, global = true)]
    pub verify: bool,
    /// Tolerance override for check-constant and identity-check.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Seed override for sampled points and random test fields.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Sub {
    /// Geometry report per sample point.
    Geom,
    /// Constant-curvature verdict; exits 4 when not constant.
    CheckConstant,
    /// Integrate a hierarchy flow.
    Flow,
    /// Operator identity battery; exits 4 on any failure.
    IdentityCheck,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Geom => Command::Geom,
            Sub::CheckConstant => Command::CheckConstant,
            Sub::Flow => Command::Flow,
            Sub::IdentityCheck => Command::IdentityCheck,
        }
    }
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let Some(cfg_path) = cli.config.as_deref() else {
        eprintln!("error: --config <path> is required");
        return EXIT_CONFIG;
    };
    let cfg = match RunConfig::load(cfg_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(t) = cli.tol {
        if !(t > 0.0 && t.is_finite()) {
            eprintln!("error: --tol must be positive");
            return EXIT_CONFIG;
        }
    }
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    let cmd: Command = cli.command.into();
    let ov = Overrides {
        seed: cli.seed,
        tol: cli.tol,
    };

    let start = Instant::now();
    let outcome = execute(cmd, &cfg, ov);
    let wall = start.elapsed().as_secs_f64();
    if let Some(msg) = &outcome.message {
        eprintln!("error: {msg}");
    }

    if cli.verify {
        return match output::verify(&dir, &outcome.artifacts) {
            Ok(rep) if rep.ok() => {
                println!("verified {} files in {}", outcome.artifacts.len(), dir.display());
                outcome.code
            }
            Ok(rep) => {
                for p in &rep.mismatched {
                    eprintln!("verify: {p} differs");
                }
                for p in &rep.missing {
                    eprintln!("verify: {p} listed in the manifest but not produced");
                }
                for p in &rep.unexpected {
                    eprintln!("verify: {p} produced but not in the manifest");
                }
                EXIT_CHECK
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_IO
            }
        };
    }

    let manifest = RunManifest {
        command: cmd.name().into(),
        library_version: nonhol::VERSION.into(),
        config: serde_json::to_value(&cfg).expect("config serializes"),
        seed_override: cli.seed,
        tol_override: cli.tol,
        exit_code: outcome.code,
        wall_time_s: wall,
        stages: outcome.stages.clone(),
        files: inventory(&outcome.artifacts),
    };
    if let Err(e) = write_all(&dir, &outcome.artifacts, &manifest) {
        eprintln!("error: writing {}: {e}", dir.display());
        return EXIT_IO;
    }
    let n = outcome.artifacts.len() + 1;
    println!("{}: wrote {n} file{} to {}", cmd.name(), if n == 1 { "" } else { "s" }, dir.display());
    outcome.code
}
