use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use torus_phi4::experiments_cli::{
    cmd_invariance, cmd_inviscid, cmd_smoothing, cmd_verify, CommandOutput, ExperimentConfig, Provenance, Suite,
};
use torus_phi4::PhiError;

#[derive(Parser, Debug)]
#[command(name = "torus-phi4", version, about = "Experiments for the complex Phi^4 model on the two-torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Gibbs invariance of the Wick Langevin dynamics.
    Invariance,
    /// Coupled γ → 0 sweep against the Schrödinger flow.
    Inviscid,
    /// Regularity scans of the stochastic objects and the remainder.
    Smoothing,
    /// Run one verification suite.
    Verify {
        /// kernels | counting | tensors | chaos | strichartz | smoothing | picard
        suite: String,
    },
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("usage error: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let name = match &cli.command {
        Command::Invariance => "invariance",
        Command::Inviscid => "inviscid",
        Command::Smoothing => "smoothing",
        Command::Verify { .. } => "verify",
    };
    let mut cfg = ExperimentConfig::defaults(name);
    match (&cli.config, &cli.command) {
        (Some(path), _) => {
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => return usage(format!("{}: {e}", path.display())),
            };
            if let Err(e) = cfg.apply(&text) {
                return usage(e);
            }
        }
        (None, Command::Verify { .. }) => {}
        (None, _) => return usage("--config <file> is required"),
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    let result: Result<CommandOutput, PhiError> = match &cli.command {
        Command::Invariance => cmd_invariance(&cfg),
        Command::Inviscid => cmd_inviscid(&cfg),
        Command::Smoothing => cmd_smoothing(&cfg),
        Command::Verify { suite } => match Suite::parse(suite) {
            Some(s) => cmd_verify(s, cfg.seed),
            None => return usage(format!("unknown suite {suite:?}")),
        },
    };
    let out = match result {
        Ok(o) => o,
        Err(PhiError::InvalidParameter(m)) => return usage(m),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let prov = Provenance::of(&cfg);
    match out.write(&cfg.out_dir, &prov, &cfg) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    for c in &out.checks {
        println!("{} {} measured={:.6e} bound={:.6e}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.measured, c.bound);
    }
    if out.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
