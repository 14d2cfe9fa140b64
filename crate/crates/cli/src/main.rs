//! `skewlab`: runs one experiment from a scenario file and writes a JSON
//! report plus CSV tables.
//!
//! Exit status: 0 when every check passes, 1 when a check fails, 2 for an
//! invalid configuration or a refused precondition, 3 when a search or
//! enumeration hits its cap or finds nothing.

// NaN must fail the range checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use commands::Outcome;
use config::{Config, Invalid};

#[derive(Parser)]
#[command(name = "skewlab", version, about = "Experiments on step skew-products with circle fibers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: skewlab-out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    grid: Option<usize>,
    #[arg(long, global = true)]
    cap: Option<usize>,
    #[arg(long, global = true)]
    tolerance: Option<f64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Fit the covering constants and check accessibility.
    VerifyAxioms,
    /// Re-verify the transition coverings of a horseshoe.
    Covering,
    /// Sample finite-time fiber exponents.
    Lyapunov,
    /// Build and validate a skeleton.
    Skeleton,
    /// Build a horseshoe and check it.
    Horseshoe,
    /// Build an exponent-flip horseshoe and check it.
    Flip,
    /// Fixed points of a composed fiber map.
    Twin,
    /// Estimate K2 over blending intervals.
    K2,
    /// Entropy bounds of a horseshoe.
    EntropyBounds,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::VerifyAxioms => "verify-axioms",
            Command::Covering => "covering",
            Command::Lyapunov => "lyapunov",
            Command::Skeleton => "skeleton",
            Command::Horseshoe => "horseshoe",
            Command::Flip => "flip",
            Command::Twin => "twin",
            Command::K2 => "k2",
            Command::EntropyBounds => "entropy-bounds",
        }
    }
}

const PASS: u8 = 0;
const FAIL: u8 = 1;
const INVALID: u8 = 2;
const CAPPED: u8 = 3;

fn status_name(code: u8) -> &'static str {
    match code {
        PASS => "pass",
        FAIL => "fail",
        INVALID => "invalid",
        _ => "capped",
    }
}

fn error_code(e: &skewlab::Error) -> u8 {
    use skewlab::Error::*;
    match e {
        Input(_) | Precondition(_) => INVALID,
        Resource(_) | NotFound(_) | Construction(_) => CAPPED,
    }
}

fn resolve(cli: &Cli) -> Result<Config, Invalid> {
    let path = cli.config.as_ref().ok_or_else(|| Invalid("--config: a scenario file is required".into()))?;
    let mut cfg = Config::load(path)?;
    if let Some(v) = cli.seed {
        cfg.run.seed = v;
    }
    if let Some(v) = cli.grid {
        cfg.run.grid = v;
    }
    if let Some(v) = cli.cap {
        cfg.run.cap = v;
    }
    if let Some(v) = cli.tolerance {
        cfg.run.tolerance = v;
    }
    cfg.validate(cli.command.name())?;
    Ok(cfg)
}

fn dispatch(cmd: Command, cfg: &Config) -> Result<Outcome, skewlab::Error> {
    let sys = cfg.system().map_err(|e| skewlab::Error::Input(e.0))?;
    match cmd {
        Command::VerifyAxioms => commands::verify_axioms_cmd(&sys, cfg),
        Command::Covering => commands::covering(&sys, cfg),
        Command::Lyapunov => commands::lyapunov(&sys, cfg),
        Command::Skeleton => commands::skeleton(&sys, cfg),
        Command::Horseshoe => commands::horseshoe(&sys, cfg),
        Command::Flip => commands::flip(&sys, cfg),
        Command::Twin => commands::twin(&sys, cfg),
        Command::K2 => commands::k2(&sys, cfg),
        Command::EntropyBounds => commands::entropy_bounds_cmd(&sys, cfg),
    }
}

fn write_json(path: &Path, v: &Value) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(v).expect("json");
    text.push('\n');
    std::fs::write(path, text)
}

fn write_outputs(dir: &Path, report: &Value, outcome: Option<&Outcome>) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("report.json"), report)?;
    let Some(o) = outcome else { return Ok(()) };
    for t in &o.tables {
        let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", t.name)))?;
        w.write_record(t.header)?;
        for r in &t.rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    for (name, v) in &o.files {
        write_json(&dir.join(format!("{name}.json")), v)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = cli.command.name();
    let header = |config: Value, code: u8| {
        json!({
            "tool": "skewlab",
            "version": env!("CARGO_PKG_VERSION"),
            "command": cmd,
            "status": status_name(code),
            "exit_code": code,
            "config": config,
        })
    };
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(Invalid(msg)) => {
            eprintln!("skewlab {cmd}: invalid configuration: {msg}");
            return ExitCode::from(INVALID);
        }
    };
    let out_dir =
        cli.out.clone().or_else(|| cfg.out.clone().map(PathBuf::from)).unwrap_or_else(|| "skewlab-out".into());
    let config = serde_json::to_value(&cfg).expect("config serializes");
    let (code, report, outcome) = match dispatch(cli.command, &cfg) {
        Ok(o) => {
            let failed = o.checks.iter().any(|c| !c.pass);
            let code = if failed {
                FAIL
            } else if o.capped {
                CAPPED
            } else {
                PASS
            };
            let mut r = header(config, code);
            r["checks"] = serde_json::to_value(&o.checks).expect("checks");
            r["result"] = o.result.clone();
            (code, r, Some(o))
        }
        Err(e) => {
            let code = error_code(&e);
            eprintln!("skewlab {cmd}: {e}");
            let mut r = header(config, code);
            r["error"] = json!(e.to_string());
            (code, r, None)
        }
    };
    if let Err(e) = write_outputs(&out_dir, &report, outcome.as_ref()) {
        eprintln!("skewlab {cmd}: cannot write to {}: {e}", out_dir.display());
        return ExitCode::from(INVALID);
    }
    if let Some(o) = &outcome {
        for c in &o.checks {
            println!("{:<32} {}", c.name, if c.pass { "pass" } else { "FAIL" });
        }
    }
    println!("{cmd}: {} (report in {})", status_name(code), out_dir.display());
    ExitCode::from(code)
}
