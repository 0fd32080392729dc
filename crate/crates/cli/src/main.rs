//! `relent`: run verification suites and experiments from a config file.

mod config;
mod tasks;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use config::{ConfigError, Diagnostic, TaskKind};
use tasks::TaskOutput;

#[derive(Parser, Debug)]
#[command(name = "relent", version, about = "Relative entropy and time reversal for lattice spin dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML, or JSON if the name ends in .json)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the parallel kernels (default: all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (overrides output.dir)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Rate conditions and invariant suites
    Check,
    /// Exact trajectory with entropy columns
    Evolve,
    /// Windowed entropy functionals g^n, g~^n, s_n, S_n
    Entropy,
    /// Emit the time-reversed rate family
    Reverse,
    /// Gillespie ensemble and attractor residuals
    Simulate,
}

impl Command {
    fn kind(self) -> TaskKind {
        match self {
            Command::Check => TaskKind::Check,
            Command::Evolve => TaskKind::Evolve,
            Command::Entropy => TaskKind::Entropy,
            Command::Reverse => TaskKind::Reverse,
            Command::Simulate => TaskKind::Simulate,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    use relent_core::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Capacity(_)) => 3,
        Some(E::Contract(_) | E::Numeric(_) | E::Division { .. } | E::NonUnique(_) | E::Degenerate(_) | E::InsufficientData(_)) => 4,
        Some(E::Domain(_) | E::Geometry(_) | E::Format(_) | E::Unsupported(_)) => 2,
        None => 1,
    }
}

fn write_outputs(dir: &Path, kind: TaskKind, cli: &Cli, config_text: &str, seed: u64, out: &TaskOutput) -> Result<bool> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let passed = out.checks.iter().all(|c| c.passed || !c.required);
    let checks: Vec<_> = out
        .checks
        .iter()
        .map(|c| {
            json!({
                "name": c.name,
                "required": c.required,
                "passed": c.passed,
                "value": c.value.is_finite().then_some(c.value),
                "tolerance": c.tolerance,
                "detail": c.detail,
            })
        })
        .collect();
    let summary = serde_json::to_string_pretty(&json!({ "task": kind.name(), "passed": passed, "checks": checks }))?;
    let mut files: Vec<(String, String)> = out.files.clone();
    files.push(("summary.json".into(), summary + "\n"));
    let mut listed = Vec::new();
    for (name, body) in &files {
        let path = dir.join(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        listed.push(json!({ "file": name, "sha256": sha256_hex(body.as_bytes()), "bytes": body.len() }));
    }
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = json!({
        "tool": "relent",
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": relent_core::VERSION,
        "task": kind.name(),
        "config": cli.config.as_ref().map(|p| p.display().to_string()),
        "config_sha256": sha256_hex(config_text.as_bytes()),
        "seed": seed,
        "workers": rayon::current_num_threads(),
        "timestamp_unix": timestamp,
        "outputs": listed,
    });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(passed)
}

fn run(cli: &Cli) -> Result<bool> {
    let kind = cli.command.kind();
    let Some(path) = &cli.config else {
        return Err(ConfigError::field("--config", "a configuration file is required").into());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(vec![Diagnostic { line: None, field: "--config".into(), message: format!("{}: {e}", path.display()) }]))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let json = path.extension().is_some_and(|e| e == "json");
    let mut cfg = config::validate(&text, base, json, Some(kind)).map_err(ConfigError)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let dir = match (&cli.out, &cfg.output) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => base.join(d),
        (None, None) => return Err(ConfigError::field("output.dir", "required field is missing (or pass --out)").into()),
    };
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(ConfigError::field("--workers", "must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().context("configuring the worker pool")?;
    }
    let model = tasks::build_model(&cfg)?;
    let out = tasks::run(kind, &model, &cfg)?;
    for c in &out.checks {
        let mark = if c.passed { "ok  " } else if c.required { "FAIL" } else { "info" };
        eprintln!("{mark} {:<28} {:>24} {}", c.name, tasks::num(c.value), c.detail);
    }
    write_outputs(&dir, kind, cli, &text, cfg.seed, &out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some required checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
