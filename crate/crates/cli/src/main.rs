//! Command-line runner for the bundled and user-supplied experiment configs.

mod config;
mod manifest;
mod pipeline;
mod scenarios;

use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use manifest::{checksum, sha256_hex, RunManifest};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "mgspde", version, about = "Reproducible experiments for SPDEs on metric graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config file or a bundled scenario by name.
    Run {
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Output root; results go to <out>/<scenario>/.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List bundled scenarios.
    List,
    /// Parse and check a config without running it.
    Validate { config: String },
}

fn load(arg: &str) -> Result<(String, ExperimentConfig), String> {
    let text = match scenarios::find(arg) {
        Some(t) if !std::path::Path::new(arg).exists() => t.to_string(),
        _ => std::fs::read_to_string(arg).map_err(|e| format!("cannot read {arg}: {e}"))?,
    };
    let cfg = ExperimentConfig::parse(&text)?;
    Ok((text, cfg))
}

fn run(arg: &str, seed: Option<u64>, workers: Option<usize>, out: Option<PathBuf>) -> Result<bool, String> {
    let (_, mut cfg) = load(arg)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    if let Some(o) = out {
        cfg.out = o.to_string_lossy().into_owned();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build().map_err(|e| format!("worker pool: {e}"))?;
    let dir = PathBuf::from(&cfg.out).join(&cfg.scenario);
    let start = Instant::now();
    let summary = pool.install(|| pipeline::execute(&cfg, &dir)).map_err(|e| format!("runtime error in {e}"))?;
    let mut outputs = Vec::new();
    for f in summary.outputs.iter().chain(std::iter::once(&"summary.json".to_string())) {
        outputs.push(checksum(&dir.join(f)).map_err(|e| format!("checksum {f}: {e}"))?);
    }
    let effective = toml::to_string(&cfg).map_err(|e| e.to_string())?;
    let manifest = RunManifest {
        scenario: cfg.scenario.clone(),
        config_hash: sha256_hex(effective.as_bytes()),
        seed: cfg.seed,
        workers: pool.current_num_threads(),
        versions: [("mgspde".to_string(), env!("CARGO_PKG_VERSION").to_string())].into_iter().collect(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        outputs,
    };
    let m = serde_json::to_string_pretty(&manifest).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("manifest.json"), m + "\n").map_err(|e| e.to_string())?;
    println!("[{}] {} (check {}): {}", if summary.pass { "PASS" } else { "FAIL" }, summary.scenario, summary.criterion, summary.detail);
    println!("outputs in {}", dir.display());
    Ok(summary.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            println!("{:<26} {:>5}  description", "scenario", "check");
            for (name, c, d) in scenarios::table() {
                println!("{name:<26} {c:>5}  {d}");
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load(&config) {
            Ok((_, c)) => {
                println!("ok: {} (check {}, audit {:?})", c.scenario, c.criterion, c.audit.kind);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(1)
            }
        },
        Command::Run { config, seed, workers, out } => match run(&config, seed, workers, out) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(2),
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(1)
            }
        },
    }
}
