//! Scenario runner for the de Sitter-Schwarzschild wave laboratory.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::checks::Criterion;
use crate::config::ScenarioConfig;
use crate::error::{CliError, Result};
use crate::output::{blob_hash, json_string, sha256_hex, CheckSummary, LedgerEntry, RunWriter};

#[derive(Debug, Parser)]
#[command(name = "dsswave", version, about = "Waves on de Sitter-Schwarzschild space")]
pub struct Cli {
    /// Scenario file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true, env = "DSSWAVE_THREADS")]
    pub threads: Option<usize>,
    /// Overrides `seed` of the scenario.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Horizon radii and surface gravities.
    Horizons,
    /// Time-domain evolution with probe, diagnostic and snapshot CSVs.
    Evolve,
    /// Resonance tables and strip scans.
    Resonances,
    /// Full acceptance battery.
    TheoremCheck,
    /// Chart invariants.
    ChartsVerify,
    /// Mellin round trip and contour shift.
    MellinVerify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Horizons => "horizons",
            Command::Evolve => "evolve",
            Command::Resonances => "resonances",
            Command::TheoremCheck => "theorem-check",
            Command::ChartsVerify => "charts-verify",
            Command::MellinVerify => "mellin-verify",
        }
    }
}

/// Configuration with the hash of its source bytes.
pub fn resolve_config(cli: &Cli) -> Result<(ScenarioConfig, String)> {
    let (mut cfg, input_hash) = match &cli.config {
        Some(path) => {
            let (cfg, bytes) = ScenarioConfig::load(path)?;
            (cfg, blob_hash(&bytes))
        }
        None => {
            let cfg = ScenarioConfig::default();
            let hash = blob_hash(json_string(&cfg)?.as_bytes());
            (cfg, hash)
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok((cfg, input_hash))
}

fn configure_threads(threads: Option<usize>) -> Result<usize> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("threads must be positive".into()));
        }
        // a pool built earlier in the same process is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

pub fn dispatch(command: Command, cfg: &ScenarioConfig, out: &mut RunWriter) -> Result<Vec<Criterion>> {
    match command {
        Command::Horizons => commands::horizons(cfg, out),
        Command::Evolve => commands::evolve(cfg, out),
        Command::Resonances => commands::resonances(cfg, out),
        Command::TheoremCheck => commands::theorem_check(cfg, out),
        Command::ChartsVerify => commands::charts_verify(cfg, out),
        Command::MellinVerify => commands::mellin_verify(cfg, out),
    }
}

pub fn print_criteria(criteria: &[Criterion]) {
    for c in criteria {
        println!("{} criterion {} {}", if c.passed { "PASS" } else { "FAIL" }, c.id, c.title);
        for f in c.failures() {
            let detail = match (f.value, f.limit) {
                (Some(v), Some(l)) => format!("{v:e} vs {l:e}"),
                _ => String::new(),
            };
            println!("     failed: {} {detail} {}", f.name, f.note);
        }
    }
}

/// Runs one command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let start = Instant::now();
    let (cfg, input_hash) = match resolve_config(&cli) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let prepared = configure_threads(cli.threads).and_then(|threads| {
        dsswave_core::FrequencyConvention::check()?;
        cfg.validate()?;
        let config_json = json_string(&cfg)?;
        let mut out = RunWriter::create(&cli.out)?;
        out.write("config.json", config_json.as_bytes())?;
        Ok((threads, sha256_hex(config_json.as_bytes()), out))
    });
    let (threads, config_hash, mut out) = match prepared {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let (code, criteria) = match dispatch(cli.command, &cfg, &mut out) {
        Ok(criteria) => {
            print_criteria(&criteria);
            let failed = criteria.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                let e = CliError::Acceptance { failed, total: criteria.len() };
                eprintln!("error: {e}");
                (e.exit_code(), criteria)
            } else {
                (0, criteria)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            (e.exit_code(), Vec::new())
        }
    };
    let entry = LedgerEntry {
        command: cli.command.name(),
        config_hash,
        input_hash,
        files: out.files(),
        checks: CheckSummary::of(&criteria),
        exit_code: code,
        threads,
        elapsed_s: start.elapsed().as_secs_f64(),
        config: &cfg,
    };
    if let Err(e) = out.append_ledger(&entry) {
        eprintln!("error: {e}");
        return if code == 0 { e.exit_code() } else { code };
    }
    code
}
