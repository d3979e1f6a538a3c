//! `apnft`: run, fuzz, replay and audit asset proxy NFT scenarios.
//!
//! Exit codes: 0 clean, 1 audit violation or replay divergence, 2 input
//! that does not parse (or output that cannot be written).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use apnft_core::audit::audit_snapshot;
use apnft_core::scenario::fuzz::{fuzz, FuzzConfig, Mix};
use apnft_core::scenario::{replay, Injection, ReplayOutcome, RunOptions, Scenario};
use apnft_core::sync::CrashPoint;
use apnft_core::{run_scenario, AuditReport};
use clap::{Parser, Subcommand};

const DEFAULT_OUT: &str = "apnft-out";

#[derive(Parser)]
#[command(name = "apnft", version, about = "Asset proxy NFT scenario runner")]
struct Cli {
    /// Run independent fuzz scenarios on worker threads. Results are merged
    /// in scenario order, so output is unchanged.
    #[arg(long, global = true)]
    parallel_assets: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario file and write its trace, report and snapshot.
    Run {
        file: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Crash injection, e.g. `14:xchain.after_source_locked`. Repeatable.
        #[arg(long = "inject", value_name = "STEP:POINT", value_parser = parse_injection)]
        injections: Vec<Injection>,
        #[arg(long, env = "APNFT_OUT", default_value = DEFAULT_OUT)]
        out: PathBuf,
    },
    /// Generate and run random scenarios, with and without crash injection.
    Fuzz {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        seed: u64,
        /// Weights such as `xchain=5,trade=2,hidden=3`.
        #[arg(long)]
        mix: Option<String>,
        #[arg(long, env = "APNFT_OUT", default_value = DEFAULT_OUT)]
        out: PathBuf,
    },
    /// Re-execute a trace and compare it line by line.
    Replay { trace: PathBuf },
    /// Audit a world snapshot.
    Audit {
        snapshot: PathBuf,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn parse_injection(s: &str) -> Result<Injection, String> {
    let (step, point) = s
        .split_once(':')
        .ok_or_else(|| format!("expected STEP:POINT, got {s:?}"))?;
    let step = step
        .parse()
        .map_err(|e| format!("bad step {step:?}: {e}"))?;
    let point: CrashPoint = point.parse().map_err(|e| format!("{e}"))?;
    Ok(Injection { step, point })
}

enum Status {
    Clean,
    Failed,
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(
    file: &Path,
    seed: Option<u64>,
    injections: Vec<Injection>,
    out: &Path,
) -> Result<Result<Status, String>> {
    let bytes = match read(file) {
        Ok(b) => b,
        Err(e) => return Ok(Err(e)),
    };
    let scenario = match Scenario::parse(&bytes) {
        Ok(s) => s,
        Err(e) => return Ok(Err(format!("{}: {e}", file.display()))),
    };
    if let Some(bad) = injections.iter().find(|i| i.step >= scenario.steps.len()) {
        return Ok(Err(format!(
            "injection at step {} but scenario has {} steps",
            bad.step,
            scenario.steps.len()
        )));
    }
    let opts = RunOptions {
        seed,
        injections,
        audit_each_tx: true,
        ..RunOptions::default()
    };
    let outcome = run_scenario(&scenario, &opts);

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(out, "trace.jsonl", outcome.trace.to_lines())?;
    write(out, "report.json", outcome.report.to_json())?;
    write(out, "report.txt", outcome.report.to_table())?;
    write(out, "snapshot.json", outcome.world.snapshot())?;
    if !outcome.persisted.is_empty() {
        let crashes = out.join("crashes");
        fs::create_dir_all(&crashes)?;
        for p in &outcome.persisted {
            let stem = format!("step-{}-{}", p.step, p.point);
            write(&crashes, &format!("{stem}.snapshot.json"), &p.snapshot)?;
            write(&crashes, &format!("{stem}.journal.jsonl"), &p.journal)?;
        }
    }

    let entries = &outcome.trace.entries;
    let crashes = entries
        .iter()
        .filter(|e| e.crash.as_ref().is_some_and(|c| c.fired))
        .count();
    let recovery_failures: Vec<_> = entries
        .iter()
        .filter_map(|e| e.crash.as_ref())
        .flat_map(|c| c.post_recovery_failures.iter())
        .collect();
    println!(
        "{}: {} steps, {} crashes recovered, {} transaction audits",
        scenario.name,
        entries.len(),
        crashes,
        outcome.tx_audits
    );
    print!("{}", outcome.report.to_table());
    for v in &outcome.tx_violations {
        println!(
            "after transaction: {} {} {}",
            v.check.name(),
            v.subject,
            v.detail
        );
    }
    for f in &recovery_failures {
        println!("after recovery: {f}");
    }
    println!("output: {}", out.display());
    let clean = outcome.report.is_clean()
        && outcome.tx_violations.is_empty()
        && recovery_failures.is_empty();
    Ok(Ok(if clean { Status::Clean } else { Status::Failed }))
}

fn run_fuzz(
    n: u64,
    seed: u64,
    mix: Option<&str>,
    parallel: bool,
    out: &Path,
) -> Result<Result<Status, String>> {
    let mix = match mix.map(Mix::parse).transpose() {
        Ok(m) => m.unwrap_or_default(),
        Err(e) => return Ok(Err(format!("--mix: {e}"))),
    };
    let mut cfg = FuzzConfig::new(n, seed);
    cfg.mix = mix;
    cfg.parallel = parallel;
    let summary = fuzz(&cfg);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(out, "fuzz_summary.json", summary.to_json())?;
    print!("{}", summary.to_text());
    println!("output: {}", out.display());
    Ok(Ok(if summary.total_violations == 0 {
        Status::Clean
    } else {
        Status::Failed
    }))
}

fn run_replay(trace: &Path) -> Result<Status, String> {
    let bytes = read(trace)?;
    let text = String::from_utf8(bytes).map_err(|e| format!("{}: {e}", trace.display()))?;
    match replay(&text).map_err(|e| format!("{}: {e}", trace.display()))? {
        ReplayOutcome::Match { lines } => {
            println!("match: {lines} lines");
            Ok(Status::Clean)
        }
        ReplayOutcome::Divergent {
            line,
            original,
            replayed,
        } => {
            println!("divergence at line {line}");
            println!("  original: {original}");
            println!("  replayed: {replayed}");
            Ok(Status::Failed)
        }
    }
}

fn run_audit(snapshot: &Path, json: bool) -> Result<Status, String> {
    let bytes = read(snapshot)?;
    let report: AuditReport =
        audit_snapshot(&bytes).map_err(|e| format!("{}: {e}", snapshot.display()))?;
    if json {
        println!("{}", String::from_utf8_lossy(&report.to_json()));
    } else {
        print!("{}", report.to_table());
    }
    Ok(if report.is_clean() {
        Status::Clean
    } else {
        Status::Failed
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            file,
            seed,
            injections,
            out,
        } => run(&file, seed, injections, &out),
        Command::Fuzz { n, seed, mix, out } => {
            run_fuzz(n, seed, mix.as_deref(), cli.parallel_assets, &out)
        }
        Command::Replay { trace } => Ok(run_replay(&trace)),
        Command::Audit { snapshot, json } => Ok(run_audit(&snapshot, json)),
    };
    match result {
        Ok(Ok(Status::Clean)) => ExitCode::SUCCESS,
        Ok(Ok(Status::Failed)) => ExitCode::from(1),
        Ok(Err(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
