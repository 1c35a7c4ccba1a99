use std::ops::Range;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dagbft::export::{dag_to_dot, write_run};
use dagbft::harness::{run_with, RunOptions};
use dagbft::scenario::Scenario;
use dagbft::sweep::{fuzz, oracle_sweep};

#[derive(Parser)]
#[command(name = "dagbft", version, about = "Deterministic DAG mempool and ordering simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artefacts.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a scenario over a seed range and report property violations.
    Fuzz {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_parser = parse_range)]
        seeds: Range<u64>,
    },
    /// Compare incremental ordering with the one-shot oracle on random DAGs.
    OracleCheck {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_parser = parse_range)]
        seeds: Range<u64>,
        #[arg(long, default_value_t = 20)]
        permutations: usize,
        #[arg(long, default_value_t = 30)]
        rounds: u64,
    },
    /// Print the DAG seen by the first honest replica up to a round.
    ExportDot {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        at_round: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// "A..B" (exclusive) or a single seed.
fn parse_range(s: &str) -> Result<Range<u64>, String> {
    match s.split_once("..") {
        Some((a, b)) => {
            let a: u64 = a.parse().map_err(|e| format!("{e}"))?;
            let b: u64 = b.parse().map_err(|e| format!("{e}"))?;
            if a >= b {
                return Err("empty seed range".into());
            }
            Ok(a..b)
        }
        None => s.parse::<u64>().map(|a| a..a + 1).map_err(|e| format!("{e}")),
    }
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<Scenario> {
    let s = Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(match seed {
        Some(seed) => s.with_seed(seed),
        None => s,
    })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { scenario, seed, out } => {
            let s = load(&scenario, seed)?;
            let report = run_with(&s, RunOptions::default());
            write_run(&report, &out).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "{} seed={} stop={:?} time={}ms events={} settled={} min_committed_round={}",
                report.scenario,
                report.seed,
                report.stop,
                report.end_time,
                report.events,
                report.all_settled(),
                report.min_committed_round()
            );
            for v in &report.violations {
                println!("violation {:?} at {}: {}", v.property, v.time, v.detail);
            }
            if !report.is_safe() {
                bail!("{} violations", report.violations.len());
            }
        }
        Command::Fuzz { scenario, seeds } => {
            let s = load(&scenario, None)?;
            let results = fuzz(&s, seeds);
            println!("seed,byzantine,violations,settled,min_committed_round");
            for r in &results {
                println!("{}", r.to_line());
            }
            let bad = results.iter().filter(|r| !r.violated.is_empty()).count();
            println!("{} seeds, {bad} with violations", results.len());
            if bad > 0 {
                bail!("{bad} seeds violated safety");
            }
        }
        Command::OracleCheck { scenario, seeds, permutations, rounds } => {
            let s = load(&scenario, None)?;
            let n = seeds.end - seeds.start;
            let results = oracle_sweep(seeds, s.n, rounds, permutations);
            let mut failed = 0;
            for r in &results {
                if let Err(m) = r {
                    failed += 1;
                    println!("seed {} permutation {}: oracle {} anchors, incremental {}", m.seed, m.permutation, m.expected, m.got);
                }
            }
            let anchors: usize = results.iter().filter_map(|r| r.as_ref().ok()).sum();
            println!("{n} DAGs x {permutations} orders, {anchors} anchors committed, {failed} mismatches");
            if failed > 0 {
                bail!("{failed} mismatches");
            }
        }
        Command::ExportDot { scenario, at_round, seed } => {
            let s = load(&scenario, seed)?;
            let report = run_with(&s, RunOptions { stop_at_round: Some(at_round) });
            print!("{}", dag_to_dot(&report.dag, &report.schedule, &report.committed, Some(at_round)));
        }
    }
    Ok(())
}
