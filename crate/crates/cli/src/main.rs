//! Command-line front end: fly missions described by JSON configs and write
//! trajectory, bound, and commit reports.
//!
//! Exit codes: 0 success, 2 safety violation, 3 infeasible mission,
//! 4 solver or planner failure, 1 anything else (I/O, bad config).

use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tubegate_core::harness::{emit_reports, run_baseline, run_dual, RunConfig, RunReport};
use tubegate_core::Error;

#[derive(Parser)]
#[command(name = "tubegate", version, about = "Safe dual-control mission runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a mission from a JSON config and write reports into --out.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Mission configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Backup-only reference flight, the full dual-control mission, or a
    /// Monte Carlo batch of dual-control missions over consecutive seeds.
    #[arg(long, value_enum, default_value_t = Mode::Dual)]
    mode: Mode,
    /// Directory the reports are written into.
    #[arg(long)]
    out: PathBuf,
    /// Seed override; without it the config's seed is used.  `mc` runs
    /// seeds seed, seed+1, ...
    #[arg(long)]
    seed: Option<u64>,
    /// Number of missions in a Monte Carlo batch.
    #[arg(long, default_value_t = 20)]
    runs: usize,
    /// Replay planned trajectories as executed ones (idealized tracking),
    /// which makes the per-segment width predictions exact.
    #[arg(long)]
    strict_prop1: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Baseline,
    Dual,
    Mc,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run(args) = cli.command;
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(args: &RunArgs) -> Result<(), Error> {
    let cfg = RunConfig::from_file(&args.config)?;
    for warning in cfg.validate()? {
        eprintln!("warning: {warning}");
    }
    let seed = args.seed.unwrap_or(cfg.seed);
    match args.mode {
        Mode::Baseline => {
            let report = run_baseline(&cfg, seed, args.strict_prop1)?;
            emit_reports(&report, &args.out)?;
            print_summary(&report, &args.out);
        }
        Mode::Dual => {
            let report = run_dual(&cfg, seed, args.strict_prop1)?;
            emit_reports(&report, &args.out)?;
            print_summary(&report, &args.out);
        }
        Mode::Mc => run_mc(&cfg, seed, args.runs, args.strict_prop1, &args.out)?,
    }
    Ok(())
}

fn print_summary(report: &RunReport, out: &Path) {
    println!(
        "{} seed {}: cost {:.2} = {:.1}% of baseline {:.2} (budget {:.1}%)",
        report.mode,
        report.seed,
        report.total_cost,
        report.cost_percent,
        report.baseline_cost,
        100.0 * report.budget_fraction,
    );
    let widths: Vec<String> = report
        .initial_widths
        .iter()
        .zip(&report.final_widths)
        .zip(&report.width_reduction_percent)
        .map(|((i, f), r)| format!("{i:.3} -> {f:.3} (-{r:.1}%)"))
        .collect();
    println!("parameter widths: {}", widths.join(", "));
    if !report.commits.is_empty() {
        let count = |kind: &str| report.commits.iter().filter(|c| c.kind == kind).count();
        println!(
            "commits: {} ({} informative, {} conservative, {} terminal)",
            report.commits.len(),
            count("informative"),
            count("conservative"),
            count("terminal"),
        );
    }
    if let Some(slack) = report.prop1_min_slack {
        println!(
            "width prediction: min slack {slack:.3e} over {} segments",
            report.prop1_segments
        );
    }
    println!("reports written to {}", out.display());
}

/// One row of the Monte Carlo aggregate.
#[derive(Serialize)]
struct McSeedRow {
    seed: u64,
    total_cost: f64,
    baseline_cost: f64,
    cost_percent: f64,
    budget: f64,
    within_budget: bool,
    below_baseline: bool,
    width_reduction_percent: Vec<f64>,
}

#[derive(Serialize)]
struct McSummary {
    mode: String,
    first_seed: u64,
    runs: usize,
    strict_prop1: bool,
    /// Missions aborted by the free-space monitor.
    safety_violations: usize,
    all_within_budget: bool,
    runs_below_baseline: usize,
    mean_cost_percent: f64,
    mean_width_reduction_percent: Vec<f64>,
    seeds: Vec<McSeedRow>,
}

/// Run `runs` dual-control missions on consecutive seeds, spread over the
/// available cores, write per-seed reports under `out/seed_<n>/`, and an
/// aggregate `mc_summary.json`.  The first per-seed error (by seed order)
/// decides the exit code after the aggregate is written.
fn run_mc(cfg: &RunConfig, first_seed: u64, runs: usize, strict: bool, out: &Path) -> Result<(), Error> {
    if runs == 0 {
        return Err(Error::Config("a Monte Carlo batch needs at least one run".into()));
    }
    let workers = std::thread::available_parallelism()
        .map(NonZeroUsize::get)
        .unwrap_or(1)
        .min(runs);
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= runs {
                    break;
                }
                let seed = first_seed + i as u64;
                let result = run_dual(cfg, seed, strict);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut results: Vec<Option<Result<RunReport, Error>>> = (0..runs).map(|_| None).collect();
    for (i, result) in rx {
        results[i] = Some(result);
    }

    let mut rows = Vec::new();
    let mut first_error: Option<Error> = None;
    let mut violations = 0;
    for (i, slot) in results.into_iter().enumerate() {
        let seed = first_seed + i as u64;
        match slot.expect("every batch index is executed") {
            Ok(report) => {
                emit_reports(&report, &out.join(format!("seed_{seed}")))?;
                println!(
                    "seed {seed}: cost {:.1}% of baseline, widths -{:?}%",
                    report.cost_percent,
                    report
                        .width_reduction_percent
                        .iter()
                        .map(|r| (10.0 * r).round() / 10.0)
                        .collect::<Vec<_>>()
                );
                rows.push(McSeedRow {
                    seed,
                    total_cost: report.total_cost,
                    baseline_cost: report.baseline_cost,
                    cost_percent: report.cost_percent,
                    budget: report.budget,
                    within_budget: report.total_cost <= report.budget,
                    below_baseline: report.total_cost < report.baseline_cost,
                    width_reduction_percent: report.width_reduction_percent,
                });
            }
            Err(err) => {
                eprintln!("seed {seed}: {err}");
                if matches!(err, Error::SafetyViolation { .. }) {
                    violations += 1;
                }
                if first_error.is_none() {
                    first_error = Some(err);
                }
            }
        }
    }

    let axes = rows.first().map_or(0, |r| r.width_reduction_percent.len());
    let mean_reduction: Vec<f64> = (0..axes)
        .map(|a| rows.iter().map(|r| r.width_reduction_percent[a]).sum::<f64>() / rows.len() as f64)
        .collect();
    let summary = McSummary {
        mode: "mc".into(),
        first_seed,
        runs,
        strict_prop1: strict,
        safety_violations: violations,
        all_within_budget: !rows.is_empty() && rows.iter().all(|r| r.within_budget),
        runs_below_baseline: rows.iter().filter(|r| r.below_baseline).count(),
        mean_cost_percent: if rows.is_empty() {
            f64::NAN
        } else {
            rows.iter().map(|r| r.cost_percent).sum::<f64>() / rows.len() as f64
        },
        mean_width_reduction_percent: mean_reduction,
        seeds: rows,
    };
    std::fs::create_dir_all(out)?;
    let body = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(out.join("mc_summary.json"), body + "\n")?;
    println!(
        "mc batch: {}/{} below baseline, mean cost {:.1}%, summary in {}",
        summary.runs_below_baseline,
        summary.runs,
        summary.mean_cost_percent,
        out.display()
    );
    match first_error {
        Some(err) => Err(err),
        None => Ok(()),
    }
}
