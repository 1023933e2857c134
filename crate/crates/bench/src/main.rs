use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use surropt::sim::testbed_catalog;
use surropt_bench::approx::{approx_compare, approx_table_csv, ApproxCompareSpec};
use surropt_bench::battery::{run_battery, Identity};
use surropt_bench::experiment::run_experiment;
use surropt_bench::registry::{algorithm_summary, ALGORITHM_IDS};
use surropt_bench::spec::ExperimentSpec;

#[derive(Parser)]
#[command(name = "surropt", version, about = "Surrogate-based simulation optimization experiments")]
struct Cli {
    /// Replace the seed list (optimize) or the seed (approx-compare, selfcheck).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` in experiment specs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for experiment cells.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Set a config key before validation, e.g. `budget=500` or
    /// `algorithms.0.config.alpha=0.1`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) cell of an experiment spec.
    Optimize { config: PathBuf },
    /// Compare low-rank posteriors against the exact posterior.
    ApproxCompare { config: PathBuf },
    /// Run the numerical identity battery.
    Selfcheck {
        /// Negative control: bump the named identity's implementation side.
        #[arg(long, value_name = "IDENTITY", hide = true)]
        perturb: Vec<Identity>,
    },
    /// List the bundled testbed models.
    ListModels,
    /// List algorithm identifiers.
    ListAlgorithms,
}

fn optimize(cli: &Cli, config: &PathBuf) -> Result<bool> {
    let mut spec = ExperimentSpec::from_path(config, &cli.overrides)?;
    if let Some(seed) = cli.seed {
        spec.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        spec.output_dir = out.clone();
    }
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let bundle = run_experiment(&spec, workers)?;
    println!("{}", bundle.directory.display());
    for s in &bundle.summary {
        let gap = s.gap_mean.map_or_else(|| "n/a".to_string(), |g| format!("{g:.4e}"));
        println!(
            "{:<8} runs {:>3}  failed {:>3}  truncated {:>3}  mean gap {}",
            s.algorithm, s.runs, s.failures, s.truncated, gap
        );
    }
    let failures = bundle.failures();
    if failures > 0 {
        eprintln!("{failures} of {} cells failed", bundle.cells.len());
    }
    Ok(failures == 0)
}

fn approx(cli: &Cli, config: &PathBuf) -> Result<bool> {
    let mut spec = ApproxCompareSpec::from_path(config, &cli.overrides)?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let table = approx_table_csv(&approx_compare(&spec)?);
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join("approx.csv");
            fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
            println!("{}", path.display());
        }
        None => print!("{table}"),
    }
    Ok(true)
}

fn selfcheck(cli: &Cli, perturb: &[Identity]) -> Result<bool> {
    let reports = run_battery(cli.seed.unwrap_or(0), perturb)?;
    for r in &reports {
        println!("{}", r.line());
    }
    Ok(reports.iter().all(|r| r.passed))
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Optimize { config } => optimize(cli, config),
        Command::ApproxCompare { config } => approx(cli, config),
        Command::Selfcheck { perturb } => selfcheck(cli, perturb),
        Command::ListModels => {
            for m in testbed_catalog() {
                let truth = m.ground_truth().map_or_else(String::new, |g| format!("  max {:.6} at {:?}", g.max, g.argmax));
                println!("{:<16} d={}{truth}", m.name(), m.dimension());
            }
            Ok(true)
        }
        Command::ListAlgorithms => {
            for id in ALGORITHM_IDS {
                println!("{id:<8} {}", algorithm_summary(id));
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
