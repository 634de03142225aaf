//! Batch front end: parses a TOML config, runs one seeded experiment, and
//! writes CSV artifacts.  Exit codes: 0 on success, 2 on configuration or
//! data-format errors, 3 on numerical failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use labormatch::experiments::{
    production_name, run_confint, run_estimate, run_figures, run_simulate, run_tables, spec_name,
    ConfintData, Scale,
};
use labormatch::{Config, Result};

#[derive(Parser)]
#[command(
    name = "labormatch",
    version,
    about = "Two-sided matching market with schooling choice: simulation, estimation, and inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate matched markets; writes matches[_NNNN].csv and workers[_NNNN].csv
    Simulate(CommonArgs),
    /// Replicate estimation with bootstrap intervals; writes estimates.csv
    Estimate(CommonArgs),
    /// Invert the matching test into a confidence set for the friction
    /// parameter; writes confint[_NNNN].csv and region[_NNNN].csv
    #[command(name = "confint-beta")]
    ConfintBeta(ConfintArgs),
    /// Sweep the friction grid at two production scales; writes figures.csv
    Figures(CommonArgs),
    /// Coverage/length study over model specifications; writes tables.csv
    Tables(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Root seed; every random stream derives from it
    #[arg(long, value_name = "N", default_value_t = 42)]
    seed: u64,

    /// Replications, where the subcommand supports them
    #[arg(long, value_name = "N", default_value_t = 1)]
    reps: usize,

    /// Output directory for CSV files
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Worker threads; 0 uses every core
    #[arg(long, value_name = "N", default_value_t = 0)]
    jobs: usize,

    /// Replication-count preset: "paper" runs counts as configured, "quick"
    /// caps them for desk-scale runtimes
    #[arg(long, value_name = "SCALE", default_value = "paper")]
    scale: String,
}

#[derive(Args)]
struct ConfintArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Observed matches CSV (as written by simulate); runs once on the data
    /// instead of simulating replications
    #[arg(long, value_name = "PATH", requires = "covariates")]
    data: Option<PathBuf>,

    /// Worker covariates CSV accompanying --data
    #[arg(long, value_name = "PATH", requires = "data")]
    covariates: Option<PathBuf>,

    /// Hold the payoff parameters at their configured values instead of
    /// re-estimating them per candidate
    #[arg(long)]
    theta_known: bool,
}

impl CommonArgs {
    fn load(&self) -> Result<Config> {
        let mut cfg = Config::load(&self.config)?;
        let scale: Scale = self.scale.parse()?;
        scale.apply(&mut cfg);
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = args.load()?;
            let summaries = run_simulate(&cfg, args.seed, args.jobs, args.reps, &args.out)?;
            for s in &summaries {
                println!(
                    "replication {}: education share {:.4}, fixed point {:.4}, gini {:.4}",
                    s.replication, s.stats.edu_share, s.p_star, s.stats.gini
                );
            }
            println!(
                "wrote {} market(s) to {}",
                summaries.len(),
                args.out.display()
            );
        }
        Command::Estimate(args) => {
            let cfg = args.load()?;
            let rows = run_estimate(&cfg, args.seed, args.jobs, args.reps, &args.out)?;
            let done = rows.iter().filter(|r| r.covered.is_some()).count();
            let covered = rows.iter().filter(|r| r.covered == Some(true)).count();
            println!(
                "estimates.csv: {} replication(s), {} interval(s), {} covered the true contrast",
                rows.len(),
                done,
                covered
            );
        }
        Command::ConfintBeta(args) => {
            let cfg = args.common.load()?;
            let data = match (&args.data, &args.covariates) {
                (Some(matches), Some(covariates)) => Some(ConfintData {
                    matches: matches.clone(),
                    covariates: covariates.clone(),
                }),
                _ => None,
            };
            let reps = run_confint(
                &cfg,
                args.common.seed,
                args.common.jobs,
                args.common.reps,
                &args.common.out,
                data.as_ref(),
                args.theta_known,
            )?;
            for rep in &reps {
                let region: Vec<String> = rep.region().iter().map(|b| format!("{b}")).collect();
                println!(
                    "replication {}: accepted {{{}}}",
                    rep.replication,
                    region.join(", ")
                );
            }
        }
        Command::Figures(args) => {
            let cfg = args.load()?;
            let rows = run_figures(&cfg, args.seed, args.jobs, &args.out)?;
            println!(
                "figures.csv: {} rows across {} friction values",
                rows.len(),
                rows.len() / 2
            );
        }
        Command::Tables(args) => {
            let cfg = args.load()?;
            let rows = run_tables(&cfg, args.seed, args.jobs, &args.out)?;
            for row in &rows {
                let coverage = row.coverage.map_or("NA".to_string(), |c| format!("{c:.4}"));
                let length = row
                    .mean_length
                    .map_or("NA".to_string(), |l| format!("{l:.4}"));
                println!(
                    "{}/{} beta0={} n={}: coverage {}, mean length {}, {} failure(s)",
                    spec_name(row.outside),
                    production_name(row.production),
                    row.beta0,
                    row.n,
                    coverage,
                    length,
                    row.failures
                );
            }
        }
    }
    Ok(())
}
