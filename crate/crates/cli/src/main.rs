//! `migband`: energy-minimal migration bandwidth schedules from the command line.
//!
//! Exit codes: 0 on success, 2 when the instance is infeasible, 1 on any
//! other error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{QSetting, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "migband",
    version,
    about = "Energy-minimal bandwidth schedules for VM live migration"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in scenario.
    #[arg(long, global = true, value_parser = ["3g", "4g", "wifi"])]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct PartitionArgs {
    /// Pre-copy rounds; omit to search the round count.
    #[arg(long)]
    i_max: Option<usize>,
    /// Updated pre-copy rates: a count or "full".
    #[arg(long)]
    q: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Energy-minimal schedule for one instance.
    Solve {
        #[command(flatten)]
        partition: PartitionArgs,
    },
    /// Xen vs BMOP vs TCBM under Xen-matched constraints.
    Compare {
        /// Comma-separated Xen round counts.
        #[arg(long, value_delimiter = ',')]
        xen_rounds: Option<Vec<usize>>,
        #[arg(long)]
        q: Option<String>,
        /// Dirty rate as a fraction of the rate cap.
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        r_max_xen: Option<f64>,
        /// Rate cap for the optimised managers.
        #[arg(long)]
        r_hat: Option<f64>,
    },
    /// Online tracker over a parameter timeline.
    Track {
        /// fig45a..c (dirty-rate steps) or fig46a..c (power-constant steps).
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        a_max: Option<f64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[command(flatten)]
        partition: PartitionArgs,
    },
    /// Energy of every manager on the application workloads.
    Sweep {
        #[arg(long)]
        i_max_xen: Option<usize>,
    },
    /// Brute-force grid check of the solver.
    Oracle {
        #[command(flatten)]
        partition: PartitionArgs,
        /// Grid points per optimised rate.
        #[arg(long)]
        grid: Option<usize>,
        /// Check this many seeded random instances instead.
        #[arg(long)]
        random: Option<usize>,
    },
}

fn apply_partition(cfg: &mut RunConfig, p: &PartitionArgs) -> Result<()> {
    if p.i_max.is_some() {
        cfg.partition.i_max = p.i_max;
    }
    if let Some(q) = &p.q {
        cfg.partition.q = Some(QSetting::parse_flag(q)?);
    }
    Ok(())
}

fn merged_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let c = &cli.common;
    if c.preset.is_some() {
        cfg.preset = c.preset.clone();
    }
    if c.out.is_some() {
        cfg.run.out = c.out.clone();
    }
    if c.seed.is_some() {
        cfg.run.seed = c.seed;
    }
    if c.jobs.is_some() {
        cfg.run.jobs = c.jobs;
    }
    match &cli.command {
        Command::Solve { partition } => apply_partition(&mut cfg, partition)?,
        Command::Compare {
            xen_rounds,
            q,
            ratio,
            r_max_xen,
            r_hat,
        } => {
            if xen_rounds.is_some() {
                cfg.compare.xen_rounds = xen_rounds.clone();
            }
            if let Some(q) = q {
                cfg.partition.q = Some(QSetting::parse_flag(q)?);
            }
            cfg.compare.ratio = ratio.or(cfg.compare.ratio);
            cfg.compare.r_max_xen = r_max_xen.or(cfg.compare.r_max_xen);
            cfg.compare.r_hat = r_hat.or(cfg.compare.r_hat);
        }
        Command::Track {
            profile,
            a_max,
            horizon,
            partition,
        } => {
            if profile.is_some() {
                cfg.tracker.profile = profile.clone();
            }
            cfg.tracker.a_max = a_max.or(cfg.tracker.a_max);
            cfg.tracker.horizon = horizon.or(cfg.tracker.horizon);
            apply_partition(&mut cfg, partition)?;
        }
        Command::Sweep { i_max_xen } => {
            cfg.sweep.i_max_xen = i_max_xen.or(cfg.sweep.i_max_xen);
        }
        Command::Oracle {
            partition,
            grid,
            random,
        } => {
            apply_partition(&mut cfg, partition)?;
            cfg.oracle.grid_points = grid.or(cfg.oracle.grid_points);
            cfg.oracle.random = random.or(cfg.oracle.random);
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = merged_config(cli)?;
    if let Some(jobs) = cfg.run.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("starting worker pool")?;
    }
    match cli.command {
        Command::Sweep { .. } => return commands::sweep(&cfg),
        Command::Oracle { .. } if cfg.oracle.random.unwrap_or(0) > 0 => {
            return commands::oracle_random(&cfg.random_oracle()?, cfg.run.jobs)
        }
        _ => {}
    }
    let resolved = cfg.resolve()?;
    match cli.command {
        Command::Solve { .. } => commands::solve(&resolved),
        Command::Compare { .. } => commands::compare(&resolved),
        Command::Track { .. } => commands::track(&resolved),
        Command::Oracle { .. } => commands::oracle(&resolved),
        Command::Sweep { .. } => unreachable!("handled above"),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let infeasible = err
        .chain()
        .filter_map(|e| e.downcast_ref::<migband_core::Error>())
        .any(|e| e.is_infeasible());
    if infeasible {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
