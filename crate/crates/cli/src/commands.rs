use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use migband_core::harness::{
    self, compare_protocol, comparison_markdown, random_instance, savings_markdown, workload_sweep,
    write_comparison_csv, write_sweep_csv, ProtocolConfig, SweepCell,
};
use migband_core::solver::brute_force_oracle;
use migband_core::tracker::{run_tracker, settling_time};
use migband_core::{optimize_rounds, solve_tcbm, Error, QRule, RatePartition, SolverReport, SolverStatus};
use rayon::prelude::*;

use crate::config::{RandomOracle, Resolved, RunConfig};
use crate::output::{header, write_atomic, Format};

fn csv_string<E>(f: impl FnOnce(&mut Vec<u8>) -> std::result::Result<(), E>) -> Result<String>
where
    E: std::error::Error + Send + Sync + 'static,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn emit(out: &Path, command: &str, cfg_toml: &str, name: &str, format: Format, body: &str) -> Result<()> {
    let text = header(format, command, cfg_toml) + body;
    let path = write_atomic(out, name, text.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn solve_configured(r: &Resolved) -> Result<SolverReport> {
    Ok(match r.i_max {
        Some(i) => {
            let part = r.q_rule.partition(i)?;
            solve_tcbm(&r.scenario, &r.workload, &r.qos, &r.stages, &part, &r.solver)?
        }
        None => optimize_rounds(&r.scenario, &r.workload, &r.qos, &r.stages, r.q_rule, &r.solver)?.1,
    })
}

pub fn solve(r: &Resolved) -> Result<()> {
    let cfg = r.to_config().to_toml();
    let rep = solve_configured(r)?;
    let o = &rep.outcome;

    let mut body = String::from("round,rate_mbps,volume_mb,time_s,energy_j\n");
    for (i, rate) in rep.schedule.rates().iter().enumerate() {
        let _ = writeln!(
            body,
            "{i},{rate},{},{},{}",
            o.volumes[i], o.round_times[i], o.per_round_energy[i]
        );
    }
    emit(&r.out, "solve", &cfg, "solve.csv", Format::Csv, &body)?;

    println!(
        "scenario {}: I_MAX = {}, Q = {}",
        r.scenario.name,
        rep.partition.i_max(),
        rep.partition.q()
    );
    println!(
        "E* = {:.4} J, status {}, {} iterations",
        rep.energy(),
        rep.status,
        rep.iterations
    );
    println!("reduced rates (Mb/s): {:?}", rep.reduced_rates);
    println!(
        "T_TM = {:.6} s (limit {}), T_DT = {:.6e} s (limit {}), feasible: {}",
        o.t_tm, r.qos.delta_tm, o.t_dt, r.qos.delta_dt, rep.feasible
    );
    if rep.status != SolverStatus::Converged {
        bail!("solver stopped at the iteration limit");
    }
    Ok(())
}

pub fn compare(r: &Resolved) -> Result<()> {
    let cfg = r.to_config().to_toml();
    let mut protocol = ProtocolConfig::new(r.r_max_xen, r.q_rule);
    protocol.r_hat = r.compare_r_hat;
    protocol.stages = r.stages;
    protocol.solver = r.solver;
    let workload = match r.compare_ratio {
        Some(ratio) => r.workload.with_dirty_rate(ratio * protocol.cap()),
        None => r.workload,
    };
    let rows = compare_protocol(&r.scenario, &workload, &r.xen_rounds, &protocol)?;
    let body = csv_string(|b| write_comparison_csv(&rows, b))?;
    emit(&r.out, "compare", &cfg, "compare.csv", Format::Csv, &body)?;
    let md = comparison_markdown(&rows);
    emit(&r.out, "compare", &cfg, "compare.md", Format::Markdown, &md)?;
    print!("{md}");
    for row in &rows {
        for note in &row.notes {
            println!("I_MAX^XEN = {}: {note}", row.i_max_xen);
        }
    }
    Ok(())
}

pub fn track(r: &Resolved) -> Result<()> {
    let cfg = r.to_config().to_toml();
    let seg0 = r.timeline.segments()[0];
    let scenario = r.scenario.with_k0(seg0.k0);
    let workload = r.workload.with_dirty_rate(seg0.dirty_rate);
    let partition: RatePartition = match r.i_max {
        Some(i) => r.q_rule.partition(i)?,
        None => {
            optimize_rounds(&scenario, &workload, &r.qos, &r.stages, r.q_rule, &r.solver)?
                .1
                .partition
        }
    };
    let trace = run_tracker(
        &r.scenario,
        &r.workload,
        &r.qos,
        &r.stages,
        &partition,
        &r.timeline,
        &r.tracker,
    )?;
    let body = csv_string(|b| trace.write_csv(b))?;
    emit(&r.out, "track", &cfg, "track.csv", Format::Csv, &body)?;

    println!("partition: I_MAX = {}, Q = {}", partition.i_max(), partition.q());
    for (k, seg) in trace.segments.iter().enumerate() {
        let settle = match settling_time(&trace, k, r.tracker.settle_tolerance) {
            Ok(n) => n.to_string(),
            Err(Error::NeverSettled) => "not settled".into(),
            Err(e) => return Err(e.into()),
        };
        let last = &trace.rows[seg.end - 1];
        println!(
            "segment {k} (n = {}..{}): final E = {:.4} J, settling {settle}, feasible {}",
            seg.start,
            seg.end - 1,
            last.energy,
            last.feasible
        );
    }
    Ok(())
}

/// The config embedded in sweep outputs: only the keys the sweep reads.
fn sweep_config(base: &RunConfig, r: &Resolved, presets: &[String]) -> String {
    let full = r.to_config();
    let mut cfg = RunConfig {
        preset: base.preset.clone(),
        sweep: full.sweep,
        solver: full.solver,
        run: full.run,
        ..Default::default()
    };
    cfg.sweep.presets = Some(presets.to_vec());
    cfg.to_toml()
}

pub fn sweep(base: &RunConfig) -> Result<()> {
    let presets: Vec<String> = match (&base.sweep.presets, &base.preset) {
        (Some(list), _) => list.clone(),
        (None, Some(p)) => vec![p.to_ascii_lowercase()],
        (None, None) => harness::PRESET_KEYS.iter().map(|s| s.to_string()).collect(),
    };
    if presets.is_empty() {
        bail!("sweep.presets must not be empty");
    }
    // settings common to every preset come from the first one
    let mut first = base.clone();
    first.preset = Some(presets[0].clone());
    let r = first.resolve()?;
    let cfg = sweep_config(base, &r, &presets);

    let mut cells: Vec<SweepCell> = Vec::new();
    for key in &presets {
        let p = harness::preset(key)?;
        cells.extend(workload_sweep(&p, &r.app_profile, r.sweep_i_max_xen, &r.solver)?);
    }
    let body = csv_string(|b| write_sweep_csv(&cells, b))?;
    emit(&r.out, "sweep", &cfg, "sweep.csv", Format::Csv, &body)?;
    let md = savings_markdown(&cells);
    emit(&r.out, "sweep", &cfg, "sweep.md", Format::Markdown, &md)?;
    print!("{md}");
    Ok(())
}

pub fn oracle(r: &Resolved) -> Result<()> {
    let cfg = r.to_config().to_toml();
    let i_max = r.i_max.context("partition.i_max required for the oracle")?;
    let part = r.q_rule.partition(i_max)?;
    let grid = brute_force_oracle(&r.scenario, &r.workload, &r.qos, &r.stages, &part, r.grid_points)?;
    let rep = solve_tcbm(&r.scenario, &r.workload, &r.qos, &r.stages, &part, &r.solver)?;
    let mut body = String::from("source,energy_J");
    for k in 0..part.num_vars() {
        let _ = write!(body, ",R_{k}");
    }
    body.push('\n');
    for (name, e, rates) in [
        ("oracle", grid.energy, &grid.reduced_rates),
        ("solver", rep.energy(), &rep.reduced_rates),
    ] {
        let _ = write!(body, "{name},{e}");
        for v in rates {
            let _ = write!(body, ",{v}");
        }
        body.push('\n');
    }
    emit(&r.out, "oracle", &cfg, "oracle.csv", Format::Csv, &body)?;
    println!(
        "grid optimum {:.4} J over {} points, solver {:.4} J, gap {:.3}%",
        grid.energy,
        grid.grid_size,
        rep.energy(),
        100.0 * (rep.energy() - grid.energy) / grid.energy
    );
    Ok(())
}

/// Solver against the grid on seeded random instances, alternating `Q = 1`
/// and `Q = I_MAX`.
pub fn oracle_random(o: &RandomOracle, jobs: Option<usize>) -> Result<()> {
    let cfg = o.to_config(jobs).to_toml();
    let mut rng = harness::seeded_rng(o.seed);
    let cases: Vec<(usize, RatePartition, harness::Instance)> = (0..o.count)
        .map(|k| {
            let i_max = o.i_max.unwrap_or(k % 4);
            let q = if k % 2 == 0 { QRule::Fixed(1) } else { QRule::Full };
            let inst = random_instance(&mut rng, i_max);
            Ok((k, q.partition(i_max)?, inst))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<(String, f64)> = cases
        .par_iter()
        .map(|(k, part, inst)| {
            let rep = solve_tcbm(&inst.scenario, &inst.workload, &inst.qos, &inst.stages, part, &o.solver)?;
            let grid = brute_force_oracle(
                &inst.scenario,
                &inst.workload,
                &inst.qos,
                &inst.stages,
                part,
                o.grid_points,
            )?;
            let gap = 100.0 * (rep.energy() - grid.energy) / grid.energy;
            let row = format!(
                "{k},{},{},{},{},{gap}\n",
                part.i_max(),
                part.q(),
                rep.energy(),
                grid.energy
            );
            Ok((row, gap))
        })
        .collect::<Result<_>>()?;
    let worst = rows.iter().map(|(_, g)| *g).fold(f64::NEG_INFINITY, f64::max);
    let body = String::from("instance,i_max,q,E_solver_J,E_oracle_J,gap_pct\n")
        + &rows.into_iter().map(|(r, _)| r).collect::<String>();
    emit(&o.out, "oracle", &cfg, "oracle.csv", Format::Csv, &body)?;
    println!("{} instances, largest solver-over-grid gap {worst:.4}%", o.count);
    Ok(())
}
