//! Energy-minimal rate schedules for a fixed partition, the outer search over
//! the number of pre-copy rounds, and a brute-force grid oracle.
//!
//! With `x = ln R` every energy term and every round time is a monomial, so
//! the energy, the total time and the downtime are posynomials and the problem
//! is convex in `x`. The speed-up and rate-cap constraints are box bounds on
//! `x`. [`solve_tcbm`] runs a log-barrier Newton method on that form.

pub(crate) mod barrier;
pub mod oracle;
pub mod problem;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    constraint_residuals, min_feasible_rounds, min_feasible_rounds_capped, simulate, MigrationOutcome, QosConstraints,
    RateSchedule, Residuals, StageConstants, WirelessScenario, Workload, FEASIBILITY_TOL,
};
use crate::partition::RatePartition;

pub use oracle::{brute_force_oracle, OracleResult};
pub use problem::{ConstraintKind, LogProblem, Multipliers};

/// Xen's default cap on pre-copy rounds.
pub const XEN_DEFAULT_ROUND_CAP: usize = 29;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Newton iterations summed over all barrier stages.
    pub max_iterations: usize,
    /// Relative energy gap at which the solve is declared converged.
    pub tolerance: f64,
    /// Largest per-coordinate Newton step in log-rate space.
    pub step_init: f64,
    /// Largest `I_MAX` tried by [`optimize_rounds`].
    pub round_cap: usize,
    /// Smallest rate (Mb/s) any variable may take.
    pub rate_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 2000,
            tolerance: 1e-8,
            step_init: 2.0,
            round_cap: XEN_DEFAULT_ROUND_CAP,
            rate_floor: 1e-6,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::param("max_iterations", "must be positive"));
        }
        for (name, v) in [
            ("tolerance", self.tolerance),
            ("step_init", self.step_init),
            ("rate_floor", self.rate_floor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Converged,
    IterationLimit,
}

impl std::fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverStatus::Converged => "converged",
            SolverStatus::IterationLimit => "iteration-limit",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub partition: RatePartition,
    /// Decision-variable rates, one per updated index.
    pub reduced_rates: Vec<f64>,
    pub schedule: RateSchedule,
    pub outcome: MigrationOutcome,
    pub residuals: Residuals,
    pub feasible: bool,
    pub iterations: usize,
    pub max_residual: f64,
    /// Multipliers of the log-scaled total-time and downtime constraints.
    pub multipliers: Multipliers,
    pub status: SolverStatus,
}

impl SolverReport {
    pub fn energy(&self) -> f64 {
        self.outcome.e_tot
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build(
        partition: &RatePartition,
        reduced_rates: Vec<f64>,
        workload: &Workload,
        scenario: &WirelessScenario,
        qos: &QosConstraints,
        stages: &StageConstants,
        iterations: usize,
        multipliers: Multipliers,
        status: SolverStatus,
    ) -> Result<Self> {
        let schedule = partition.expand(&reduced_rates)?;
        let outcome = simulate(&schedule, workload, scenario, stages)?;
        let residuals = constraint_residuals(
            &outcome,
            &schedule,
            workload,
            scenario,
            qos,
            partition.updated_indices(),
        );
        Ok(SolverReport {
            partition: partition.clone(),
            reduced_rates,
            schedule,
            feasible: residuals.is_feasible(),
            max_residual: residuals.max(),
            outcome,
            residuals,
            iterations,
            multipliers,
            status,
        })
    }
}

fn validate_instance(
    scenario: &WirelessScenario,
    workload: &Workload,
    qos: &QosConstraints,
    stages: &StageConstants,
    opts: &SolverOptions,
) -> Result<()> {
    scenario.validate()?;
    workload.validate()?;
    qos.validate()?;
    stages.validate()?;
    opts.validate()
}

/// Minimise total energy over the decision variables of `partition` subject to
/// the four QoS constraints.
pub fn solve_tcbm(
    scenario: &WirelessScenario,
    workload: &Workload,
    qos: &QosConstraints,
    stages: &StageConstants,
    partition: &RatePartition,
    opts: &SolverOptions,
) -> Result<SolverReport> {
    validate_instance(scenario, workload, qos, stages, opts)?;
    if workload.dirty_rate == 0.0 {
        return zero_dirty_rate(scenario, workload, qos, stages, partition, opts);
    }

    let prob = LogProblem::new(scenario, workload, qos, stages, partition, opts.rate_floor)?;
    if prob.box_is_empty() {
        return Err(Error::Infeasible {
            reason: format!(
                "speed-up constraint needs rates >= beta*w = {} above the rate cap r_hat = {} (Psi3 vs Psi4)",
                qos.beta * workload.dirty_rate,
                scenario.r_hat
            ),
            min_rounds_hint: None,
        });
    }

    // The all-r_hat point is the most feasible point of the box.
    let top = prob.upper_point();
    let top_report = SolverReport::build(
        partition,
        prob.rates(&top),
        workload,
        scenario,
        qos,
        stages,
        0,
        Multipliers::default(),
        SolverStatus::Converged,
    )?;
    if !top_report.feasible {
        return Err(Error::Infeasible {
            reason: format!(
                "no schedule with I_MAX = {} meets the downtime/total-time limits (best residual {:.3e})",
                partition.i_max(),
                top_report.max_residual
            ),
            min_rounds_hint: min_feasible_rounds(workload, scenario, qos, stages).ok(),
        });
    }

    let Some(start) = strictly_feasible_start(&prob) else {
        // The feasible set has no interior: only the all-r_hat point remains.
        return Ok(top_report);
    };

    let settings = barrier::BarrierSettings {
        gap_tol: 0.1 * opts.tolerance,
        max_iterations: opts.max_iterations,
        max_step: opts.step_init,
    };
    let res = barrier::solve(&prob, start, &settings);
    SolverReport::build(
        partition,
        prob.rates(&res.x),
        workload,
        scenario,
        qos,
        stages,
        res.iterations,
        res.multipliers,
        res.status,
    )
}

/// Walk from the initial point towards the all-`r_hat` corner until the
/// general constraints hold strictly. Round times fall monotonically along
/// that path.
fn strictly_feasible_start(prob: &LogProblem) -> Option<Vec<f64>> {
    let x0 = prob.initial_point();
    let top = prob.upper_point();
    let strictly_inside = |x: &[f64]| {
        prob.max_violation(x) < 0.0
            && (0..prob.dim()).all(|k| prob.is_fixed(k) || (x[k] > prob.lower()[k] && x[k] < prob.upper()[k]))
    };
    if strictly_inside(&x0) {
        return Some(x0);
    }
    let mut gap = 0.5;
    for _ in 0..52 {
        let s = 1.0 - gap;
        let x: Vec<f64> = x0.iter().zip(&top).map(|(a, b)| a + s * (b - a)).collect();
        if strictly_inside(&x) {
            return Some(x);
        }
        gap *= 0.5;
    }
    None
}

/// With no dirtying only round 0 carries data: the energy is
/// `k0 R0^(alpha-1) M0` and only the total-time limit bounds `R0`.
pub(crate) fn zero_dirty_rate(
    scenario: &WirelessScenario,
    workload: &Workload,
    qos: &QosConstraints,
    stages: &StageConstants,
    partition: &RatePartition,
    opts: &SolverOptions,
) -> Result<SolverReport> {
    if qos.delta_dt < stages.downtime_overhead() * (1.0 - FEASIBILITY_TOL) {
        return Err(Error::infeasible(format!(
            "downtime limit {} s is below the commitment + activation time {} s",
            qos.delta_dt,
            stages.downtime_overhead()
        )));
    }
    let r_hat = scenario.r_hat;
    let mut lower = opts.rate_floor.min(r_hat);
    if qos.theta {
        let budget = qos.delta_tm - stages.fixed_total();
        if budget <= 0.0 {
            return Err(Error::infeasible("total-time limit is below the fixed stage durations"));
        }
        lower = lower.max(workload.m0 / budget);
    }
    if lower > r_hat * (1.0 + FEASIBILITY_TOL) {
        return Err(Error::infeasible(format!(
            "copying M0 within the total-time limit needs {lower} Mb/s, above r_hat = {r_hat}"
        )));
    }
    let r0 = if scenario.power.alpha > 1.0 {
        lower.min(r_hat)
    } else {
        r_hat
    };
    SolverReport::build(
        partition,
        vec![r0; partition.num_vars()],
        workload,
        scenario,
        qos,
        stages,
        0,
        Multipliers::default(),
        SolverStatus::Converged,
    )
}

/// How many updated pre-copy rates to use for a candidate `I_MAX`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QRule {
    /// `Q = min(q, I_MAX)`.
    Fixed(usize),
    /// `Q = I_MAX`: every pre-copy rate is free.
    Full,
}

impl QRule {
    pub fn q_for(&self, i_max: usize) -> usize {
        match *self {
            QRule::Fixed(q) => q.min(i_max).max(usize::from(i_max > 0)),
            QRule::Full => i_max,
        }
    }

    pub fn partition(&self, i_max: usize) -> Result<RatePartition> {
        RatePartition::new(i_max, self.q_for(i_max))
    }
}

/// Solve every round count from the smallest feasible one up to
/// `opts.round_cap` and keep the cheapest. Ties (within the solver tolerance)
/// go to the smaller `I_MAX`.
pub fn optimize_rounds(
    scenario: &WirelessScenario,
    workload: &Workload,
    qos: &QosConstraints,
    stages: &StageConstants,
    q_rule: QRule,
    opts: &SolverOptions,
) -> Result<(usize, SolverReport)> {
    validate_instance(scenario, workload, qos, stages, opts)?;
    if workload.dirty_rate == 0.0 {
        let report = solve_tcbm(scenario, workload, qos, stages, &q_rule.partition(0)?, opts)?;
        return Ok((0, report));
    }
    let first = min_feasible_rounds_capped(workload, scenario, qos, stages, opts.round_cap)?;

    let reports: Vec<Result<SolverReport>> = (first..=opts.round_cap)
        .into_par_iter()
        .map(|i_max| {
            let part = q_rule.partition(i_max)?;
            solve_tcbm(scenario, workload, qos, stages, &part, opts)
        })
        .collect();

    pick_best(reports, opts.tolerance)
        .map(|r| (r.partition.i_max(), r))
        .ok_or_else(|| {
            Error::infeasible(format!(
                "no round count in {first}..={} admits a feasible schedule",
                opts.round_cap
            ))
        })
}

/// Cheapest feasible report; `reports` must be ordered by increasing `I_MAX`.
pub(crate) fn pick_best(reports: Vec<Result<SolverReport>>, tol: f64) -> Option<SolverReport> {
    let feasible: Vec<SolverReport> = reports
        .into_iter()
        .filter_map(|r| r.ok())
        .filter(|r| r.feasible)
        .collect();
    let min = feasible.iter().map(|r| r.energy()).fold(f64::INFINITY, f64::min);
    feasible.into_iter().find(|r| r.energy() <= min * (1.0 + tol))
}
