//! Reference bandwidth managers: Xen's linear ramp and the single-rate optimum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    constraint_residuals, min_feasible_rounds, simulate, MigrationOutcome, QosConstraints, RateSchedule,
    StageConstants, WirelessScenario, Workload,
};
use crate::partition::RatePartition;
use crate::solver::{self, Multipliers, SolverOptions, SolverReport, SolverStatus};

/// Xen's pre-copy policy: start at the dirty rate and ramp linearly up to
/// `r_max_xen` at the stop-and-copy round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XenPolicy {
    pub r_max_xen: f64,
    pub i_max_xen: usize,
}

impl XenPolicy {
    pub fn new(r_max_xen: f64, i_max_xen: usize) -> Self {
        XenPolicy { r_max_xen, i_max_xen }
    }

    /// Per-round increment `(R_MAX - w) / (I_MAX + 1)`.
    pub fn increment(&self, dirty_rate: f64) -> f64 {
        (self.r_max_xen - dirty_rate) / (self.i_max_xen as f64 + 1.0)
    }
}

/// `R_i = w + i * dR` for `i = 0 ..= I_MAX + 1`.
pub fn xen_schedule(workload: &Workload, policy: &XenPolicy) -> Result<RateSchedule> {
    workload.validate()?;
    let w = workload.dirty_rate;
    if !(policy.r_max_xen > w) || !policy.r_max_xen.is_finite() {
        return Err(Error::param(
            "r_max_xen",
            format!("must exceed the dirty rate {w}, got {}", policy.r_max_xen),
        ));
    }
    let n = policy.i_max_xen + 2;
    let dr = policy.increment(w);
    let rates = (0..n)
        .map(|i| {
            if i == n - 1 {
                policy.r_max_xen
            } else {
                w + i as f64 * dr
            }
        })
        .collect();
    RateSchedule::new(rates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XenOutcome {
    pub schedule: RateSchedule,
    pub outcome: MigrationOutcome,
    /// Geometric-mean per-round volume reduction `(V0 / V_last)^(1/(I_MAX+1))`.
    pub beta_achieved: f64,
}

pub fn xen_evaluate(
    workload: &Workload,
    scenario: &WirelessScenario,
    stages: &StageConstants,
    policy: &XenPolicy,
) -> Result<XenOutcome> {
    let schedule = xen_schedule(workload, policy)?;
    let outcome = simulate(&schedule, workload, scenario, stages)?;
    let v0 = outcome.volumes[0];
    let v_last = *outcome.volumes.last().expect("schedule has at least two rounds");
    let beta_achieved = if v_last > 0.0 {
        (v0 / v_last).powf(1.0 / (policy.i_max_xen as f64 + 1.0))
    } else {
        f64::INFINITY
    };
    Ok(XenOutcome {
        schedule,
        outcome,
        beta_achieved,
    })
}

/// Golden-section minimisation of a unimodal `f` on `[a, b]`.
/// Returns `(x, f(x), iterations)`.
pub fn golden_section<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64, usize) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iters = 0;
    while (b - a).abs() > tol && iters < max_iter {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        iters += 1;
    }
    if fc <= fd {
        (c, fc, iters)
    } else {
        (d, fd, iters)
    }
}

/// Best single rate held over all `i_max + 2` rounds.
///
/// The downtime and total time fall as the rate rises, so the feasible rates
/// form an interval `[R_feas, r_hat]`; `R_feas` is found by bisection and the
/// energy, convex in `ln R`, is minimised on that interval by golden section.
pub fn solve_bmop(
    scenario: &WirelessScenario,
    workload: &Workload,
    qos: &QosConstraints,
    stages: &StageConstants,
    i_max: usize,
    opts: &SolverOptions,
) -> Result<SolverReport> {
    scenario.validate()?;
    workload.validate()?;
    qos.validate()?;
    stages.validate()?;
    opts.validate()?;
    let partition = RatePartition::constant(i_max);
    if workload.dirty_rate == 0.0 {
        return solver::zero_dirty_rate(scenario, workload, qos, stages, &partition, opts);
    }

    let r_hat = scenario.r_hat;
    let lo = qos.speedup_floor(workload.dirty_rate).max(opts.rate_floor.min(r_hat));
    if lo > r_hat {
        return Err(Error::Infeasible {
            reason: format!(
                "speed-up constraint needs rates >= beta*w = {lo} above the rate cap r_hat = {r_hat} (Psi3 vs Psi4)"
            ),
            min_rounds_hint: None,
        });
    }

    let feasible = |r: f64| -> Result<bool> {
        let sched = RateSchedule::constant(i_max, r)?;
        let out = simulate(&sched, workload, scenario, stages)?;
        Ok(constraint_residuals(&out, &sched, workload, scenario, qos, &[0]).is_feasible())
    };
    if !feasible(r_hat)? {
        return Err(Error::Infeasible {
            reason: format!("no constant rate up to r_hat = {r_hat} meets the limits with I_MAX = {i_max}"),
            min_rounds_hint: min_feasible_rounds(workload, scenario, qos, stages).ok(),
        });
    }

    let r_feas = if feasible(lo)? {
        lo
    } else {
        let (mut bad, mut good) = (lo.ln(), r_hat.ln());
        for _ in 0..200 {
            if good - bad <= 1e-15 * good.abs().max(1.0) {
                break;
            }
            let mid = 0.5 * (bad + good);
            if feasible(mid.exp())? {
                good = mid;
            } else {
                bad = mid;
            }
        }
        good.exp()
    };

    let energy_at = |x: f64| -> f64 {
        let sched = RateSchedule::constant(i_max, x.exp()).expect("positive rate");
        simulate(&sched, workload, scenario, stages)
            .map(|o| o.e_tot)
            .unwrap_or(f64::INFINITY)
    };
    let (a, b) = (r_feas.ln(), r_hat.ln());
    let (mut x, mut e, iters) = golden_section(energy_at, a, b, 1e-12, 500);
    for end in [a, b] {
        let ee = energy_at(end);
        if ee <= e {
            x = end;
            e = ee;
        }
    }

    let mut report = SolverReport::build(
        &partition,
        vec![x.exp().clamp(r_feas, r_hat)],
        workload,
        scenario,
        qos,
        stages,
        iters,
        Multipliers::default(),
        SolverStatus::Converged,
    )?;
    if !report.feasible {
        // rounding pushed the optimum off the boundary
        report = SolverReport::build(
            &partition,
            vec![r_feas],
            workload,
            scenario,
            qos,
            stages,
            iters,
            Multipliers::default(),
            SolverStatus::Converged,
        )?;
    }
    Ok(report)
}

/// [`solve_bmop`] for every round count from the smallest feasible one up to
/// `opts.round_cap`, keeping the cheapest (smallest `I_MAX` on ties).
pub fn optimize_bmop_rounds(
    scenario: &WirelessScenario,
    workload: &Workload,
    qos: &QosConstraints,
    stages: &StageConstants,
    opts: &SolverOptions,
) -> Result<(usize, SolverReport)> {
    use rayon::prelude::*;
    if workload.dirty_rate == 0.0 {
        return solve_bmop(scenario, workload, qos, stages, 0, opts).map(|r| (0, r));
    }
    let first = crate::model::min_feasible_rounds_capped(workload, scenario, qos, stages, opts.round_cap)?;
    let reports: Vec<Result<SolverReport>> = (first..=opts.round_cap)
        .into_par_iter()
        .map(|i| solve_bmop(scenario, workload, qos, stages, i, opts))
        .collect();
    solver::pick_best(reports, opts.tolerance)
        .map(|r| (r.partition.i_max(), r))
        .ok_or_else(|| Error::infeasible("no round count admits a feasible constant rate"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PowerModel;

    fn unit(r_hat: f64) -> WirelessScenario {
        WirelessScenario::new("unit", r_hat, 0.0, PowerModel::new(1.0, 2.0).unwrap()).unwrap()
    }

    #[test]
    fn ramp_with_seven_rounds() {
        let w = Workload::new(90.0, 5.0).unwrap();
        let s = xen_schedule(&w, &XenPolicy::new(45.0, 7)).unwrap();
        assert_eq!(s.rates(), &[5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0]);
    }

    #[test]
    fn ramp_with_two_rounds() {
        let w = Workload::new(90.0, 5.0).unwrap();
        let s = xen_schedule(&w, &XenPolicy::new(45.0, 2)).unwrap();
        let expected = [5.0, 5.0 + 40.0 / 3.0, 5.0 + 80.0 / 3.0, 45.0];
        for (a, b) in s.rates().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((s.rates()[1] - 18.333).abs() < 1e-3);
        assert!((s.rates()[2] - 31.667).abs() < 1e-3);
    }

    #[test]
    fn ramp_without_precopy() {
        let w = Workload::new(90.0, 5.0).unwrap();
        let s = xen_schedule(&w, &XenPolicy::new(45.0, 0)).unwrap();
        assert_eq!(s.rates(), &[5.0, 45.0]);
    }

    #[test]
    fn ramp_rejects_low_cap() {
        let w = Workload::new(90.0, 5.0).unwrap();
        assert!(xen_schedule(&w, &XenPolicy::new(5.0, 3)).is_err());
    }

    #[test]
    fn xen_energy_and_speedup() {
        let w = Workload::new(90.0, 5.0).unwrap();
        let x = xen_evaluate(&w, &unit(45.0), &StageConstants::default(), &XenPolicy::new(45.0, 2)).unwrap();
        // independent evaluation of V_i = M0 w^i / prod_{j<i} R_j
        let r = x.schedule.rates();
        let v3 = 90.0 * 125.0 / (r[0] * r[1] * r[2]);
        let beta = (90.0 / v3).powf(1.0 / 3.0);
        assert!((x.outcome.e_tot - 3051.7).abs() < 0.05);
        assert!((x.beta_achieved - beta).abs() < 1e-12);
        // 2.8530 exactly; 2.854 comes from the rounded volumes
        assert!((x.beta_achieved - 2.854).abs() < 2e-3, "{}", x.beta_achieved);
    }

    #[test]
    fn xen_stalls_in_round_zero() {
        let w = Workload::new(64.0, 2.0).unwrap();
        let x = xen_evaluate(&w, &unit(8.0), &StageConstants::default(), &XenPolicy::new(8.0, 0)).unwrap();
        // R0 = w: T0 = 32, V1 = w * T0 = 64 = V0
        assert_eq!(x.schedule.rates(), &[2.0, 8.0]);
        assert_eq!(x.outcome.volumes, vec![64.0, 64.0]);
        assert_eq!(x.beta_achieved, 1.0);
    }

    #[test]
    fn xen_vanishing_dirty_rate() {
        let w = Workload::new(64.0, 1e-9).unwrap();
        let x = xen_evaluate(&w, &unit(8.0), &StageConstants::default(), &XenPolicy::new(8.0, 3)).unwrap();
        assert!(x.beta_achieved > 1e3);
        // round 0 still stalls (R0 = w), everything after it vanishes
        assert!((x.outcome.volumes[1] - 64.0).abs() < 1e-9);
        assert!(x.outcome.volumes[2..].iter().all(|v| *v < 1e-6));
    }

    #[test]
    fn golden_section_quadratic() {
        let (x, fx, _) = golden_section(|x| (x - 1.3) * (x - 1.3) + 2.0, -4.0, 5.0, 1e-10, 500);
        assert!((x - 1.3).abs() < 1e-6);
        assert!((fx - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bmop_increasing_energy_hits_speedup_floor() {
        let w = Workload::new(100.0, 1.0).unwrap();
        let q = QosConstraints::new(1e6, 1e6, 2.0, true).unwrap();
        let rep = solve_bmop(
            &unit(10.0),
            &w,
            &q,
            &StageConstants::default(),
            0,
            &SolverOptions::default(),
        )
        .unwrap();
        // E(R) = k0 M0 (R + w) is increasing, so R* = beta * w
        assert!((rep.reduced_rates[0] - 2.0).abs() < 1e-9);
        assert!((rep.energy() - 300.0).abs() < 1e-7);
        // 1-D grid oracle
        let grid_best = (0..2000)
            .map(|i| 2.0 * (5f64).powf(i as f64 / 1999.0))
            .map(|r| 100.0 * r + 100.0)
            .fold(f64::INFINITY, f64::min);
        assert!(rep.energy() <= grid_best * 1.01);
    }

    #[test]
    fn bmop_tight_downtime_forces_cap() {
        let w = Workload::new(100.0, 1.0).unwrap();
        // all-r_hat downtime with I_MAX = 0: V1 = 100/10, T1 = 1
        let q = QosConstraints::new(1e6, 1.0, 2.0, true).unwrap();
        let rep = solve_bmop(
            &unit(10.0),
            &w,
            &q,
            &StageConstants::default(),
            0,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!((rep.reduced_rates[0] - 10.0).abs() < 1e-7);
        assert!(rep.feasible);
    }

    #[test]
    fn bmop_zero_dirty_rate() {
        let w = Workload::new(100.0, 0.0).unwrap();
        let q = QosConstraints::new(100.0, 1.0, 2.0, true).unwrap();
        let rep = solve_bmop(
            &unit(10.0),
            &w,
            &q,
            &StageConstants::default(),
            2,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(rep.reduced_rates, vec![1.0]);
        assert_eq!(rep.energy(), 100.0);
    }

    #[test]
    fn bmop_infeasible_box() {
        let w = Workload::new(100.0, 6.0).unwrap();
        let q = QosConstraints::new(1e6, 1.0, 2.0, true).unwrap();
        let err = solve_bmop(
            &unit(10.0),
            &w,
            &q,
            &StageConstants::default(),
            3,
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert!(err.is_infeasible());
    }
}
