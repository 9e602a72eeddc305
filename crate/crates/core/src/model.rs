//! Forward model of pre-copy live migration.
//!
//! Round 0 ships the whole memory image `M0`. Every later round ships what the
//! running VM dirtied while the previous round was on the air, so
//! `V[i+1] = w * T[i]` with `T[i] = V[i] / R[i]`. The last round
//! (`I_MAX + 1`) is the stop-and-copy round. Units are Mb, Mb/s, s, J and W
//! throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance applied to every QoS residual when deciding feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Upper bound on the round count scanned by [`min_feasible_rounds`].
pub const MIN_ROUNDS_HARD_CAP: usize = 64;

/// Monomial radio power model `P(R) = k0 * R^alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    /// W per (Mb/s)^alpha.
    pub k0: f64,
    pub alpha: f64,
}

impl PowerModel {
    pub fn new(k0: f64, alpha: f64) -> Result<Self> {
        let p = PowerModel { k0, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k0 > 0.0 && self.k0.is_finite()) {
            return Err(Error::param("k0", format!("must be > 0, got {}", self.k0)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::param("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Transmit power (W) at `rate` Mb/s.
    pub fn power(&self, rate: f64) -> f64 {
        self.k0 * rate.powf(self.alpha)
    }

    /// Energy (J) spent shipping `volume` Mb at a constant `rate`.
    pub fn round_energy(&self, rate: f64, volume: f64) -> f64 {
        self.k0 * rate.powf(self.alpha - 1.0) * volume
    }
}

/// Channel and energy constants of a wireless link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirelessScenario {
    pub name: String,
    /// Maximum migration bandwidth (Mb/s).
    pub r_hat: f64,
    /// Static, rate-independent connection energy (J).
    pub e_setup: f64,
    pub power: PowerModel,
}

impl WirelessScenario {
    pub fn new(name: impl Into<String>, r_hat: f64, e_setup: f64, power: PowerModel) -> Result<Self> {
        let s = WirelessScenario {
            name: name.into(),
            r_hat,
            e_setup,
            power,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_hat > 0.0 && self.r_hat.is_finite()) {
            return Err(Error::param("r_hat", format!("must be > 0, got {}", self.r_hat)));
        }
        if !(self.e_setup >= 0.0 && self.e_setup.is_finite()) {
            return Err(Error::param("e_setup", format!("must be >= 0, got {}", self.e_setup)));
        }
        self.power.validate()
    }

    pub fn with_r_hat(&self, r_hat: f64) -> Self {
        WirelessScenario { r_hat, ..self.clone() }
    }

    pub fn with_k0(&self, k0: f64) -> Self {
        WirelessScenario {
            power: PowerModel { k0, ..self.power },
            ..self.clone()
        }
    }
}

/// The migrating VM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    /// Memory size (Mb).
    pub m0: f64,
    /// Mean memory dirty rate (Mb/s).
    pub dirty_rate: f64,
}

impl Workload {
    pub fn new(m0: f64, dirty_rate: f64) -> Result<Self> {
        let w = Workload { m0, dirty_rate };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m0 > 0.0 && self.m0.is_finite()) {
            return Err(Error::param("m0", format!("must be > 0, got {}", self.m0)));
        }
        if !(self.dirty_rate >= 0.0 && self.dirty_rate.is_finite()) {
            return Err(Error::param(
                "dirty_rate",
                format!("must be >= 0, got {}", self.dirty_rate),
            ));
        }
        Ok(())
    }

    pub fn with_dirty_rate(&self, dirty_rate: f64) -> Self {
        Workload { dirty_rate, ..*self }
    }
}

/// Fixed durations (s) of the stages that do not depend on the rates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageConstants {
    pub t_pm: f64,
    pub t_re: f64,
    pub t_cm: f64,
    pub t_at: f64,
}

impl StageConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t_pm", self.t_pm),
            ("t_re", self.t_re),
            ("t_cm", self.t_cm),
            ("t_at", self.t_at),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Commitment + activation: the part of the downtime after stop-and-copy.
    pub fn downtime_overhead(&self) -> f64 {
        self.t_cm + self.t_at
    }

    /// Everything in the total migration time except the memory transfer.
    pub fn fixed_total(&self) -> f64 {
        self.t_pm + self.t_re + self.t_cm + self.t_at
    }
}

/// QoS limits imposed on a migration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosConstraints {
    /// Maximum total migration time (s).
    pub delta_tm: f64,
    /// Maximum downtime (s).
    pub delta_dt: f64,
    /// Required per-round volume reduction factor.
    pub beta: f64,
    /// `true` for pre-copy: enables the total-time and speed-up constraints.
    /// `false` models techniques whose total and stop-and-copy times coincide.
    pub theta: bool,
}

impl QosConstraints {
    pub fn new(delta_tm: f64, delta_dt: f64, beta: f64, theta: bool) -> Result<Self> {
        let q = QosConstraints {
            delta_tm,
            delta_dt,
            beta,
            theta,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_tm > 0.0 && self.delta_tm.is_finite()) {
            return Err(Error::param("delta_tm", format!("must be > 0, got {}", self.delta_tm)));
        }
        if !(self.delta_dt > 0.0 && self.delta_dt.is_finite()) {
            return Err(Error::param("delta_dt", format!("must be > 0, got {}", self.delta_dt)));
        }
        if !(self.beta > 1.0 && self.beta.is_finite()) {
            return Err(Error::param("beta", format!("must be > 1, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn theta_f64(&self) -> f64 {
        if self.theta {
            1.0
        } else {
            0.0
        }
    }

    /// Lower bound on R0 and the block-leader rates implied by the speed-up
    /// constraint, or 0 when that constraint is disabled.
    pub fn speedup_floor(&self, dirty_rate: f64) -> f64 {
        if self.theta {
            self.beta * dirty_rate
        } else {
            0.0
        }
    }
}

/// Concrete per-round rates `R0 .. R_{I_MAX+1}` (Mb/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    rates: Vec<f64>,
}

impl RateSchedule {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.len() < 2 {
            return Err(Error::InvalidSchedule(format!(
                "need at least 2 rates (round 0 and stop-and-copy), got {}",
                rates.len()
            )));
        }
        if let Some((i, r)) = rates.iter().enumerate().find(|(_, r)| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidSchedule(format!(
                "rate R{i} must be positive and finite, got {r}"
            )));
        }
        Ok(RateSchedule { rates })
    }

    /// Every round, including stop-and-copy, at the same rate.
    pub fn constant(i_max: usize, rate: f64) -> Result<Self> {
        Self::new(vec![rate; i_max + 2])
    }

    pub fn i_max(&self) -> usize {
        self.rates.len() - 2
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }
}

/// Per-round and aggregate results of a simulated migration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationOutcome {
    pub volumes: Vec<f64>,
    pub round_times: Vec<f64>,
    /// Iterative pre-copy time, rounds `0 ..= I_MAX`.
    pub t_ip: f64,
    /// Stop-and-copy time, round `I_MAX + 1`.
    pub t_sc: f64,
    pub t_mmt: f64,
    pub t_dt: f64,
    pub t_tm: f64,
    pub e_tot: f64,
    pub per_round_energy: Vec<f64>,
}

/// Run the pre-copy recursion for `schedule`.
pub fn simulate(
    schedule: &RateSchedule,
    workload: &Workload,
    scenario: &WirelessScenario,
    stages: &StageConstants,
) -> Result<MigrationOutcome> {
    workload.validate()?;
    let rates = schedule.rates();
    // RateSchedule::new already guarantees this; re-checked for deserialized values.
    if let Some((i, r)) = rates.iter().enumerate().find(|(_, r)| !(**r > 0.0)) {
        return Err(Error::InvalidSchedule(format!("rate R{i} = {r} is not positive")));
    }

    let n = rates.len();
    let mut volumes = Vec::with_capacity(n);
    let mut round_times = Vec::with_capacity(n);
    let mut per_round_energy = Vec::with_capacity(n);

    let mut volume = workload.m0;
    for &rate in rates {
        let t = volume / rate;
        volumes.push(volume);
        round_times.push(t);
        per_round_energy.push(scenario.power.round_energy(rate, volume));
        volume = workload.dirty_rate * t;
    }

    let t_sc = round_times[n - 1];
    let t_ip: f64 = round_times[..n - 1].iter().sum();
    let t_mmt = t_ip + t_sc;
    let t_dt = t_sc + stages.downtime_overhead();
    let t_tm = t_mmt + stages.fixed_total();
    let e_tot = scenario.e_setup + per_round_energy.iter().sum::<f64>();

    Ok(MigrationOutcome {
        volumes,
        round_times,
        t_ip,
        t_sc,
        t_mmt,
        t_dt,
        t_tm,
        e_tot,
        per_round_energy,
    })
}

/// QoS residuals; each constraint holds when its value is `<= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Total migration time, `theta * (t_tm / delta_tm - 1)`.
    pub psi1: f64,
    /// Downtime, `t_dt / delta_dt - 1`.
    pub psi2: f64,
    /// Speed-up, one `(round index, value)` pair per constrained rate.
    pub psi3: Vec<(usize, f64)>,
    /// Rate cap, `R_i / r_hat - 1` for every round.
    pub psi4: Vec<f64>,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.psi3
            .iter()
            .map(|(_, v)| *v)
            .chain(self.psi4.iter().copied())
            .fold(self.psi1.max(self.psi2), f64::max)
    }

    pub fn is_feasible(&self) -> bool {
        self.max() <= FEASIBILITY_TOL
    }
}

/// Evaluate the four QoS constraints for a simulated schedule.
///
/// `updated_indices` lists the rounds whose rates are free decision variables;
/// the speed-up constraint applies to round 0 and every updated pre-copy round
/// in that set (never to the stop-and-copy round).
pub fn constraint_residuals(
    outcome: &MigrationOutcome,
    schedule: &RateSchedule,
    workload: &Workload,
    scenario: &WirelessScenario,
    qos: &QosConstraints,
    updated_indices: &[usize],
) -> Residuals {
    let theta = qos.theta_f64();
    let rates = schedule.rates();
    let last = rates.len() - 1;

    let psi1 = theta * (outcome.t_tm / qos.delta_tm - 1.0);
    let psi2 = outcome.t_dt / qos.delta_dt - 1.0;

    let mut speedup_rounds: Vec<usize> = std::iter::once(0)
        .chain(updated_indices.iter().copied().filter(|&i| i > 0 && i < last))
        .collect();
    speedup_rounds.dedup();
    let psi3 = speedup_rounds
        .into_iter()
        .map(|i| (i, theta * (qos.beta * workload.dirty_rate / rates[i] - 1.0)))
        .collect();

    let psi4 = rates.iter().map(|r| r / scenario.r_hat - 1.0).collect();

    Residuals { psi1, psi2, psi3, psi4 }
}

/// Smallest number of pre-copy rounds for which some schedule meets the QoS
/// constraints, scanning up to [`MIN_ROUNDS_HARD_CAP`].
pub fn min_feasible_rounds(
    workload: &Workload,
    scenario: &WirelessScenario,
    qos: &QosConstraints,
    stages: &StageConstants,
) -> Result<usize> {
    min_feasible_rounds_capped(workload, scenario, qos, stages, MIN_ROUNDS_HARD_CAP)
}

/// Like [`min_feasible_rounds`] with an explicit scan cap.
///
/// Every round time falls when any rate rises, so at a fixed round count the
/// all-`r_hat` schedule has the smallest downtime and total time of any
/// schedule, and it satisfies the speed-up constraint whenever any schedule
/// does. Feasibility at `I` is therefore feasibility of that one schedule.
pub fn min_feasible_rounds_capped(
    workload: &Workload,
    scenario: &WirelessScenario,
    qos: &QosConstraints,
    stages: &StageConstants,
    cap: usize,
) -> Result<usize> {
    workload.validate()?;
    scenario.validate()?;
    qos.validate()?;
    stages.validate()?;

    let r_hat = scenario.r_hat;
    let w = workload.dirty_rate;
    if qos.theta && qos.beta * w > r_hat * (1.0 + FEASIBILITY_TOL) {
        return Err(Error::infeasible(format!(
            "speed-up constraint needs rates >= beta*w = {} above the rate cap r_hat = {} (Psi3 vs Psi4)",
            qos.beta * w,
            r_hat
        )));
    }
    if qos.delta_dt < stages.downtime_overhead() {
        return Err(Error::infeasible(format!(
            "downtime limit {} s is below the commitment + activation time {} s",
            qos.delta_dt,
            stages.downtime_overhead()
        )));
    }

    let ratio = w / r_hat;
    let first = workload.m0 / r_hat;
    // Round times at all-r_hat form a geometric sequence first * ratio^i.
    let mut t_round = first;
    let mut t_ip = 0.0;
    for i_max in 0..=cap {
        t_ip += t_round;
        t_round *= ratio;
        let t_sc = t_round;
        let psi2 = (t_sc + stages.downtime_overhead()) / qos.delta_dt - 1.0;
        let psi1 = qos.theta_f64() * ((t_ip + t_sc + stages.fixed_total()) / qos.delta_tm - 1.0);
        if psi2 <= FEASIBILITY_TOL && psi1 <= FEASIBILITY_TOL {
            return Ok(i_max);
        }
    }
    Err(Error::infeasible(format!(
        "no round count up to {cap} meets the downtime and total-time limits at the full rate {r_hat}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_scenario(e_setup: f64, r_hat: f64) -> WirelessScenario {
        WirelessScenario::new("unit", r_hat, e_setup, PowerModel::new(1.0, 2.0).unwrap()).unwrap()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn constant_rate_geometric_recursion() {
        let sched = RateSchedule::constant(1, 2.0).unwrap();
        let w = Workload::new(256.0, 1.0).unwrap();
        let out = simulate(&sched, &w, &unit_scenario(0.0, 10.0), &StageConstants::default()).unwrap();
        assert_eq!(out.volumes, vec![256.0, 128.0, 64.0]);
        assert_eq!(out.round_times, vec![128.0, 64.0, 32.0]);
        // closed form T_i = M0 w^i / R^(i+1)
        for (i, t) in out.round_times.iter().enumerate() {
            assert!(close(*t, 256.0 / 2f64.powi(i as i32 + 1), 1e-15));
        }
        assert_eq!(out.t_ip, 192.0);
        assert_eq!(out.t_sc, 32.0);
        assert_eq!(out.t_mmt, 224.0);
        assert_eq!(out.t_dt, 32.0);
        assert_eq!(out.e_tot, 896.0);
    }

    #[test]
    fn zero_dirty_rate_stops_after_round_zero() {
        let sched = RateSchedule::new(vec![2.0, 2.0]).unwrap();
        let w = Workload::new(100.0, 0.0).unwrap();
        let out = simulate(&sched, &w, &unit_scenario(5.0, 10.0), &StageConstants::default()).unwrap();
        assert_eq!(out.volumes, vec![100.0, 0.0]);
        assert_eq!(out.t_sc, 0.0);
        assert_eq!(out.t_dt, 0.0);
        assert_eq!(out.e_tot, 205.0);
    }

    #[test]
    fn xen_style_schedule_matches_product_form() {
        let rates = vec![5.0, 5.0 + 40.0 / 3.0, 5.0 + 80.0 / 3.0, 45.0];
        let sched = RateSchedule::new(rates.clone()).unwrap();
        let w = Workload::new(90.0, 5.0).unwrap();
        let out = simulate(&sched, &w, &unit_scenario(0.0, 50.0), &StageConstants::default()).unwrap();

        // independent route: V_i = M0 w^i / prod_{j<i} R_j
        let mut expected_e = 0.0;
        for i in 0..rates.len() {
            let denom: f64 = rates[..i].iter().product();
            let v = 90.0 * 5f64.powi(i as i32) / denom;
            assert!(close(out.volumes[i], v, 1e-12), "V{i}");
            expected_e += rates[i] * v;
        }
        assert!(close(out.e_tot, expected_e, 1e-12));
        assert!((out.volumes[2] - 24.545).abs() < 1e-3);
        assert!((out.volumes[3] - 3.876).abs() < 1e-3);
        assert!((out.e_tot - 3051.7).abs() < 0.05);
    }

    #[test]
    fn stage_constants_enter_aggregates() {
        let stages = StageConstants {
            t_pm: 1.0,
            t_re: 2.0,
            t_cm: 3.0,
            t_at: 4.0,
        };
        let sched = RateSchedule::constant(1, 2.0).unwrap();
        let w = Workload::new(256.0, 1.0).unwrap();
        let out = simulate(&sched, &w, &unit_scenario(0.0, 10.0), &stages).unwrap();
        assert_eq!(out.t_dt, 32.0 + 7.0);
        assert_eq!(out.t_tm, 224.0 + 10.0);
    }

    #[test]
    fn rejects_non_positive_rates() {
        assert!(matches!(
            RateSchedule::new(vec![1.0, 0.0]),
            Err(Error::InvalidSchedule(_))
        ));
        assert!(RateSchedule::new(vec![1.0]).is_err());
        assert!(RateSchedule::new(vec![1.0, f64::NAN]).is_err());
    }

    fn outcome_with(t_dt: f64, t_tm: f64) -> MigrationOutcome {
        MigrationOutcome {
            volumes: vec![],
            round_times: vec![],
            t_ip: 0.0,
            t_sc: t_dt,
            t_mmt: t_tm,
            t_dt,
            t_tm,
            e_tot: 0.0,
            per_round_energy: vec![],
        }
    }

    #[test]
    fn residual_ratios() {
        let sched = RateSchedule::new(vec![8.0, 8.0, 8.0]).unwrap();
        let w = Workload::new(10.0, 4.0).unwrap();
        let scen = unit_scenario(0.0, 16.0);
        let qos = QosConstraints::new(100.0, 64.0, 2.0, true).unwrap();
        let res = constraint_residuals(&outcome_with(32.0, 50.0), &sched, &w, &scen, &qos, &[0, 1, 2]);
        assert_eq!(res.psi2, -0.5);
        assert_eq!(res.psi1, -0.5);
        // beta * w = 8 = R0
        assert_eq!(res.psi3, vec![(0, 0.0), (1, 0.0)]);
        assert_eq!(res.psi4, vec![-0.5; 3]);
        assert!(res.is_feasible());
    }

    #[test]
    fn theta_zero_disables_time_and_speedup() {
        let sched = RateSchedule::new(vec![1.0, 1.0, 1.0]).unwrap();
        let w = Workload::new(10.0, 4.0).unwrap();
        let scen = unit_scenario(0.0, 16.0);
        let qos = QosConstraints::new(1.0, 64.0, 2.0, false).unwrap();
        let res = constraint_residuals(&outcome_with(32.0, 500.0), &sched, &w, &scen, &qos, &[0, 1, 2]);
        assert_eq!(res.psi1, 0.0);
        assert!(res.psi3.iter().all(|(_, v)| *v == 0.0));
    }

    #[test]
    fn min_rounds_wifi_like_case() {
        let w = Workload::new(256.0, 4.0).unwrap();
        let scen = unit_scenario(0.0, 9.9);
        let qos = QosConstraints::new(1e9, 2.55e-2, 2.0, true).unwrap();
        assert_eq!(
            min_feasible_rounds(&w, &scen, &qos, &StageConstants::default()).unwrap(),
            7
        );
    }

    #[test]
    fn min_rounds_zero_dirty_rate() {
        let w = Workload::new(256.0, 0.0).unwrap();
        let scen = unit_scenario(0.0, 9.9);
        let qos = QosConstraints::new(1e9, 1e-3, 2.0, true).unwrap();
        assert_eq!(
            min_feasible_rounds(&w, &scen, &qos, &StageConstants::default()).unwrap(),
            0
        );
    }

    #[test]
    fn min_rounds_contradictory_speedup() {
        let w = Workload::new(256.0, 5.0).unwrap();
        let scen = unit_scenario(0.0, 9.9);
        let qos = QosConstraints::new(1e9, 1.0, 2.33, true).unwrap();
        let err = min_feasible_rounds(&w, &scen, &qos, &StageConstants::default()).unwrap_err();
        assert!(err.is_infeasible());
        assert!(err.to_string().contains("Psi3 vs Psi4"));
    }

    #[test]
    fn min_rounds_downtime_below_fixed_stages() {
        let w = Workload::new(256.0, 1.0).unwrap();
        let scen = unit_scenario(0.0, 9.9);
        let qos = QosConstraints::new(1e9, 0.5, 2.0, true).unwrap();
        let stages = StageConstants {
            t_cm: 0.4,
            t_at: 0.2,
            ..Default::default()
        };
        assert!(min_feasible_rounds(&w, &scen, &qos, &stages)
            .unwrap_err()
            .is_infeasible());
    }

    #[test]
    fn power_is_increasing() {
        let p = PowerModel::new(0.09, 2.0).unwrap();
        assert!(p.power(2.0) > p.power(1.0));
        assert!(PowerModel::new(0.0, 2.0).is_err());
        assert!(PowerModel::new(1.0, -1.0).is_err());
    }
}
