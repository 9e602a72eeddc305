//! The energy-minimisation problem over a partition, in log-rate space.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{QosConstraints, RateSchedule, StageConstants, WirelessScenario, Workload};
use crate::partition::RatePartition;
use crate::posynomial::Posynomial;

/// Which QoS limit a general constraint encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    TotalTime,
    Downtime,
}

/// `ln p(x) - ln_limit <= 0`.
#[derive(Debug, Clone)]
pub struct LogConstraint {
    pub kind: ConstraintKind,
    pub poly: Posynomial,
    pub ln_limit: f64,
}

impl LogConstraint {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.poly.log_eval(x) - self.ln_limit
    }
}

/// Lagrange multipliers for the two general constraints, in the log scaling
/// used by [`LogProblem`].
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Multipliers {
    pub total_time: f64,
    pub downtime: f64,
}

impl Multipliers {
    pub fn get(&self, kind: ConstraintKind) -> f64 {
        match kind {
            ConstraintKind::TotalTime => self.total_time,
            ConstraintKind::Downtime => self.downtime,
        }
    }

    pub fn set(&mut self, kind: ConstraintKind, v: f64) {
        match kind {
            ConstraintKind::TotalTime => self.total_time = v,
            ConstraintKind::Downtime => self.downtime = v,
        }
    }
}

/// Geometric program over the reduced log-rates `x = ln R`.
///
/// The objective is the log of the rate-dependent energy (the setup energy is
/// a constant offset and is added back by [`LogProblem::energy`]). The speed-up
/// and rate-cap constraints are box bounds on `x`; the total-time and downtime
/// limits are log-sum-exp constraints.
#[derive(Debug, Clone)]
pub struct LogProblem {
    partition: RatePartition,
    energy: Posynomial,
    total_time: Posynomial,
    downtime: Posynomial,
    constraints: Vec<LogConstraint>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    e_setup: f64,
    init: Vec<f64>,
}

/// Box bounds closer than this (in log-rate) pin the variable.
const FIXED_WIDTH: f64 = 1e-12;

impl LogProblem {
    pub fn new(
        scenario: &WirelessScenario,
        workload: &Workload,
        qos: &QosConstraints,
        stages: &StageConstants,
        partition: &RatePartition,
        rate_floor: f64,
    ) -> Result<Self> {
        scenario.validate()?;
        workload.validate()?;
        qos.validate()?;
        stages.validate()?;
        if !(rate_floor > 0.0) {
            return Err(Error::param("rate_floor", "must be > 0"));
        }

        let n = partition.num_vars();
        let rounds = partition.num_rounds();
        let w = workload.dirty_rate;
        let m0 = workload.m0;
        let k0 = scenario.power.k0;
        let alpha = scenario.power.alpha;

        let mut energy = Posynomial::new(n);
        let mut total_time = Posynomial::new(n);
        let mut downtime = Posynomial::new(n);

        // V_i = M0 w^i / prod_{j<i} R_j and T_i = V_i / R_i.
        let mut volume_exps = vec![0.0; n];
        for i in 0..rounds {
            let v = partition.var_of_round(i);
            let coeff = m0 * w.powi(i as i32);

            let mut e_exps = volume_exps.clone();
            e_exps[v] += alpha - 1.0;
            energy.push(k0 * coeff, e_exps);

            let mut t_exps = volume_exps.clone();
            t_exps[v] -= 1.0;
            total_time.push(coeff, t_exps.clone());
            if i == rounds - 1 {
                downtime.push(coeff, t_exps);
            }
            volume_exps[v] -= 1.0;
        }
        total_time.push_constant(stages.fixed_total());
        downtime.push_constant(stages.downtime_overhead());

        let mut constraints = Vec::with_capacity(2);
        if qos.theta {
            constraints.push(LogConstraint {
                kind: ConstraintKind::TotalTime,
                poly: total_time.clone(),
                ln_limit: qos.delta_tm.ln(),
            });
        }
        constraints.push(LogConstraint {
            kind: ConstraintKind::Downtime,
            poly: downtime.clone(),
            ln_limit: qos.delta_dt.ln(),
        });

        let ln_hi = scenario.r_hat.ln();
        let ln_floor = rate_floor.min(scenario.r_hat).ln();
        let speedup = qos.speedup_floor(w);
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        for var in 0..n {
            let lo = if partition.is_speedup_constrained(var) && speedup > 0.0 {
                speedup.ln().max(ln_floor)
            } else {
                ln_floor
            };
            lower.push(lo);
            upper.push(ln_hi);
        }

        let guess = (qos.beta * w).max(rate_floor);
        let ln_init = (0.5 * (guess.ln() + ln_hi)).min(ln_hi);
        let init = lower
            .iter()
            .zip(&upper)
            .map(|(&lo, &hi)| ln_init.max(lo).min(hi))
            .collect();

        Ok(LogProblem {
            partition: partition.clone(),
            energy,
            total_time,
            downtime,
            constraints,
            lower,
            upper,
            e_setup: scenario.e_setup,
            init,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn partition(&self) -> &RatePartition {
        &self.partition
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn constraints(&self) -> &[LogConstraint] {
        &self.constraints
    }

    pub fn energy_poly(&self) -> &Posynomial {
        &self.energy
    }

    /// Starting point: every variable at the log-midpoint of `beta*w` and the
    /// rate cap, clamped into its box.
    pub fn initial_point(&self) -> Vec<f64> {
        self.init.clone()
    }

    pub fn box_is_empty(&self) -> bool {
        self.lower.iter().zip(&self.upper).any(|(lo, hi)| lo - hi > FIXED_WIDTH)
    }

    /// Variables whose box has collapsed to a point.
    pub fn is_fixed(&self, var: usize) -> bool {
        self.upper[var] - self.lower[var] <= FIXED_WIDTH
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            // an empty box resolves to the rate cap
            *xi = xi.max(*lo).min(*hi);
        }
    }

    /// `ln` of the rate-dependent energy.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.energy.log_eval(x)
    }

    /// Total energy including the setup term (J).
    pub fn energy(&self, x: &[f64]) -> f64 {
        self.e_setup + self.energy.eval(x)
    }

    pub fn total_time(&self, x: &[f64]) -> f64 {
        self.total_time.eval(x)
    }

    pub fn downtime(&self, x: &[f64]) -> f64 {
        self.downtime.eval(x)
    }

    pub fn total_time_poly(&self) -> &Posynomial {
        &self.total_time
    }

    pub fn downtime_poly(&self) -> &Posynomial {
        &self.downtime
    }

    pub fn constraint_values(&self, x: &[f64]) -> Vec<f64> {
        self.constraints.iter().map(|c| c.value(x)).collect()
    }

    /// Largest general-constraint violation in log units (`<= 0` when met).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.value(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `ln E(x) + sum_j mu_j h_j(x)`.
    pub fn lagrangian(&self, x: &[f64], mult: &Multipliers) -> f64 {
        self.objective(x)
            + self
                .constraints
                .iter()
                .map(|c| mult.get(c.kind) * c.value(x))
                .sum::<f64>()
    }

    pub fn lagrangian_grad(&self, x: &[f64], mult: &Multipliers) -> DVector<f64> {
        let (_, mut g) = self.energy.log_grad(x);
        for c in &self.constraints {
            let mu = mult.get(c.kind);
            if mu != 0.0 {
                let (_, gc) = c.poly.log_grad(x);
                g.axpy(mu, &gc, 1.0);
            }
        }
        g
    }

    pub fn rates(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|xi| xi.exp()).collect()
    }

    pub fn schedule(&self, x: &[f64]) -> Result<RateSchedule> {
        self.partition.expand(&self.rates(x))
    }

    pub fn upper_point(&self) -> Vec<f64> {
        self.upper.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, PowerModel};

    #[test]
    fn posynomials_agree_with_simulation() {
        let scen = WirelessScenario::new("t", 12.0, 1.5, PowerModel::new(0.3, 2.4).unwrap()).unwrap();
        let wl = Workload::new(80.0, 1.7).unwrap();
        let qos = QosConstraints::new(100.0, 1.0, 2.0, true).unwrap();
        let stages = StageConstants {
            t_pm: 0.1,
            t_re: 0.2,
            t_cm: 0.3,
            t_at: 0.4,
        };
        let part = RatePartition::new(5, 2).unwrap();
        let prob = LogProblem::new(&scen, &wl, &qos, &stages, &part, 1e-6).unwrap();
        let rates = [3.5, 4.0, 7.5, 9.0];
        let x: Vec<f64> = rates.iter().map(|r: &f64| r.ln()).collect();
        let out = simulate(&part.expand(&rates).unwrap(), &wl, &scen, &stages).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / b;
        assert!(rel(prob.energy(&x), out.e_tot) < 1e-12);
        assert!(rel(prob.total_time(&x), out.t_tm) < 1e-12);
        assert!(rel(prob.downtime(&x), out.t_dt) < 1e-12);
    }

    #[test]
    fn box_bounds() {
        let scen = WirelessScenario::new("t", 10.0, 0.0, PowerModel::new(1.0, 2.0).unwrap()).unwrap();
        let wl = Workload::new(100.0, 1.0).unwrap();
        let qos = QosConstraints::new(100.0, 4.0, 2.0, true).unwrap();
        let part = RatePartition::new(2, 1).unwrap();
        let prob = LogProblem::new(&scen, &wl, &qos, &StageConstants::default(), &part, 1e-6).unwrap();
        assert_eq!(prob.lower()[0], 2f64.ln());
        assert_eq!(prob.lower()[1], 2f64.ln());
        assert_eq!(prob.lower()[2], 1e-6f64.ln());
        assert!(prob.upper().iter().all(|u| *u == 10f64.ln()));
        assert_eq!(prob.constraints().len(), 2);
        assert!(!prob.box_is_empty());

        let qos0 = QosConstraints { theta: false, ..qos };
        let prob0 = LogProblem::new(&scen, &wl, &qos0, &StageConstants::default(), &part, 1e-6).unwrap();
        assert_eq!(prob0.constraints().len(), 1);
        assert_eq!(prob0.lower()[0], 1e-6f64.ln());
    }
}
