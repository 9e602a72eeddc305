//! Exhaustive grid search used to check [`super::solve_tcbm`].
//!
//! `R0` and every block-leader rate range over a log-spaced grid between the
//! speed-up floor and `r_hat`. For each grid point the stop-and-copy rate is
//! chosen in closed form: the stop-and-copy energy `k0 R^(alpha-1) V` is
//! monotone in `R` and the time limits only bound `R` from below, so for
//! `alpha > 1` the best rate is the smallest one meeting both limits and for
//! `alpha <= 1` it is `r_hat`. The search walks the rounds incrementally and
//! prunes branches whose partial energy or partial time already exceeds the
//! incumbent or the limit; pruning never discards a feasible improving point.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{simulate, QosConstraints, RateSchedule, StageConstants, WirelessScenario, Workload};
use crate::partition::RatePartition;

/// Lower end of the grid, as a fraction of `r_hat`, for variables without a
/// speed-up floor.
pub const ORACLE_FLOOR_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub reduced_rates: Vec<f64>,
    pub schedule: RateSchedule,
    pub energy: f64,
    /// Grid points (including pruned subtrees) covered by the search.
    pub grid_size: u128,
}

struct Level {
    /// `k0 * R^(alpha-1)` and `1/R` for every grid value.
    grid: Vec<(f64, f64)>,
    /// Number of rounds this variable drives.
    rounds: usize,
}

struct Search<'a> {
    levels: Vec<Level>,
    w: f64,
    k0: f64,
    alpha: f64,
    r_hat: f64,
    qos: &'a QosConstraints,
    stages: &'a StageConstants,
    eliminate_last: bool,
    best_bits: &'a AtomicU64,
}

#[derive(Clone, Copy)]
struct State {
    volume: f64,
    energy: f64,
    time: f64,
    t_sc: f64,
}

impl Search<'_> {
    fn bound(&self) -> f64 {
        f64::from_bits(self.best_bits.load(Ordering::Relaxed))
    }

    fn offer(&self, e: f64) {
        let mut cur = self.best_bits.load(Ordering::Relaxed);
        while e < f64::from_bits(cur) {
            match self
                .best_bits
                .compare_exchange_weak(cur, e.to_bits(), Ordering::Relaxed, Ordering::Relaxed)
            {
                Ok(_) => break,
                Err(actual) => cur = actual,
            }
        }
    }

    fn time_budget(&self) -> f64 {
        if self.qos.theta {
            self.qos.delta_tm - self.stages.fixed_total()
        } else {
            f64::INFINITY
        }
    }

    /// Returns `(energy, chosen grid indices, last rate)` for the best leaf
    /// below `state`.
    fn descend(&self, depth: usize, state: State, picks: &mut Vec<usize>) -> Option<(f64, Vec<usize>, f64)> {
        if depth == self.levels.len() {
            return self.leaf(state).map(|(e, r)| (e, picks.clone(), r));
        }
        let level = &self.levels[depth];
        let budget = self.time_budget();
        let mut best: Option<(f64, Vec<usize>, f64)> = None;
        for (gi, &(pow, inv)) in level.grid.iter().enumerate() {
            let mut s = state;
            for _ in 0..level.rounds {
                s.energy += pow * s.volume;
                let t = s.volume * inv;
                s.time += t;
                s.t_sc = t;
                s.volume = self.w * t;
            }
            if s.time > budget || s.energy > self.bound() {
                continue;
            }
            picks.push(gi);
            if let Some(found) = self.descend(depth + 1, s, picks) {
                if best.as_ref().is_none_or(|b| found.0 < b.0) {
                    best = Some(found);
                }
            }
            picks.pop();
        }
        best
    }

    fn leaf(&self, s: State) -> Option<(f64, f64)> {
        let oh = self.stages.downtime_overhead();
        if !self.eliminate_last {
            let dt_ok = s.t_sc + oh <= self.qos.delta_dt;
            let tm_ok = !self.qos.theta || s.time + self.stages.fixed_total() <= self.qos.delta_tm;
            if dt_ok && tm_ok {
                self.offer(s.energy);
                return Some((s.energy, f64::NAN));
            }
            return None;
        }

        let v = s.volume;
        if v == 0.0 {
            self.offer(s.energy);
            return Some((s.energy, self.r_hat));
        }
        let dt_room = self.qos.delta_dt - oh;
        if dt_room <= 0.0 {
            return None;
        }
        let mut lb = v / dt_room;
        if self.qos.theta {
            let room = self.time_budget() - s.time;
            if room <= 0.0 {
                return None;
            }
            lb = lb.max(v / room);
        }
        if lb > self.r_hat {
            return None;
        }
        let rate = if self.alpha > 1.0 { lb } else { self.r_hat };
        let e = s.energy + self.k0 * rate.powf(self.alpha - 1.0) * v;
        if e > self.bound() {
            return None;
        }
        self.offer(e);
        Some((e, rate))
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 || hi <= lo {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else if i == 0 {
                lo
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Best schedule on a log-spaced grid of `grid_points` values per optimised
/// rate (the stop-and-copy rate is solved exactly, see the module docs).
pub fn brute_force_oracle(
    scenario: &WirelessScenario,
    workload: &Workload,
    qos: &QosConstraints,
    stages: &StageConstants,
    partition: &RatePartition,
    grid_points: usize,
) -> Result<OracleResult> {
    scenario.validate()?;
    workload.validate()?;
    qos.validate()?;
    stages.validate()?;
    if grid_points == 0 {
        return Err(Error::param("grid_points", "must be positive"));
    }

    let n = partition.num_vars();
    let eliminate_last = partition.is_stop_copy_var(n - 1);
    let grid_vars = if eliminate_last { n - 1 } else { n };
    let r_hat = scenario.r_hat;
    let floor = qos
        .speedup_floor(workload.dirty_rate)
        .max(r_hat * ORACLE_FLOOR_FRACTION);
    if floor > r_hat {
        return Err(Error::NoFeasibleGridPoint);
    }

    let k0 = scenario.power.k0;
    let alpha = scenario.power.alpha;
    let mut rounds_per_var = vec![0usize; n];
    for &v in partition.round_vars() {
        rounds_per_var[v] += 1;
    }
    let values = log_grid(floor, r_hat, grid_points);
    let levels: Vec<Level> = (0..grid_vars)
        .map(|var| Level {
            grid: values.iter().map(|&r| (k0 * r.powf(alpha - 1.0), 1.0 / r)).collect(),
            rounds: rounds_per_var[var],
        })
        .collect();
    let grid_size = (values.len() as u128).pow(grid_vars as u32);

    let best_bits = AtomicU64::new(f64::INFINITY.to_bits());
    let search = Search {
        levels,
        w: workload.dirty_rate,
        k0,
        alpha,
        r_hat,
        qos,
        stages,
        eliminate_last,
        best_bits: &best_bits,
    };

    let start = State {
        volume: workload.m0,
        energy: 0.0,
        time: 0.0,
        t_sc: 0.0,
    };
    // split the outermost level across workers
    let first = &search.levels[0];
    let budget = search.time_budget();
    let candidates: Vec<(f64, Vec<usize>, f64)> = (0..first.grid.len())
        .into_par_iter()
        .filter_map(|gi| {
            let (pow, inv) = first.grid[gi];
            let mut s = start;
            for _ in 0..first.rounds {
                s.energy += pow * s.volume;
                let t = s.volume * inv;
                s.time += t;
                s.t_sc = t;
                s.volume = search.w * t;
            }
            if s.time > budget {
                return None;
            }
            let mut picks = vec![gi];
            search.descend(1, s, &mut picks)
        })
        .collect();

    // deterministic choice: lowest energy, then lexicographically first indices
    let (_, picks, last_rate) = candidates
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)))
        .ok_or(Error::NoFeasibleGridPoint)?;

    let mut reduced: Vec<f64> = picks.iter().map(|&gi| values[gi]).collect();
    if eliminate_last {
        reduced.push(last_rate);
    }
    let schedule = partition.expand(&reduced)?;
    let energy = simulate(&schedule, workload, scenario, stages)?.e_tot;
    Ok(OracleResult {
        reduced_rates: reduced,
        schedule,
        energy,
        grid_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PowerModel;

    fn worked() -> (WirelessScenario, Workload, QosConstraints) {
        (
            WirelessScenario::new("unit", 10.0, 0.0, PowerModel::new(1.0, 2.0).unwrap()).unwrap(),
            Workload::new(100.0, 1.0).unwrap(),
            QosConstraints::new(100.0, 4.0, 2.0, true).unwrap(),
        )
    }

    #[test]
    fn worked_instance_within_one_percent() {
        let (s, w, q) = worked();
        let part = RatePartition::new(0, 0).unwrap();
        let res = brute_force_oracle(&s, &w, &q, &StageConstants::default(), &part, 400).unwrap();
        assert!((res.energy - 552.6).abs() / 552.6 < 0.01, "{}", res.energy);
    }

    #[test]
    fn refinement_is_monotone() {
        let (s, w, q) = worked();
        let part = RatePartition::new(0, 0).unwrap();
        // nested grids: 51 -> 101 -> 201 -> 401 share every coarse point
        let energies: Vec<f64> = [51, 101, 201, 401]
            .iter()
            .map(|&g| {
                brute_force_oracle(&s, &w, &q, &StageConstants::default(), &part, g)
                    .unwrap()
                    .energy
            })
            .collect();
        for pair in energies.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "{energies:?}");
        }
    }

    #[test]
    fn zero_dirty_rate_matches_closed_form() {
        let (s, _, q) = worked();
        let w = Workload::new(100.0, 0.0).unwrap();
        let part = RatePartition::new(1, 1).unwrap();
        // closed form: R0 = M0 / delta_tm = 1, E = k0 R0 M0 = 100. On the grid
        // the answer is the smallest grid rate meeting the time limit.
        let res = brute_force_oracle(&s, &w, &q, &StageConstants::default(), &part, 301).unwrap();
        let r0 = res.reduced_rates[0];
        let step = 10f64.powf(3.0 / 300.0);
        assert!(100.0 / r0 <= 100.0);
        assert!(r0 / step < 1.0 + 1e-12);
        assert!((res.energy - 100.0 * r0).abs() < 1e-9);
    }

    #[test]
    fn empty_box() {
        let (s, _, q) = worked();
        let w = Workload::new(100.0, 6.0).unwrap();
        let part = RatePartition::new(1, 1).unwrap();
        assert_eq!(
            brute_force_oracle(&s, &w, &q, &StageConstants::default(), &part, 50),
            Err(Error::NoFeasibleGridPoint)
        );
    }

    #[test]
    fn constant_partition_grid() {
        let (s, w, _) = worked();
        let q = QosConstraints::new(1e6, 1e6, 2.0, true).unwrap();
        // E(R) = 100 R + 100 is increasing: the grid minimum is the floor R = 2
        let res = brute_force_oracle(&s, &w, &q, &StageConstants::default(), &RatePartition::constant(0), 100).unwrap();
        assert_eq!(res.reduced_rates, vec![2.0]);
        assert!((res.energy - 300.0).abs() < 1e-9);
    }
}
