//! Online bandwidth manager for time-varying dirty rate and power constant.
//!
//! Each iteration takes one primal step on the augmented Lagrangian
//! `L(x, mu) = ln E(x) + sum_j (max(0, mu_j + rho h_j(x))^2 - mu_j^2) / (2 rho)`
//! in log-rate space (a projected Newton direction, every coordinate clipped
//! to `a_max`), projects onto the speed-up / rate-cap box, and then takes one
//! projected dual ascent step `mu_j <- max(0, mu_j + rho h_j)`.
//!
//! When the current parameters admit no feasible schedule at all (empty box,
//! or even the all-`r_hat` schedule misses a time limit) the rates walk
//! towards `r_hat` at the same clipped pace and the multipliers are frozen.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    constraint_residuals, simulate, QosConstraints, StageConstants, WirelessScenario, Workload, FEASIBILITY_TOL,
};
use crate::partition::RatePartition;
use crate::solver::barrier::newton_direction;
use crate::solver::{LogProblem, Multipliers};

/// Lower bound used for variables without a speed-up floor.
const TRACKER_RATE_FLOOR: f64 = 1e-6;
/// Distance (log units) under which a coordinate counts as sitting on a bound.
const BOUND_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Largest per-iteration change of any log-rate.
    pub a_max: f64,
    /// Number of iterations.
    pub horizon: usize,
    /// Relative energy band defining steady state.
    pub settle_tolerance: f64,
    /// Augmented-Lagrangian penalty `rho`.
    pub penalty: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            a_max: 0.5,
            horizon: 90,
            settle_tolerance: 0.01,
            penalty: 10.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_max > 0.0 && self.a_max.is_finite()) {
            return Err(Error::param("a_max", format!("must be > 0, got {}", self.a_max)));
        }
        if self.horizon == 0 {
            return Err(Error::param("horizon", "must be >= 1"));
        }
        if !(self.settle_tolerance > 0.0 && self.settle_tolerance.is_finite()) {
            return Err(Error::param("settle_tolerance", "must be > 0"));
        }
        if !(self.penalty > 0.0 && self.penalty.is_finite()) {
            return Err(Error::param("penalty", "must be > 0"));
        }
        Ok(())
    }
}

/// Parameters in force from iteration `start` until the next segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub dirty_rate: f64,
    pub k0: f64,
}

/// Piecewise-constant dirty rate and power constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterTimeline {
    segments: Vec<Segment>,
}

impl ParameterTimeline {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let t = ParameterTimeline { segments };
        t.validate()?;
        Ok(t)
    }

    pub fn constant(dirty_rate: f64, k0: f64) -> Result<Self> {
        Self::new(vec![Segment {
            start: 0,
            dirty_rate,
            k0,
        }])
    }

    /// Segments switching at `change_points`; a single value in `dirty_rates`
    /// or `k0s` is held across every segment.
    pub fn steps(change_points: &[usize], dirty_rates: &[f64], k0s: &[f64]) -> Result<Self> {
        let n = change_points.len() + 1;
        let pick = |v: &[f64], i: usize, name: &'static str| -> Result<f64> {
            match v.len() {
                1 => Ok(v[0]),
                l if l == n => Ok(v[i]),
                l => Err(Error::param(
                    name,
                    format!("need 1 or {n} values for {} change points, got {l}", n - 1),
                )),
            }
        };
        let mut segments = Vec::with_capacity(n);
        for i in 0..n {
            segments.push(Segment {
                start: if i == 0 { 0 } else { change_points[i - 1] },
                dirty_rate: pick(dirty_rates, i, "dirty_rates")?,
                k0: pick(k0s, i, "k0s")?,
            });
        }
        Self::new(segments)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .segments
            .first()
            .ok_or_else(|| Error::param("timeline", "needs at least one segment"))?;
        if first.start != 0 {
            return Err(Error::param("timeline", "first segment must start at 0"));
        }
        for pair in self.segments.windows(2) {
            if pair[1].start <= pair[0].start {
                return Err(Error::param("timeline", "change points must increase"));
            }
        }
        for s in &self.segments {
            if !(s.dirty_rate > 0.0 && s.dirty_rate.is_finite()) {
                return Err(Error::param("dirty_rate", format!("must be > 0, got {}", s.dirty_rate)));
            }
            if !(s.k0 > 0.0 && s.k0.is_finite()) {
                return Err(Error::param("k0", format!("must be > 0, got {}", s.k0)));
            }
        }
        Ok(())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment_index(&self, n: usize) -> usize {
        self.segments.partition_point(|s| s.start <= n) - 1
    }

    pub fn at(&self, n: usize) -> Segment {
        self.segments[self.segment_index(n)]
    }

    /// Iteration ranges of the segments that start before `horizon`.
    pub fn ranges(&self, horizon: usize) -> Vec<Range<usize>> {
        let starts: Vec<usize> = self.segments.iter().map(|s| s.start).filter(|&s| s < horizon).collect();
        starts
            .iter()
            .enumerate()
            .map(|(i, &s)| s..starts.get(i + 1).copied().unwrap_or(horizon))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerState {
    /// Reduced log-rates.
    pub x: Vec<f64>,
    pub multipliers: Multipliers,
}

impl TrackerState {
    /// The problem's starting point with zero multipliers.
    pub fn initial(prob: &LogProblem) -> Self {
        let mut x = prob.initial_point();
        prob.project(&mut x);
        TrackerState {
            x,
            multipliers: Multipliers::default(),
        }
    }
}

/// Whether any schedule of the partition meets the limits of `prob`.
pub fn instance_feasible(prob: &LogProblem) -> bool {
    !prob.box_is_empty() && prob.max_violation(&prob.upper_point()) <= FEASIBILITY_TOL.ln_1p()
}

fn clip(v: f64, a_max: f64) -> f64 {
    v.clamp(-a_max, a_max)
}

/// Augmented Lagrangian value, gradient and Hessian.
fn augmented(prob: &LogProblem, x: &[f64], mult: &Multipliers, rho: f64) -> (f64, DVector<f64>, DMatrix<f64>) {
    let d = prob.energy_poly().log_derivatives(x);
    let mut value = d.value;
    let mut g = d.grad;
    let mut h = d.hess;
    for c in prob.constraints() {
        let mu = mult.get(c.kind);
        let dc = c.poly.log_derivatives(x);
        let hv = dc.value - c.ln_limit;
        let a = (mu + rho * hv).max(0.0);
        value += (a * a - mu * mu) / (2.0 * rho);
        if a > 0.0 {
            g.axpy(a, &dc.grad, 1.0);
            h += dc.hess * a;
            h.ger(rho, &dc.grad, &dc.grad, 1.0);
        }
    }
    (value, g, h)
}

fn al_value(prob: &LogProblem, x: &[f64], mult: &Multipliers, rho: f64) -> f64 {
    let mut value = prob.objective(x);
    for c in prob.constraints() {
        let mu = mult.get(c.kind);
        let a = (mu + rho * c.value(x)).max(0.0);
        value += (a * a - mu * mu) / (2.0 * rho);
    }
    value
}

/// Clipped projected-Newton step on the augmented Lagrangian.
fn primal_step(prob: &LogProblem, x: &[f64], mult: &Multipliers, config: &TrackerConfig) -> Vec<f64> {
    let rho = config.penalty;
    let (l0, g, h) = augmented(prob, x, mult, rho);
    let (lo, hi) = (prob.lower(), prob.upper());

    // drop coordinates pinned by the box or pressed against an active bound
    let free: Vec<usize> = (0..x.len())
        .filter(|&k| {
            !(prob.is_fixed(k)
                || (x[k] <= lo[k] + BOUND_EPS && g[k] > 0.0)
                || (x[k] >= hi[k] - BOUND_EPS && g[k] < 0.0))
        })
        .collect();
    if free.is_empty() {
        return x.to_vec();
    }
    let m = free.len();
    let gf = DVector::from_iterator(m, free.iter().map(|&k| g[k]));
    let hf = DMatrix::from_fn(m, m, |a, b| h[(free[a], free[b])]);
    let dir = newton_direction(&gf, &hf).unwrap_or_else(|| -gf.clone());

    let mut step = vec![0.0; x.len()];
    for (a, &k) in free.iter().enumerate() {
        step[k] = clip(dir[a], config.a_max);
    }

    let mut s = 1.0;
    for _ in 0..40 {
        let mut trial: Vec<f64> = x.iter().zip(&step).map(|(xi, di)| xi + s * di).collect();
        prob.project(&mut trial);
        if al_value(prob, &trial, mult, rho) <= l0 + 1e-14 * l0.abs().max(1.0) {
            return trial;
        }
        s *= 0.5;
    }
    x.to_vec()
}

/// One tracker iteration for the parameters encoded in `prob`.
pub fn tracker_step(state: &TrackerState, prob: &LogProblem, config: &TrackerConfig) -> TrackerState {
    if !instance_feasible(prob) {
        let x = state
            .x
            .iter()
            .zip(prob.upper())
            .map(|(xi, hi)| xi + clip(hi - xi, config.a_max))
            .collect();
        return TrackerState {
            x,
            multipliers: state.multipliers,
        };
    }

    let x = primal_step(prob, &state.x, &state.multipliers, config);
    let mut multipliers = state.multipliers;
    for c in prob.constraints() {
        let mu = multipliers.get(c.kind);
        multipliers.set(c.kind, (mu + config.penalty * c.value(&x)).max(0.0));
    }
    TrackerState { x, multipliers }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub n: usize,
    pub dirty_rate: f64,
    pub k0: f64,
    /// Total energy including the setup term (J).
    pub energy: f64,
    pub feasible: bool,
    pub reduced_rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerTrace {
    pub rows: Vec<TraceRow>,
    pub segments: Vec<Range<usize>>,
}

impl TrackerTrace {
    pub fn energies(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.energy).collect()
    }

    /// Trace as CSV: `n, w_bar, k0, E_tot, feasible, R_0 .. R_{Q+1}`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let nvars = self.rows.first().map_or(0, |r| r.reduced_rates.len());
        let mut header: Vec<String> = ["n", "w_bar", "k0", "E_tot", "feasible"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..nvars).map(|i| format!("R_{i}")));
        wtr.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.n.to_string(),
                r.dirty_rate.to_string(),
                r.k0.to_string(),
                r.energy.to_string(),
                u8::from(r.feasible).to_string(),
            ];
            rec.extend(r.reduced_rates.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Run the tracker over `config.horizon` iterations of `timeline`.
#[allow(clippy::too_many_arguments)]
pub fn run_tracker(
    scenario: &WirelessScenario,
    workload: &Workload,
    qos: &QosConstraints,
    stages: &StageConstants,
    partition: &RatePartition,
    timeline: &ParameterTimeline,
    config: &TrackerConfig,
) -> Result<TrackerTrace> {
    config.validate()?;
    timeline.validate()?;
    scenario.validate()?;
    workload.validate()?;

    let build = |seg: &Segment| -> Result<(WirelessScenario, Workload, LogProblem)> {
        let sc = scenario.with_k0(seg.k0);
        let wl = workload.with_dirty_rate(seg.dirty_rate);
        let prob = LogProblem::new(&sc, &wl, qos, stages, partition, TRACKER_RATE_FLOOR)?;
        Ok((sc, wl, prob))
    };

    let mut seg_idx = timeline.segment_index(0);
    let mut current = build(&timeline.segments()[seg_idx])?;
    let mut state = TrackerState::initial(&current.2);
    let mut rows = Vec::with_capacity(config.horizon);

    for n in 0..config.horizon {
        let idx = timeline.segment_index(n);
        if idx != seg_idx {
            seg_idx = idx;
            current = build(&timeline.segments()[seg_idx])?;
        }
        let (sc, wl, prob) = &current;
        state = tracker_step(&state, prob, config);

        let rates = prob.rates(&state.x);
        let schedule = partition.expand(&rates)?;
        let outcome = simulate(&schedule, wl, sc, stages)?;
        let feasible =
            constraint_residuals(&outcome, &schedule, wl, sc, qos, partition.updated_indices()).is_feasible();
        let seg = timeline.segments()[seg_idx];
        rows.push(TraceRow {
            n,
            dirty_rate: seg.dirty_rate,
            k0: seg.k0,
            energy: outcome.e_tot,
            feasible,
            reduced_rates: rates,
        });
    }

    Ok(TrackerTrace {
        rows,
        segments: timeline.ranges(config.horizon),
    })
}

/// Iterations after the start of segment `segment` until the energy stays
/// within `tolerance` (relative) of the segment's final value.
pub fn settling_time(trace: &TrackerTrace, segment: usize, tolerance: f64) -> Result<usize> {
    let range = trace
        .segments
        .get(segment)
        .cloned()
        .ok_or_else(|| Error::param("segment", format!("no segment {segment}")))?;
    let energies: Vec<f64> = trace.rows[range].iter().map(|r| r.energy).collect();
    let last = *energies
        .last()
        .ok_or_else(|| Error::param("segment", "empty segment"))?;
    let band = tolerance * last.abs();
    let k = energies
        .iter()
        .rposition(|e| (e - last).abs() > band)
        .map_or(0, |i| i + 1);
    if energies.len() > 1 && k == energies.len() - 1 {
        return Err(Error::NeverSettled);
    }
    Ok(k)
}
