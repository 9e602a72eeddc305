//! Log-barrier interior-point method for [`LogProblem`].
//!
//! Minimises `f(x) + B(x) / t` for an increasing sequence of `t`, where `B` is
//! the log barrier of the general constraints and of the box. Each centring
//! step is a damped Newton iteration; the duality gap after centring is
//! `m / t` in units of `ln E`, i.e. a relative energy gap.

use nalgebra::{DMatrix, DVector};

use super::problem::{LogProblem, Multipliers};
use super::SolverStatus;

/// Centring stops once the (unscaled) Newton decrement `lambda^2 / 2` drops
/// below this.
const CENTERING_TOL: f64 = 1e-9;
/// Below this decrement Newton steps are taken in full: at large `t` the
/// decrease they buy is under the resolution of the barrier objective, so a
/// line search cannot see it.
const PURE_NEWTON_TOL: f64 = 1e-3;
/// Full steps allowed per centring before the rounding floor is assumed.
const MAX_PURE_STEPS: usize = 20;
const BARRIER_GROWTH: f64 = 10.0;
const ARMIJO: f64 = 0.25;

#[derive(Debug, Clone)]
pub(crate) struct BarrierResult {
    pub x: Vec<f64>,
    pub multipliers: Multipliers,
    pub iterations: usize,
    pub status: SolverStatus,
}

pub(crate) struct BarrierSettings {
    pub gap_tol: f64,
    pub max_iterations: usize,
    pub max_step: f64,
}

struct Barrier<'a> {
    prob: &'a LogProblem,
    free: Vec<usize>,
}

impl<'a> Barrier<'a> {
    fn new(prob: &'a LogProblem) -> Self {
        let free = (0..prob.dim()).filter(|&k| !prob.is_fixed(k)).collect();
        Barrier { prob, free }
    }

    fn num_inequalities(&self) -> usize {
        self.prob.constraints().len() + 2 * self.free.len()
    }

    /// Scaled barrier objective, `None` outside the strict interior.
    fn phi(&self, x: &[f64], t: f64) -> Option<f64> {
        let mut b = 0.0;
        for c in self.prob.constraints() {
            let h = c.value(x);
            if !(h < 0.0) {
                return None;
            }
            b -= (-h).ln();
        }
        for &k in &self.free {
            let lo = x[k] - self.prob.lower()[k];
            let hi = self.prob.upper()[k] - x[k];
            if !(lo > 0.0 && hi > 0.0) {
                return None;
            }
            b -= lo.ln() + hi.ln();
        }
        Some(self.prob.objective(x) + b / t)
    }

    /// Gradient and Hessian of `t * phi` restricted to the free variables.
    fn derivatives(&self, x: &[f64], t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.prob.dim();
        let d = self.prob.energy_poly().log_derivatives(x);
        let mut g = d.grad * t;
        let mut h = d.hess * t;
        for c in self.prob.constraints() {
            let dc = c.poly.log_derivatives(x);
            let hv = dc.value - c.ln_limit;
            let inv = 1.0 / (-hv);
            g.axpy(inv, &dc.grad, 1.0);
            h += dc.hess * inv;
            h.ger(inv * inv, &dc.grad, &dc.grad, 1.0);
        }
        let m = self.free.len();
        let mut gf = DVector::zeros(m);
        let mut hf = DMatrix::zeros(m, m);
        for (a, &ka) in self.free.iter().enumerate() {
            gf[a] = g[ka];
            for (b, &kb) in self.free.iter().enumerate() {
                hf[(a, b)] = h[(ka, kb)];
            }
            let lo = x[ka] - self.prob.lower()[ka];
            let hi = self.prob.upper()[ka] - x[ka];
            gf[a] += -1.0 / lo + 1.0 / hi;
            hf[(a, a)] += 1.0 / (lo * lo) + 1.0 / (hi * hi);
        }
        debug_assert_eq!(g.len(), n);
        (gf, hf)
    }
}

pub(crate) fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>) -> Option<DVector<f64>> {
    let scale = h.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut shift = 0.0;
    for _ in 0..12 {
        let mut hs = h.clone();
        for i in 0..hs.nrows() {
            hs[(i, i)] += shift;
        }
        if let Some(ch) = hs.cholesky() {
            let d = ch.solve(&(-g));
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        shift = if shift == 0.0 { scale * 1e-14 } else { shift * 100.0 };
    }
    None
}

pub(crate) fn solve(prob: &LogProblem, x0: Vec<f64>, settings: &BarrierSettings) -> BarrierResult {
    let barrier = Barrier::new(prob);
    let m = barrier.num_inequalities() as f64;
    let mut x = x0;
    let mut t = 1.0;
    let mut iterations = 0;
    let mut status = SolverStatus::Converged;

    'outer: loop {
        // centring
        let mut pure_steps = 0;
        loop {
            if barrier.free.is_empty() {
                break;
            }
            if iterations >= settings.max_iterations {
                status = SolverStatus::IterationLimit;
                break 'outer;
            }
            let (g, h) = barrier.derivatives(&x, t);
            let Some(mut d) = newton_direction(&g, &h) else {
                break;
            };
            let decrement = -g.dot(&d);
            iterations += 1;
            if decrement / 2.0 <= CENTERING_TOL {
                break;
            }
            let norm_inf = d.amax();
            if norm_inf > settings.max_step {
                d *= settings.max_step / norm_inf;
            }

            let step = |s: f64| -> Vec<f64> {
                let mut next = x.clone();
                for (a, &k) in barrier.free.iter().enumerate() {
                    next[k] += s * d[a];
                }
                next
            };

            if decrement / 2.0 <= PURE_NEWTON_TOL {
                let trial = step(1.0);
                if barrier.phi(&trial, t).is_some() {
                    x = trial;
                    pure_steps += 1;
                    if pure_steps >= MAX_PURE_STEPS {
                        break;
                    }
                    continue;
                }
            }

            let phi0 = barrier.phi(&x, t).expect("iterate stays strictly feasible");
            let slope = g.dot(&d) / t;
            let slack = 1e-14 * phi0.abs().max(1.0);
            let mut s = 1.0;
            let mut accepted = None;
            while s > 1e-18 {
                let trial = step(s);
                if let Some(p) = barrier.phi(&trial, t) {
                    if p <= phi0 + ARMIJO * s * slope + slack {
                        accepted = Some(trial);
                        break;
                    }
                }
                s *= 0.5;
            }
            match accepted {
                Some(next) => x = next,
                // no representable progress left at this t
                None => break,
            }
        }

        if m / t <= settings.gap_tol {
            break;
        }
        t *= BARRIER_GROWTH;
    }

    let mut multipliers = Multipliers::default();
    for c in prob.constraints() {
        let h = c.value(&x);
        multipliers.set(c.kind, 1.0 / (t * -h));
    }
    let multipliers = refine_multipliers(prob, &x, &multipliers).unwrap_or(multipliers);

    BarrierResult {
        x,
        multipliers,
        iterations,
        status,
    }
}

/// Coordinates at least this far (log units) from both bounds count as interior.
const INTERIOR_GAP: f64 = 1e-6;
/// Constraints whose barrier multiplier is below this are taken as inactive.
const MIN_MULTIPLIER: f64 = 1e-9;

/// Multipliers from a nonnegative least-squares fit of stationarity on the
/// interior coordinates.
///
/// The barrier estimate `1 / (t |h|)` divides by a residual of order `1 / t`
/// that is computed as a difference of logarithms, so it is accurate only to
/// a few digits. The gradients are accurate, and the fit recovers the rest.
fn refine_multipliers(prob: &LogProblem, x: &[f64], barrier: &Multipliers) -> Option<Multipliers> {
    let interior: Vec<usize> = (0..prob.dim())
        .filter(|&k| {
            !prob.is_fixed(k) && x[k] - prob.lower()[k] >= INTERIOR_GAP && prob.upper()[k] - x[k] >= INTERIOR_GAP
        })
        .collect();
    if interior.is_empty() {
        return None;
    }
    let (_, gf) = prob.energy_poly().log_grad(x);
    let rhs = DVector::from_iterator(interior.len(), interior.iter().map(|&k| -gf[k]));
    let candidates: Vec<(usize, DVector<f64>)> = prob
        .constraints()
        .iter()
        .enumerate()
        .filter(|(_, c)| barrier.get(c.kind) >= MIN_MULTIPLIER)
        .map(|(j, c)| {
            let (_, gc) = c.poly.log_grad(x);
            (
                j,
                DVector::from_iterator(interior.len(), interior.iter().map(|&k| gc[k])),
            )
        })
        .collect();

    let mut best: (f64, Vec<(usize, f64)>) = (rhs.norm(), Vec::new());
    for mask in 1u32..(1 << candidates.len()) {
        let cols: Vec<&(usize, DVector<f64>)> = candidates
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, c)| c)
            .collect();
        if cols.len() > interior.len() {
            continue;
        }
        let g = DMatrix::from_columns(&cols.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>());
        let svd = g.clone().svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() <= 1e-12 * smax.max(1e-300) {
            continue;
        }
        let Ok(lambda) = svd.solve(&rhs, 0.0) else {
            continue;
        };
        if lambda.iter().any(|l| *l < 0.0) {
            continue;
        }
        let residual = (&g * &lambda - &rhs).norm();
        if residual < best.0 {
            best = (
                residual,
                cols.iter().zip(lambda.iter()).map(|((j, _), l)| (*j, *l)).collect(),
            );
        }
    }

    let mut m = Multipliers::default();
    for (j, l) in best.1 {
        m.set(prob.constraints()[j].kind, l);
    }
    Some(m)
}
