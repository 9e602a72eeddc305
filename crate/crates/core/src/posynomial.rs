//! Posynomials in log-space.
//!
//! A posynomial `sum_k c_k * prod_j R_j^{a_kj}` with `x = ln R` becomes
//! `sum_k exp(ln c_k + a_k . x)`. Its logarithm is a log-sum-exp of affine
//! functions, hence convex in `x`.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub log_coeff: f64,
    pub exponents: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posynomial {
    dim: usize,
    terms: Vec<Monomial>,
}

/// Value, gradient and Hessian of `ln p(exp(x))`.
#[derive(Debug, Clone)]
pub struct LogDerivatives {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl Posynomial {
    pub fn new(dim: usize) -> Self {
        Posynomial { dim, terms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    /// Add `coeff * prod R^exponents`. Zero coefficients are dropped.
    pub fn push(&mut self, coeff: f64, exponents: Vec<f64>) {
        assert_eq!(exponents.len(), self.dim, "exponent vector dimension");
        assert!(coeff >= 0.0, "posynomial coefficients are non-negative");
        if coeff > 0.0 {
            self.terms.push(Monomial {
                log_coeff: coeff.ln(),
                exponents,
            });
        }
    }

    pub fn push_constant(&mut self, c: f64) {
        self.push(c, vec![0.0; self.dim]);
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn exponents_at(&self, x: &[f64]) -> Vec<f64> {
        self.terms
            .iter()
            .map(|t| t.log_coeff + t.exponents.iter().zip(x).map(|(a, xi)| a * xi).sum::<f64>())
            .collect()
    }

    /// `ln p(exp(x))`; `-inf` for the zero posynomial.
    pub fn log_eval(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.exponents_at(x))
    }

    /// `p(exp(x))`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.log_eval(x).exp()
    }

    pub fn log_grad(&self, x: &[f64]) -> (f64, DVector<f64>) {
        let z = self.exponents_at(x);
        let lse = log_sum_exp(&z);
        let mut g = DVector::zeros(self.dim);
        for (t, zk) in self.terms.iter().zip(&z) {
            let p = (zk - lse).exp();
            for (gj, a) in g.iter_mut().zip(&t.exponents) {
                *gj += p * a;
            }
        }
        (lse, g)
    }

    /// Softmax weights give `grad = sum p_k a_k` and
    /// `hess = sum p_k a_k a_k^T - grad grad^T`.
    pub fn log_derivatives(&self, x: &[f64]) -> LogDerivatives {
        let z = self.exponents_at(x);
        let lse = log_sum_exp(&z);
        let n = self.dim;
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        for (t, zk) in self.terms.iter().zip(&z) {
            let p = (zk - lse).exp();
            if p == 0.0 {
                continue;
            }
            let a = DVector::from_column_slice(&t.exponents);
            g.axpy(p, &a, 1.0);
            h.ger(p, &a, &a, 1.0);
        }
        h.ger(-1.0, &g, &g, 1.0);
        LogDerivatives {
            value: lse,
            grad: g,
            hess: h,
        }
    }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + z.iter().map(|zk| (zk - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Posynomial {
        // 3 R0 R1^-2 + 0.5 R1 + 2
        let mut p = Posynomial::new(2);
        p.push(3.0, vec![1.0, -2.0]);
        p.push(0.5, vec![0.0, 1.0]);
        p.push_constant(2.0);
        p
    }

    #[test]
    fn evaluates_in_rate_space() {
        let p = sample();
        let (r0, r1) = (1.7f64, 0.6f64);
        let direct = 3.0 * r0 / (r1 * r1) + 0.5 * r1 + 2.0;
        let v = p.eval(&[r0.ln(), r1.ln()]);
        assert!((v - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = sample();
        let x = [0.3, -0.4];
        let d = p.log_derivatives(&x);
        let h = 1e-5;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fd = (p.log_eval(&xp) - p.log_eval(&xm)) / (2.0 * h);
            assert!((fd - d.grad[j]).abs() < 1e-8, "grad {j}");
            let (_, gp) = p.log_grad(&xp);
            let (_, gm) = p.log_grad(&xm);
            for i in 0..2 {
                let fdh = (gp[i] - gm[i]) / (2.0 * h);
                assert!((fdh - d.hess[(i, j)]).abs() < 1e-7, "hess {i}{j}");
            }
        }
    }

    #[test]
    fn zero_posynomial() {
        let mut p = Posynomial::new(1);
        p.push(0.0, vec![1.0]);
        assert!(p.is_zero());
        assert_eq!(p.log_eval(&[0.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn lse_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
