//! Dense convex quadratic programs `min 1/2 x'Px + q'x  s.t.  l <= Ax <= u`.
//!
//! Two independent solvers live here: an operator-splitting (ADMM) method
//! with active-set polishing for production use, and a primal-dual interior
//! point method used as a high-accuracy reference and for feasibility
//! checks.

pub(crate) mod admm;
pub(crate) mod interior;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub(crate) struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl QpProblem {
    pub fn n_vars(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_cons(&self) -> usize {
        self.a.nrows()
    }

    /// Largest violation of `l <= Ax <= u` at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let ax = &self.a * x;
        ax.iter()
            .zip(self.l.iter().zip(self.u.iter()))
            .map(|(v, (lo, hi))| (lo - v).max(v - hi).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Stationarity residual `||Px + q + A'y||_inf` for a multiplier vector
    /// using the sign convention y > 0 on upper-active rows.
    pub fn stationarity(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let r = &self.p * x + &self.q + self.a.tr_mul(y);
        r.amax()
    }
}
