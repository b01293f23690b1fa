//! Variance-enhancement projection directions.
//!
//! For a loading `g` the direction `u` minimizes `u' S u` subject to
//!
//! ```text
//! ||S u - g||_inf        <= ||g|| lambda
//! |g' S u - ||g||^2|     <= ||g||^2 lambda
//! ||X u||_inf            <= ||g|| mu
//! ```
//!
//! with `S = X'X / n`. Every constraint is homogeneous in `g`, so the QP is
//! solved for `g / ||g||` and the solution rescaled.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::inf_norm;
use crate::qp::admm::{self, AdmmSettings, AdmmStatus};
use crate::qp::interior::{self, IpmSettings};
use crate::qp::QpProblem;

/// Tie-breaking ridge on the objective, relative to `u'u`.
const TIE_BREAK: f64 = 1e-10;
/// Minimum uniform relaxation above which a problem is declared infeasible.
pub const INFEASIBILITY_THRESHOLD: f64 = 1e-7;
pub const MAX_ESCALATIONS: usize = 20;
pub const ESCALATION_FACTOR: f64 = 1.5;
/// Downward steps tried by [`refine_lambda`].
pub const MAX_REFINEMENTS: usize = 9;
/// Largest tolerated growth of `sqrt(u' S u)` while refining.
pub const REFINE_SD_RATIO: f64 = 3.0;
/// Iteration cap for trial solves during refinement.
const REFINE_MAX_ITER: usize = 2_500;
pub const REFERENCE_MAX_D: usize = 25;
pub const REFERENCE_MAX_N: usize = 60;

#[derive(Debug, Clone)]
pub struct VepdProblem {
    pub sigma_hat: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub g: DVector<f64>,
    pub lambda: f64,
    pub mu: f64,
}

impl VepdProblem {
    /// Builds the problem with `sigma_hat = x'x / n`.
    pub fn new(x: DMatrix<f64>, g: DVector<f64>, lambda: f64, mu: f64) -> Result<Self> {
        let sigma_hat = crate::linalg::gram(&x);
        Self::from_parts(sigma_hat, x, g, lambda, mu)
    }

    pub fn from_parts(
        sigma_hat: DMatrix<f64>,
        x: DMatrix<f64>,
        g: DVector<f64>,
        lambda: f64,
        mu: f64,
    ) -> Result<Self> {
        let d = g.len();
        if sigma_hat.shape() != (d, d) || x.ncols() != d || x.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "projection problem: sigma_hat {:?}, x {:?}, g has {d} entries",
                sigma_hat.shape(),
                x.shape()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite() && mu > 0.0 && mu.is_finite()) {
            return Err(Error::Config(format!(
                "lambda and mu must be positive and finite (got {lambda}, {mu})"
            )));
        }
        if g.iter().all(|v| *v == 0.0) {
            return Err(Error::Dimension("loading vector is identically zero".into()));
        }
        let scale = 1.0 + sigma_hat.amax();
        let asym = (&sigma_hat - sigma_hat.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::Dimension(format!("sigma_hat is not symmetric ({asym:.2e})")));
        }
        let implied = crate::linalg::gram(&x);
        let gap = (&implied - &sigma_hat).amax();
        if gap > 1e-10 * scale {
            return Err(Error::Dimension(format!("sigma_hat differs from x'x/n by {gap:.2e}")));
        }
        Ok(Self {
            sigma_hat,
            x,
            g,
            lambda,
            mu,
        })
    }

    pub fn d(&self) -> usize {
        self.g.len()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// The same problem at a different `lambda`.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    /// QP in the normalized loading `g / ||g||`.
    fn normalized_qp(&self) -> QpProblem {
        let d = self.d();
        let n = self.n();
        let gn = &self.g / self.g.norm();
        let sg = &self.sigma_hat * &gn;
        let mut p = &self.sigma_hat * 2.0;
        for i in 0..d {
            p[(i, i)] += 2.0 * TIE_BREAK;
        }
        let m = d + 1 + n;
        let mut a = DMatrix::zeros(m, d);
        a.rows_mut(0, d).copy_from(&self.sigma_hat);
        a.row_mut(d).copy_from(&sg.transpose());
        a.rows_mut(d + 1, n).copy_from(&self.x);
        let mut l = DVector::zeros(m);
        let mut u = DVector::zeros(m);
        for i in 0..d {
            l[i] = gn[i] - self.lambda;
            u[i] = gn[i] + self.lambda;
        }
        l[d] = 1.0 - self.lambda;
        u[d] = 1.0 + self.lambda;
        for i in 0..n {
            l[d + 1 + i] = -self.mu;
            u[d + 1 + i] = self.mu;
        }
        QpProblem {
            p,
            q: DVector::zeros(d),
            a,
            l,
            u,
        }
    }

    /// Slack of each constraint group at `u` (negative means violated).
    pub fn slacks(&self, u: &DVector<f64>) -> ConstraintSlacks {
        let gnorm = self.g.norm();
        let su = &self.sigma_hat * u;
        ConstraintSlacks {
            projection: gnorm * self.lambda - inf_norm(&(&su - &self.g)),
            alignment: gnorm * gnorm * self.lambda - (self.g.dot(&su) - gnorm * gnorm).abs(),
            design: gnorm * self.mu - inf_norm(&(&self.x * u)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSlacks {
    /// `||g|| lambda - ||S u - g||_inf`
    pub projection: f64,
    /// `||g||^2 lambda - |g'S u - ||g||^2|`
    pub alignment: f64,
    /// `||g|| mu - ||X u||_inf`
    pub design: f64,
}

impl ConstraintSlacks {
    pub fn min(&self) -> f64 {
        self.projection.min(self.alignment).min(self.design)
    }

    pub fn satisfied(&self, tol: f64) -> bool {
        self.min() >= -tol
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionDirection {
    pub u: DVector<f64>,
    /// `u' S u`
    pub objective: f64,
    pub residuals: ConstraintSlacks,
    pub lambda_used: f64,
    pub mu_used: f64,
    /// Relative stationarity residual of the normalized QP.
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl ProjectionDirection {
    /// The zero direction, used when the loading vanishes.
    pub fn zero(d: usize, lambda: f64, mu: f64) -> Self {
        Self {
            u: DVector::zeros(d),
            objective: 0.0,
            residuals: ConstraintSlacks {
                projection: 0.0,
                alignment: 0.0,
                design: 0.0,
            },
            lambda_used: lambda,
            mu_used: mu,
            kkt_residual: 0.0,
            iterations: 0,
        }
    }
}

fn relative_stationarity(qp: &QpProblem, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let px = &qp.p * x;
    let aty = qp.a.tr_mul(y);
    let r = (&px + &qp.q + &aty).amax();
    r / (1.0 + px.amax().max(aty.amax()))
}

fn finish(
    problem: &VepdProblem,
    qp: &QpProblem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    iterations: usize,
) -> ProjectionDirection {
    let u = x * problem.g.norm();
    let objective = u.dot(&(&problem.sigma_hat * &u)).max(0.0);
    ProjectionDirection {
        residuals: problem.slacks(&u),
        kkt_residual: relative_stationarity(qp, x, y),
        objective,
        u,
        lambda_used: problem.lambda,
        mu_used: problem.mu,
        iterations,
    }
}

/// Minimum uniform relaxation of the normalized constraints.
fn infeasibility(qp: &QpProblem) -> f64 {
    interior::min_relaxation(qp)
}

pub fn solve_vepd(problem: &VepdProblem) -> Result<ProjectionDirection> {
    let qp = problem.normalized_qp();
    let sol = admm::solve(&qp, &AdmmSettings::default());
    match sol.status {
        AdmmStatus::Polished | AdmmStatus::Solved => {
            Ok(finish(problem, &qp, &sol.x, &sol.y, sol.iterations))
        }
        AdmmStatus::PrimalInfeasible | AdmmStatus::MaxIterations => {
            let t = infeasibility(&qp);
            if t > INFEASIBILITY_THRESHOLD {
                Err(Error::Infeasible {
                    lambda: problem.lambda,
                    violation: t,
                })
            } else {
                Err(Error::NonConvergence {
                    iterations: sol.iterations,
                    primal_residual: sol.prim_res,
                    dual_residual: sol.dual_res,
                })
            }
        }
    }
}

/// Interior-point solve of the same program for small instances.
pub fn vepd_reference_solver(problem: &VepdProblem) -> Result<ProjectionDirection> {
    if problem.d() > REFERENCE_MAX_D || problem.n() > REFERENCE_MAX_N {
        return Err(Error::TooLarge {
            d: problem.d(),
            n: problem.n(),
        });
    }
    let qp = problem.normalized_qp();
    let t = infeasibility(&qp);
    if t > INFEASIBILITY_THRESHOLD {
        return Err(Error::Infeasible {
            lambda: problem.lambda,
            violation: t,
        });
    }
    let settings = IpmSettings {
        tol: 1e-11,
        max_iter: 500,
        ..IpmSettings::default()
    };
    let sol = interior::solve(&qp, &settings);
    if !sol.converged && sol.kkt_residual > 1e-8 {
        return Err(Error::NonConvergence {
            iterations: sol.iterations,
            primal_residual: qp.max_violation(&sol.x),
            dual_residual: sol.kkt_residual,
        });
    }
    Ok(finish(problem, &qp, &sol.x, &sol.y, sol.iterations))
}

/// `sqrt(max(log d, log 2) / n)`.
pub fn base_lambda(d: usize, n: usize) -> f64 {
    ((d.max(2) as f64).ln() / n as f64).sqrt()
}

/// Solves at `lambda_scale * base_lambda(d, n)` and `mu_scale * ln n`,
/// escalating lambda by 1.5 on infeasibility.
pub fn tune_lambda(
    template: &VepdProblem,
    lambda_scale: f64,
    mu_scale: f64,
) -> Result<(ProjectionDirection, f64)> {
    let n = template.n();
    let lambda0 = lambda_scale * base_lambda(template.d(), n);
    let mu = mu_scale * (n as f64).ln();
    tune_lambda_from(template, lambda0, mu)
}

/// Escalation loop with explicit starting `lambda0` and fixed `mu`.
pub fn tune_lambda_from(
    template: &VepdProblem,
    lambda0: f64,
    mu: f64,
) -> Result<(ProjectionDirection, f64)> {
    let mut lambda = lambda0;
    let mut problem = template.clone();
    problem.mu = mu;
    for step in 0..=MAX_ESCALATIONS {
        problem.lambda = lambda;
        match solve_vepd(&problem) {
            Ok(dir) => return Ok((dir, lambda)),
            Err(Error::Infeasible { .. }) if step < MAX_ESCALATIONS => {
                lambda *= ESCALATION_FACTOR;
            }
            Err(Error::Infeasible { .. }) => {
                return Err(Error::NoFeasibleDirection {
                    escalations: MAX_ESCALATIONS,
                    last_lambda: lambda,
                })
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("loop returns on its final step")
}

/// Shrinks `lambda` by [`ESCALATION_FACTOR`] from a feasible start while
/// the trial solves succeed and `sqrt(u' S u)` stays within
/// [`REFINE_SD_RATIO`] of the starting value. Returns the last accepted
/// direction and its `lambda`.
pub fn refine_lambda(
    template: &VepdProblem,
    start: ProjectionDirection,
    lambda: f64,
) -> (ProjectionDirection, f64) {
    let sd0 = start.objective.max(0.0).sqrt();
    let mut best = (start, lambda);
    let mut problem = template.clone();
    problem.mu = best.0.mu_used;
    let settings = AdmmSettings {
        max_iter: REFINE_MAX_ITER,
        ..AdmmSettings::default()
    };
    for _ in 0..MAX_REFINEMENTS {
        problem.lambda = best.1 / ESCALATION_FACTOR;
        let qp = problem.normalized_qp();
        let sol = admm::solve(&qp, &settings);
        if !matches!(sol.status, AdmmStatus::Polished | AdmmStatus::Solved) {
            break;
        }
        let dir = finish(&problem, &qp, &sol.x, &sol.y, sol.iterations);
        if dir.objective.max(0.0).sqrt() > REFINE_SD_RATIO * sd0 {
            break;
        }
        best = (dir, problem.lambda);
    }
    best
}

/// `(0_pad, column j of beta_hat_a)`, with `j` zero-based.
pub fn build_loading(beta_hat_a: &DMatrix<f64>, j: usize, pad: usize) -> Result<DVector<f64>> {
    if j >= beta_hat_a.ncols() {
        return Err(Error::Dimension(format!(
            "loading index {} out of range for {} exposures",
            j + 1,
            beta_hat_a.ncols()
        )));
    }
    let p = beta_hat_a.nrows();
    let mut g = DVector::zeros(pad + p);
    g.rows_mut(pad, p).copy_from(&beta_hat_a.column(j));
    Ok(g)
}
