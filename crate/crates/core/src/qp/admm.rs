//! Operator-splitting QP solver in the style of OSQP: Ruiz equilibration,
//! relaxed ADMM on the splitting `z = Ax`, adaptive penalty, primal
//! infeasibility detection and active-set polishing.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::QpProblem;

#[derive(Debug, Clone, Copy)]
pub(crate) struct AdmmSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// Absolute/relative tolerance ladder; polishing is attempted each time
    /// a rung is reached.
    pub eps_ladder: [f64; 3],
    pub eps_prim_inf: f64,
    pub max_iter: usize,
    pub check_every: usize,
    pub adapt_every: usize,
    pub scaling_iters: usize,
    pub polish_delta: f64,
    pub polish_refine: usize,
    /// Certification tolerance for polished solutions (unscaled).
    pub polish_tol: f64,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_ladder: [1e-4, 1e-6, 1e-9],
            eps_prim_inf: 1e-5,
            max_iter: 50_000,
            check_every: 10,
            adapt_every: 50,
            scaling_iters: 10,
            polish_delta: 1e-7,
            polish_refine: 25,
            polish_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum AdmmStatus {
    Solved,
    Polished,
    PrimalInfeasible,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub(crate) struct AdmmSolution {
    pub x: DVector<f64>,
    /// Multipliers, positive on upper-active rows.
    pub y: DVector<f64>,
    pub status: AdmmStatus,
    pub iterations: usize,
    pub prim_res: f64,
    pub dual_res: f64,
}

struct Scaled {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn clamp_scale(v: f64) -> f64 {
    if v < 1e-4 {
        1.0
    } else {
        1.0 / v.clamp(1e-4, 1e4).sqrt()
    }
}

fn equilibrate(prob: &QpProblem, iters: usize) -> Scaled {
    let n = prob.n_vars();
    let m = prob.n_cons();
    let mut p = prob.p.clone();
    let mut a = prob.a.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    for _ in 0..iters {
        let mut dx = DVector::zeros(n);
        for j in 0..n {
            let pc = p.column(j).amax();
            let ac = a.column(j).amax();
            dx[j] = clamp_scale(pc.max(ac));
        }
        let mut ex = DVector::zeros(m);
        for i in 0..m {
            ex[i] = clamp_scale(a.row(i).amax());
        }
        for j in 0..n {
            for i in 0..n {
                p[(i, j)] *= dx[i] * dx[j];
            }
            for i in 0..m {
                a[(i, j)] *= ex[i] * dx[j];
            }
        }
        d.component_mul_assign(&dx);
        e.component_mul_assign(&ex);
    }
    let mut q = prob.q.component_mul(&d);
    let mean_p = (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n as f64;
    let cost = mean_p.max(q.amax());
    let c = if cost < 1e-4 { 1.0 } else { 1.0 / cost.clamp(1e-4, 1e4) };
    p *= c;
    q *= c;
    let l = prob.l.component_mul(&e);
    let u = prob.u.component_mul(&e);
    Scaled { p, q, a, l, u, d, e, c }
}

fn rho_vector(l: &DVector<f64>, u: &DVector<f64>, rho: f64) -> DVector<f64> {
    DVector::from_iterator(
        l.len(),
        l.iter().zip(u.iter()).map(|(lo, hi)| {
            if lo.is_infinite() && hi.is_infinite() {
                1e-6
            } else if (hi - lo).abs() < 1e-12 * (1.0 + hi.abs()) {
                1e3 * rho
            } else {
                rho
            }
        }),
    )
}

fn factor(s: &Scaled, rho: &DVector<f64>, sigma: f64) -> Cholesky<f64, Dyn> {
    let mut b = s.a.clone();
    for (i, mut row) in b.row_iter_mut().enumerate() {
        row *= rho[i].sqrt();
    }
    let mut k = b.tr_mul(&b);
    k += &s.p;
    for i in 0..k.nrows() {
        k[(i, i)] += sigma;
    }
    let k = (&k + k.transpose()) * 0.5;
    Cholesky::new(k).expect("ADMM system matrix is positive definite by construction")
}

struct Residuals {
    prim: f64,
    dual: f64,
    eps_prim_scale: f64,
    eps_dual_scale: f64,
    /// Scaled-space normalized ratios used for rho adaptation.
    prim_ratio: f64,
    dual_ratio: f64,
}

fn residuals(s: &Scaled, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> Residuals {
    let ax = &s.a * x;
    let px = &s.p * x;
    let aty = s.a.tr_mul(y);
    let rp = &ax - z;
    let rd = &px + &s.q + &aty;

    let prim = rp.component_div(&s.e).amax();
    let dual = rd.component_div(&s.d).amax() / s.c;
    let eps_prim_scale = ax.component_div(&s.e).amax().max(z.component_div(&s.e).amax());
    let eps_dual_scale = px
        .component_div(&s.d)
        .amax()
        .max(aty.component_div(&s.d).amax())
        .max(s.q.component_div(&s.d).amax())
        / s.c;

    let prim_ratio = rp.amax() / ax.amax().max(z.amax()).max(1e-30);
    let dual_ratio = rd.amax() / px.amax().max(aty.amax()).max(s.q.amax()).max(1e-30);
    Residuals {
        prim,
        dual,
        eps_prim_scale,
        eps_dual_scale,
        prim_ratio,
        dual_ratio,
    }
}

fn unscale(s: &Scaled, x: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    (x.component_mul(&s.d), y.component_mul(&s.e) / s.c)
}

/// Primal infeasibility certificate check on a multiplier increment.
fn infeasibility_certificate(s: &Scaled, dy: &DVector<f64>, eps: f64) -> bool {
    let v = dy.component_mul(&s.e);
    let norm = v.amax();
    if norm < 1e-30 {
        return false;
    }
    let at = s.a.tr_mul(dy).component_div(&s.d);
    if at.amax() > eps * norm {
        return false;
    }
    // unscaled bounds: l = l_bar / e
    let mut support = 0.0;
    for i in 0..v.len() {
        let lo = s.l[i] / s.e[i];
        let hi = s.u[i] / s.e[i];
        if v[i] > 0.0 {
            if hi.is_infinite() {
                return false;
            }
            support += hi * v[i];
        } else if v[i] < 0.0 {
            if lo.is_infinite() {
                return false;
            }
            support += lo * v[i];
        }
    }
    support < -eps * norm
}

/// Solves the equality-constrained QP on a guessed active set and certifies
/// the result against the full problem's KKT conditions.
fn polish(
    prob: &QpProblem,
    s: &Scaled,
    z: &DVector<f64>,
    y: &DVector<f64>,
    settings: &AdmmSettings,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = s.p.nrows();
    let m = s.a.nrows();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for i in 0..m {
        if z[i] - s.l[i] < -y[i] {
            rows.push(i);
            targets.push(s.l[i]);
        } else if s.u[i] - z[i] < y[i] {
            rows.push(i);
            targets.push(s.u[i]);
        }
    }
    let k = rows.len();
    let ar = DMatrix::from_fn(k, n, |i, j| s.a[(rows[i], j)]);
    let br = DVector::from_vec(targets);
    let delta = settings.polish_delta;

    // Regularized KKT reduced to the x-block:
    // (P + delta I + Ar'Ar / delta) x = rhs1 + Ar' rhs2 / delta
    let mut kx = ar.tr_mul(&ar) / delta;
    kx += &s.p;
    for i in 0..n {
        kx[(i, i)] += delta;
    }
    let kx = (&kx + kx.transpose()) * 0.5;
    let chol = Cholesky::new(kx)?;
    let solve_reg = |r1: &DVector<f64>, r2: &DVector<f64>| {
        let rhs = r1 + ar.tr_mul(r2) / delta;
        let dx = chol.solve(&rhs);
        let dy = (&ar * &dx - r2) / delta;
        (dx, dy)
    };

    let rhs1 = -&s.q;
    let rhs2 = br.clone();
    let (mut x, mut yr) = solve_reg(&rhs1, &rhs2);
    for _ in 0..settings.polish_refine {
        // residual of the unregularized KKT system
        let r1 = &rhs1 - (&s.p * &x + ar.tr_mul(&yr));
        let r2 = &rhs2 - &ar * &x;
        if r1.amax().max(r2.amax()) < 1e-14 {
            break;
        }
        let (dx, dy) = solve_reg(&r1, &r2);
        x += dx;
        yr += dy;
    }
    let mut yfull = DVector::zeros(m);
    for (idx, &i) in rows.iter().enumerate() {
        yfull[i] = yr[idx];
    }
    let (xu, yu) = unscale(s, &x, &yfull);

    // certify on the original problem
    let viol = prob.max_violation(&xu);
    let bound_scale = 1.0 + prob.l.iter().chain(prob.u.iter()).filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs()));
    if viol > settings.polish_tol * bound_scale {
        return None;
    }
    let px = &prob.p * &xu;
    let aty = prob.a.tr_mul(&yu);
    let stat = (&px + &prob.q + &aty).amax();
    let stat_scale = 1.0 + px.amax().max(aty.amax()).max(prob.q.amax());
    if stat > settings.polish_tol * stat_scale {
        return None;
    }
    let ymax = yu.amax().max(1.0);
    let ax = &prob.a * &xu;
    for i in 0..m {
        let at_lower = (ax[i] - prob.l[i]).abs() <= settings.polish_tol * bound_scale;
        let at_upper = (prob.u[i] - ax[i]).abs() <= settings.polish_tol * bound_scale;
        let yi = yu[i];
        let ok = if yi > 0.0 {
            at_upper || yi <= 1e-8 * ymax
        } else if yi < 0.0 {
            at_lower || -yi <= 1e-8 * ymax
        } else {
            true
        };
        if !ok {
            return None;
        }
    }
    Some((xu, yu))
}

pub(crate) fn solve(prob: &QpProblem, settings: &AdmmSettings) -> AdmmSolution {
    let s = equilibrate(prob, settings.scaling_iters);
    let n = s.p.nrows();
    let m = s.a.nrows();

    let mut rho_scalar = settings.rho;
    let mut rho = rho_vector(&s.l, &s.u, rho_scalar);
    let mut chol = factor(&s, &rho, settings.sigma);

    let mut x = DVector::<f64>::zeros(n);
    let mut z = DVector::<f64>::zeros(m);
    let mut y = DVector::<f64>::zeros(m);
    let mut y_prev = y.clone();
    let alpha = settings.alpha;
    let sigma = settings.sigma;

    let mut rung = 0;
    let mut last = residuals(&s, &x, &z, &y);

    for iter in 1..=settings.max_iter {
        y_prev.copy_from(&y);
        // x-update
        let mut rhs = &x * sigma - &s.q;
        let w = rho.component_mul(&z) - &y;
        rhs.gemv_tr(1.0, &s.a, &w, 1.0);
        chol.solve_mut(&mut rhs);
        let x_tilde = rhs;
        let z_tilde = &s.a * &x_tilde;
        // relaxation
        let x_next = &x_tilde * alpha + &x * (1.0 - alpha);
        let z_relax = &z_tilde * alpha + &z * (1.0 - alpha);
        let mut z_next = DVector::zeros(m);
        for i in 0..m {
            let v = z_relax[i] + y[i] / rho[i];
            z_next[i] = v.clamp(s.l[i], s.u[i]);
        }
        for i in 0..m {
            y[i] += rho[i] * (z_relax[i] - z_next[i]);
        }
        x = x_next;
        z = z_next;

        if iter % settings.check_every != 0 {
            continue;
        }
        last = residuals(&s, &x, &z, &y);
        let eps = settings.eps_ladder[rung];
        let reached = last.prim <= eps + eps * last.eps_prim_scale
            && last.dual <= eps + eps * last.eps_dual_scale;
        if reached {
            if let Some((xp, yp)) = polish(prob, &s, &z, &y, settings) {
                let dual = prob.stationarity(&xp, &yp);
                return AdmmSolution {
                    prim_res: prob.max_violation(&xp),
                    dual_res: dual,
                    x: xp,
                    y: yp,
                    status: AdmmStatus::Polished,
                    iterations: iter,
                };
            }
            if rung + 1 == settings.eps_ladder.len() {
                let (xu, yu) = unscale(&s, &x, &y);
                return AdmmSolution {
                    x: xu,
                    y: yu,
                    status: AdmmStatus::Solved,
                    iterations: iter,
                    prim_res: last.prim,
                    dual_res: last.dual,
                };
            }
            rung += 1;
        }
        let dy = &y - &y_prev;
        if infeasibility_certificate(&s, &dy, settings.eps_prim_inf) {
            let (xu, yu) = unscale(&s, &x, &dy);
            return AdmmSolution {
                x: xu,
                y: yu,
                status: AdmmStatus::PrimalInfeasible,
                iterations: iter,
                prim_res: last.prim,
                dual_res: last.dual,
            };
        }
        if iter % settings.adapt_every == 0 {
            let ratio = (last.prim_ratio / last.dual_ratio.max(1e-30)).sqrt();
            let new_rho = (rho_scalar * ratio).clamp(1e-6, 1e6);
            if new_rho > 5.0 * rho_scalar || new_rho < rho_scalar / 5.0 {
                rho_scalar = new_rho;
                rho = rho_vector(&s.l, &s.u, rho_scalar);
                chol = factor(&s, &rho, sigma);
            }
        }
    }
    let (xu, yu) = unscale(&s, &x, &y);
    AdmmSolution {
        x: xu,
        y: yu,
        status: AdmmStatus::MaxIterations,
        iterations: settings.max_iter,
        prim_res: last.prim,
        dual_res: last.dual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_constrained_quadratic() {
        // min (x0-2)^2 + (x1+1)^2 s.t. 0 <= x <= 1
        let prob = QpProblem {
            p: DMatrix::from_diagonal_element(2, 2, 2.0),
            q: DVector::from_vec(vec![-4.0, 2.0]),
            a: DMatrix::identity(2, 2),
            l: DVector::from_vec(vec![0.0, 0.0]),
            u: DVector::from_vec(vec![1.0, 1.0]),
        };
        let sol = solve(&prob, &AdmmSettings::default());
        assert!(matches!(sol.status, AdmmStatus::Polished | AdmmStatus::Solved));
        assert!((sol.x[0] - 1.0).abs() < 1e-8);
        assert!(sol.x[1].abs() < 1e-8);
        assert!(prob.stationarity(&sol.x, &sol.y) < 1e-7);
    }

    #[test]
    fn detects_infeasible_box() {
        // x0 in [0,1] and x0 in [2,3]
        let prob = QpProblem {
            p: DMatrix::identity(1, 1),
            q: DVector::zeros(1),
            a: DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            l: DVector::from_vec(vec![0.0, 2.0]),
            u: DVector::from_vec(vec![1.0, 3.0]),
        };
        let sol = solve(&prob, &AdmmSettings::default());
        assert_eq!(sol.status, AdmmStatus::PrimalInfeasible);
    }

    #[test]
    fn equality_row() {
        // min x0^2 + x1^2 s.t. x0 + x1 = 1
        let prob = QpProblem {
            p: DMatrix::from_diagonal_element(2, 2, 2.0),
            q: DVector::zeros(2),
            a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            l: DVector::from_vec(vec![1.0]),
            u: DVector::from_vec(vec![1.0]),
        };
        let sol = solve(&prob, &AdmmSettings::default());
        assert!((sol.x[0] - 0.5).abs() < 1e-8 && (sol.x[1] - 0.5).abs() < 1e-8);
    }
}
