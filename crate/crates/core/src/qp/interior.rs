//! Mehrotra predictor-corrector interior point method for dense QPs.
//!
//! Internally works with one-sided rows `Gx + s = h, s >= 0`, built by
//! splitting each finite bound of `l <= Ax <= u`.

use nalgebra::{DMatrix, DVector};

use super::QpProblem;

#[derive(Debug, Clone, Copy)]
pub(crate) struct IpmSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Diagonal regularization added to the reduced Newton system.
    pub reg: f64,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            reg: 1e-13,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct IpmSolution {
    pub x: DVector<f64>,
    /// Two-sided multipliers, positive on upper-active rows.
    pub y: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
}

struct OneSided {
    g: DMatrix<f64>,
    h: DVector<f64>,
    /// (original row, +1 for upper / -1 for lower)
    origin: Vec<(usize, f64)>,
}

fn one_sided(prob: &QpProblem) -> OneSided {
    let n = prob.n_vars();
    let mut origin = Vec::new();
    for i in 0..prob.n_cons() {
        if prob.u[i].is_finite() {
            origin.push((i, 1.0));
        }
        if prob.l[i].is_finite() {
            origin.push((i, -1.0));
        }
    }
    let g = DMatrix::from_fn(origin.len(), n, |k, j| origin[k].1 * prob.a[(origin[k].0, j)]);
    let h = DVector::from_iterator(
        origin.len(),
        origin
            .iter()
            .map(|&(i, sgn)| if sgn > 0.0 { prob.u[i] } else { -prob.l[i] }),
    );
    OneSided { g, h, origin }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a = 1.0f64;
    for (vi, di) in v.iter().zip(dv.iter()) {
        if *di < 0.0 {
            a = a.min(-vi / di);
        }
    }
    a
}

pub(crate) fn solve(prob: &QpProblem, settings: &IpmSettings) -> IpmSolution {
    let sys = one_sided(prob);
    let n = prob.n_vars();
    let m = sys.h.len();
    let g = &sys.g;
    let h = &sys.h;

    let mut x = DVector::<f64>::zeros(n);
    let mut s = DVector::<f64>::from_element(m, 1.0);
    let mut z = DVector::<f64>::from_element(m, 1.0);
    // start from slack s = max(h - Gx, 1)
    let gx0 = g * &x;
    for i in 0..m {
        s[i] = (h[i] - gx0[i]).max(1.0);
    }

    let scale_p = 1.0 + h.amax();
    let mut iterations = 0;
    let mut converged = false;
    let mut best = (f64::INFINITY, x.clone(), z.clone());
    let mut stalled = 0;

    for it in 0..settings.max_iter {
        iterations = it;
        let px = &prob.p * &x;
        let gtz = g.tr_mul(&z);
        let rd = &px + &prob.q + &gtz;
        let rp = g * &x + &s - h;
        let mu = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };
        let scale_d = 1.0 + px.amax().max(gtz.amax()).max(prob.q.amax());
        let kkt = (rd.amax() / scale_d).max(rp.amax() / scale_p).max(mu);
        if kkt < best.0 {
            best = (kkt, x.clone(), z.clone());
            stalled = 0;
        } else {
            stalled += 1;
        }
        if kkt < settings.tol {
            converged = true;
            break;
        }
        if stalled >= 5 {
            break;
        }

        let w = z.component_div(&s);
        let mut gw = g.clone();
        for (k, mut row) in gw.row_iter_mut().enumerate() {
            row *= w[k];
        }
        let mut kmat = g.tr_mul(&gw);
        kmat += &prob.p;
        for i in 0..n {
            kmat[(i, i)] += settings.reg * (1.0 + kmat[(i, i)]);
        }
        let kmat = (&kmat + kmat.transpose()) * 0.5;
        let Some(chol) = kmat.cholesky() else {
            break;
        };

        let newton = |rc: &DVector<f64>| {
            // dz = S^-1(-rc + Z rp) + W G dx, ds = -rp - G dx
            let t = (-rc + z.component_mul(&rp)).component_div(&s);
            let rhs = -&rd - g.tr_mul(&t);
            let dx = chol.solve(&rhs);
            let gdx = g * &dx;
            let dz = &t + w.component_mul(&gdx);
            let ds = -&rp - gdx;
            (dx, ds, dz)
        };

        // predictor
        let rc_aff = s.component_mul(&z);
        let (_, ds_a, dz_a) = newton(&rc_aff);
        let a_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = (&s + &ds_a * a_aff).dot(&(&z + &dz_a * a_aff)) / m as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // corrector
        let rc = &rc_aff + ds_a.component_mul(&dz_a) - DVector::from_element(m, sigma * mu);
        let (dx, ds, dz) = newton(&rc);
        let step = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        x += &dx * step;
        s += &ds * step;
        z += &dz * step;
        for i in 0..m {
            s[i] = s[i].max(1e-300);
            z[i] = z[i].max(1e-300);
        }
    }

    let (kkt, x, z) = best;
    let mut y = DVector::zeros(prob.n_cons());
    for (k, &(i, sgn)) in sys.origin.iter().enumerate() {
        y[i] += sgn * z[k];
    }
    IpmSolution {
        x,
        y,
        converged,
        iterations,
        kkt_residual: kkt,
    }
}

/// Smallest uniform relaxation `t >= 0` making `l - t <= Ax <= u + t`
/// feasible.
pub(crate) fn min_relaxation(prob: &QpProblem) -> f64 {
    let n = prob.n_vars();
    let m = prob.n_cons();
    let mut p = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        p[(i, i)] = 1e-8;
    }
    p[(n, n)] = 1e-8;
    let mut q = DVector::zeros(n + 1);
    q[n] = 1.0;
    // rows: Ax - t <= u, Ax + t >= l, t >= 0
    let mut a = DMatrix::zeros(2 * m + 1, n + 1);
    let mut l = DVector::from_element(2 * m + 1, f64::NEG_INFINITY);
    let mut u = DVector::from_element(2 * m + 1, f64::INFINITY);
    for i in 0..m {
        for j in 0..n {
            a[(i, j)] = prob.a[(i, j)];
            a[(m + i, j)] = prob.a[(i, j)];
        }
        a[(i, n)] = -1.0;
        u[i] = prob.u[i];
        a[(m + i, n)] = 1.0;
        l[m + i] = prob.l[i];
    }
    a[(2 * m, n)] = 1.0;
    l[2 * m] = 0.0;
    let lp = QpProblem { p, q, a, l, u };
    let sol = solve(
        &lp,
        &IpmSettings {
            tol: 1e-11,
            ..IpmSettings::default()
        },
    );
    sol.x[n].max(0.0)
}
