//! Least squares, coordinate-descent Lasso and the scaled Lasso.
//!
//! The Lasso objective throughout is `n^-1 ||y - X b||^2 + lambda ||b||_1`.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::linalg::RCOND_FLOOR;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub coef: DVector<f64>,
    /// Indices with nonzero coefficient, ascending.
    pub support: Vec<usize>,
    /// Penalty used; zero for least squares.
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl RegressionFit {
    fn new(coef: DVector<f64>, lambda: f64, iterations: usize, converged: bool) -> Self {
        let support = coef
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(j, _)| j)
            .collect();
        Self {
            coef,
            support,
            lambda,
            iterations,
            converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledFit {
    pub fit: RegressionFit,
    /// Noise-scale estimate `||y - X coef|| / sqrt(n)`.
    pub sigma_z: f64,
    pub lambda0: f64,
    /// Set when the residual collapsed (perfect fit) and `sigma_z` was
    /// reported as zero.
    pub degenerate: bool,
    pub outer_iterations: usize,
}

struct OlsFactor {
    svd: SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl OlsFactor {
    fn new(x: &DMatrix<f64>) -> Result<Self> {
        let (n, d) = x.shape();
        if n <= d {
            return Err(Error::Dimension(format!(
                "least squares needs more observations ({n}) than columns ({d})"
            )));
        }
        let svd = SVD::new(x.clone(), true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let rcond = if smax > 0.0 { (smin / smax).powi(2) } else { 0.0 };
        if !(rcond >= RCOND_FLOOR) {
            return Err(Error::SingularDesign { rcond });
        }
        Ok(Self { svd })
    }

    fn solve(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let u = self.svd.u.as_ref().unwrap();
        let v_t = self.svd.v_t.as_ref().unwrap();
        let mut uty = u.tr_mul(y);
        for (i, mut row) in uty.row_iter_mut().enumerate() {
            row /= self.svd.singular_values[i];
        }
        v_t.tr_mul(&uty)
    }

    /// `(x^T x)^-1`.
    fn inverse_gram(&self) -> DMatrix<f64> {
        let v_t = self.svd.v_t.as_ref().unwrap();
        let mut scaled = v_t.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row /= self.svd.singular_values[i].powi(2);
        }
        v_t.tr_mul(&scaled)
    }
}

/// Multi-response least squares: returns the `d x k` coefficient matrix.
pub fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension(format!(
            "design has {} rows, response has {}",
            x.nrows(),
            y.nrows()
        )));
    }
    Ok(OlsFactor::new(x)?.solve(y))
}

/// Least squares with classical standard errors, residual variance using
/// `n - d` degrees of freedom.
pub fn ols_with_standard_errors(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let factor = OlsFactor::new(x)?;
    let coef = factor.solve(y);
    let inv = factor.inverse_gram();
    let resid = y - x * &coef;
    let dof = (x.nrows() - x.ncols()) as f64;
    let se = DMatrix::from_fn(coef.nrows(), coef.ncols(), |i, k| {
        let s2 = resid.column(k).norm_squared() / dof;
        (s2 * inv[(i, i)]).sqrt()
    });
    Ok((coef, se))
}

/// `||y - a ols(a, y)||^2 / (n - cols(a))`.
pub fn residual_variance(y: &DVector<f64>, a: &DMatrix<f64>) -> Result<f64> {
    let ym = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let coef = ols(a, &ym)?;
    let resid = ym - a * coef;
    Ok(resid.norm_squared() / (a.nrows() - a.ncols()) as f64)
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LassoSettings {
    pub max_sweeps: usize,
    /// Stop when the largest coefficient change in a full sweep is at most
    /// `tol * (1 + max |coef|)`.
    pub tol: f64,
}

impl Default for LassoSettings {
    fn default() -> Self {
        Self {
            max_sweeps: 100_000,
            tol: 1e-9,
        }
    }
}

/// Cyclic coordinate descent with active-set sweeps, reusable across
/// penalties on the same design.
pub struct LassoSolver<'a> {
    x: &'a DMatrix<f64>,
    /// `||x_j||^2 / n`
    scale: Vec<f64>,
    settings: LassoSettings,
}

impl<'a> LassoSolver<'a> {
    pub fn new(x: &'a DMatrix<f64>) -> Result<Self> {
        let n = x.nrows() as f64;
        let scale: Vec<f64> = x.column_iter().map(|c| c.norm_squared() / n).collect();
        if scale.iter().all(|s| *s == 0.0) {
            return Err(Error::Dimension("all design columns are zero".into()));
        }
        Ok(Self {
            x,
            scale,
            settings: LassoSettings::default(),
        })
    }

    pub fn with_settings(mut self, settings: LassoSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn fit(&self, y: &DVector<f64>, lambda: f64, warm: Option<&DVector<f64>>) -> Result<RegressionFit> {
        let (n, d) = self.x.shape();
        if y.len() != n {
            return Err(Error::Dimension(format!("design has {n} rows, response has {}", y.len())));
        }
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("lasso penalty must be >= 0, got {lambda}")));
        }
        let nf = n as f64;
        let half = lambda / 2.0;
        let mut b = match warm {
            Some(w) if w.len() == d => w.clone(),
            _ => DVector::zeros(d),
        };
        let mut r = y - self.x * &b;

        let mut sweeps = 0;
        let mut full = true;
        let mut converged = false;
        while sweeps < self.settings.max_sweeps {
            sweeps += 1;
            let mut max_change: f64 = 0.0;
            for j in 0..d {
                if self.scale[j] == 0.0 || (!full && b[j] == 0.0) {
                    continue;
                }
                let col = self.x.column(j);
                let rho = col.dot(&r) / nf + self.scale[j] * b[j];
                let new = soft_threshold(rho, half) / self.scale[j];
                let delta = new - b[j];
                if delta != 0.0 {
                    r.axpy(-delta, &col, 1.0);
                    b[j] = new;
                    max_change = max_change.max(delta.abs());
                }
            }
            let bmax = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let small = max_change <= self.settings.tol * (1.0 + bmax);
            if small {
                if full {
                    converged = true;
                    break;
                }
                full = true;
            } else {
                full = false;
            }
        }
        Ok(RegressionFit::new(b, lambda, sweeps, converged))
    }
}

pub fn lasso(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<RegressionFit> {
    LassoSolver::new(x)?.fit(y, lambda, None)
}

/// Scaled Lasso: alternates a Lasso fit at penalty `2 sigma lambda0` with
/// the noise update `sigma = ||y - X b|| / sqrt(n)` until sigma settles.
///
/// The factor 2 converts the joint objective
/// `||y - Xb||^2 / (2 n sigma) + sigma / 2 + lambda0 ||b||_1` to the
/// `n^-1 ||.||^2` Lasso scaling used here.
pub fn scaled_lasso(x: &DMatrix<f64>, y: &DVector<f64>, lambda0: f64) -> Result<ScaledFit> {
    if !(lambda0 > 0.0) {
        return Err(Error::Config(format!("lambda0 must be positive, got {lambda0}")));
    }
    let n = x.nrows() as f64;
    let sigma0 = y.norm() / n.sqrt();
    if sigma0 == 0.0 {
        return Err(Error::Dimension("response is identically zero".into()));
    }
    let solver = LassoSolver::new(x)?;
    let mut sigma = sigma0;
    let mut fit = RegressionFit::new(DVector::zeros(x.ncols()), 0.0, 0, true);
    for outer in 1..=100 {
        fit = solver.fit(y, 2.0 * sigma * lambda0, Some(&fit.coef))?;
        let new_sigma = (y - x * &fit.coef).norm() / n.sqrt();
        if new_sigma < 1e-12 * sigma0 {
            return Ok(ScaledFit {
                fit,
                sigma_z: 0.0,
                lambda0,
                degenerate: true,
                outer_iterations: outer,
            });
        }
        let change = (new_sigma - sigma).abs();
        sigma = new_sigma;
        if change <= 1e-10 * sigma {
            return Ok(ScaledFit {
                fit,
                sigma_z: sigma,
                lambda0,
                degenerate: false,
                outer_iterations: outer,
            });
        }
    }
    Ok(ScaledFit {
        fit,
        sigma_z: sigma,
        lambda0,
        degenerate: false,
        outer_iterations: 100,
    })
}

/// Largest KKT violation of a Lasso solution for the `n^-1` scaling.
pub fn lasso_kkt_residual(x: &DMatrix<f64>, y: &DVector<f64>, coef: &DVector<f64>, lambda: f64) -> f64 {
    let n = x.nrows() as f64;
    let grad = x.tr_mul(&(y - x * coef)) * (2.0 / n);
    grad.iter()
        .zip(coef.iter())
        .map(|(g, b)| {
            if *b == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g - lambda * b.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn objective(x: &DMatrix<f64>, y: &DVector<f64>, b: &DVector<f64>, lambda: f64) -> f64 {
        (y - x * b).norm_squared() / x.nrows() as f64 + lambda * b.lp_norm(1)
    }

    #[test]
    fn ols_examples() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!((ols(&x, &x).unwrap()[0] - 1.0).abs() < 1e-14);

        let y = DMatrix::from_column_slice(3, 1, &[2.0, 4.0, 6.3]);
        // x'y = 2 + 8 + 18.9 = 28.9, x'x = 14
        assert!((ols(&x, &y).unwrap()[0] - 28.9 / 14.0).abs() < 1e-12);

        let x = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let y = DMatrix::from_column_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]);
        assert!(ols(&x, &y).unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn ols_rejects_singular_design() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]);
        let y = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let err = ols(&x, &y).unwrap_err();
        assert!(matches!(err, Error::SingularDesign { .. }));
        assert!(err.to_string().contains("singular design"));
    }

    #[test]
    fn ols_residuals_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn(&mut rng, 40, 4);
        let y = randn(&mut rng, 40, 3);
        let coef = ols(&x, &y).unwrap();
        let cross = x.tr_mul(&(&y - &x * &coef));
        let xty = x.tr_mul(&y).amax();
        assert!(cross.amax() <= 1e-8 * xty + 1e-12);
    }

    #[test]
    fn residual_variance_examples() {
        let a = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let y = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        assert!((residual_variance(&y, &a).unwrap() - 4.0 / 3.0).abs() < 1e-14);

        let y = DVector::from_vec(vec![2.0, -2.0, 2.0, -2.0]);
        assert!(residual_variance(&y, &a).unwrap() < 1e-28);
    }

    #[test]
    fn standard_errors_match_closed_form() {
        // single column: se = sqrt(rss/(n-1) / sum x^2)
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let y = DMatrix::from_column_slice(4, 1, &[1.0, 3.0, 2.0, 5.0]);
        let (coef, se) = ols_with_standard_errors(&x, &y).unwrap();
        let b = 33.0 / 30.0;
        let rss: f64 = [1.0f64, 3.0, 2.0, 5.0]
            .iter()
            .zip([1.0f64, 2.0, 3.0, 4.0])
            .map(|(yi, xi)| (yi - b * xi).powi(2))
            .sum();
        assert!((coef[0] - b).abs() < 1e-12);
        assert!((se[0] - (rss / 3.0 / 30.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn lasso_null_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn(&mut rng, 30, 5);
        let y: DVector<f64> = randn(&mut rng, 30, 1).column(0).into();
        let lam = 2.0 * x.tr_mul(&y).amax() / 30.0;
        let fit = lasso(&x, &y, lam).unwrap();
        assert!(fit.coef.iter().all(|c| *c == 0.0));
        assert!(fit.support.is_empty());
        let fit = lasso(&x, &y, lam * 0.99).unwrap();
        assert_eq!(fit.support.len(), 1);
    }

    #[test]
    fn lasso_unpenalized_matches_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = randn(&mut rng, 50, 4);
        let y: DVector<f64> = randn(&mut rng, 50, 1).column(0).into();
        let fit = lasso(&x, &y, 0.0).unwrap();
        let reference = ols(&x, &DMatrix::from_column_slice(50, 1, y.as_slice())).unwrap();
        assert!(fit.converged);
        for j in 0..4 {
            assert!((fit.coef[j] - reference[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn lasso_orthonormal_design_soft_thresholds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let raw = randn(&mut rng, 8, 4);
        let q = raw.qr().q();
        // x^T x / n = I
        let x = q * (8f64).sqrt();
        let y: DVector<f64> = randn(&mut rng, 8, 1).column(0).into();
        for lambda in [0.05, 0.3, 0.8] {
            let fit = lasso(&x, &y, lambda).unwrap();
            let z = x.tr_mul(&y) / 8.0;
            for j in 0..4 {
                let expected = soft_threshold(z[j], lambda / 2.0);
                assert!((fit.coef[j] - expected).abs() < 1e-8, "{} vs {}", fit.coef[j], expected);
            }
        }
    }

    #[test]
    fn lasso_satisfies_kkt_and_is_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let x = randn(&mut rng, 25, 40);
            let y: DVector<f64> = randn(&mut rng, 25, 1).column(0).into();
            let lam = 0.2;
            let fit = lasso(&x, &y, lam).unwrap();
            assert!(fit.converged);
            assert!(lasso_kkt_residual(&x, &y, &fit.coef, lam) <= 1e-6);
            let base = objective(&x, &y, &fit.coef, lam);
            for _ in 0..100 {
                let mut b = fit.coef.clone();
                for v in b.iter_mut() {
                    *v += 1e-3 * (rng.random::<f64>() * 2.0 - 1.0);
                }
                assert!(base <= objective(&x, &y, &b, lam) + 1e-15);
            }
        }
    }

    #[test]
    fn lasso_is_scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = randn(&mut rng, 30, 12);
        let y: DVector<f64> = randn(&mut rng, 30, 1).column(0).into();
        let f1 = lasso(&x, &y, 0.3).unwrap();
        let f2 = lasso(&x, &(&y * 3.0), 0.9).unwrap();
        assert_eq!(f1.support, f2.support);
        assert!((&f1.coef * 3.0 - &f2.coef).amax() < 1e-8);
    }

    #[test]
    fn scaled_lasso_pure_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200;
        let x = randn(&mut rng, n, 1);
        let mut sigmas = Vec::new();
        for _ in 0..50 {
            let y: DVector<f64> = randn(&mut rng, n, 1).column(0).into();
            let lambda0 = (2.0 * (2.0f64).ln() / n as f64).sqrt();
            let fit = scaled_lasso(&x, &y, lambda0).unwrap();
            let resid = (&y - &x * &fit.fit.coef).norm() / (n as f64).sqrt();
            assert!((fit.sigma_z - resid).abs() <= 1e-8);
            sigmas.push(fit.sigma_z);
        }
        for s in sigmas {
            assert!((0.8..=1.2).contains(&s), "{s}");
        }
    }

    #[test]
    fn scaled_lasso_perfect_fit_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = randn(&mut rng, 20, 3);
        let y: DVector<f64> = x.column(1) * 2.0;
        let fit = scaled_lasso(&x, &y, 1e-3).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.sigma_z, 0.0);
    }

    #[test]
    fn scaled_lasso_is_scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = randn(&mut rng, 60, 80);
        let mut y: DVector<f64> = randn(&mut rng, 60, 1).column(0).into();
        y += x.column(0) * 1.5 + x.column(3) * -1.0;
        let lambda0 = (2.0 * (80f64).ln() / 60.0).sqrt();
        let f1 = scaled_lasso(&x, &y, lambda0).unwrap();
        let f2 = scaled_lasso(&x, &(&y * 7.0), lambda0).unwrap();
        assert!((f2.sigma_z / f1.sigma_z - 7.0).abs() < 1e-8);
        assert!((&f1.fit.coef * 7.0 - &f2.fit.coef).amax() < 1e-8 * 7.0);
        assert_eq!(f1.fit.support, f2.fit.support);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = DMatrix::zeros(5, 2);
        let y = DVector::from_element(5, 1.0);
        assert!(lasso(&x, &y, 0.1).is_err());
        let x = DMatrix::from_element(5, 2, 1.0);
        assert!(lasso(&x, &y, -0.1).is_err());
        assert!(scaled_lasso(&x, &DVector::zeros(5), 0.1).is_err());
    }
}
