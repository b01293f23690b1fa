//! The debiased mediation test: pilot and debiased estimators, variance,
//! and the Bonferroni / chi-square decisions.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::{center_dataset, sparsity_surrogate, CenteredDataset, Dataset, LambdaSearch, ModelConfig, TestMethod, Variant};
use crate::error::{Error, Result};
use crate::linalg::{gram, select_columns, select_entries, spd_inverse, symmetrize};
use crate::regression::{ols, ols_with_standard_errors, residual_variance, scaled_lasso, RegressionFit, ScaledFit};
use crate::stats::{chi_square_sf, chi_square_upper_quantile, normal_two_sided, normal_upper_quantile};
use crate::vepd::{base_lambda, build_loading, refine_lambda, tune_lambda, ProjectionDirection, VepdProblem};

#[derive(Debug, Clone)]
pub struct DebiasedEstimate {
    pub gamma_hat: DVector<f64>,
    pub gamma_pilot: DVector<f64>,
    /// `n^-1 U' X' (Y - X theta_hat)`
    pub correction: DVector<f64>,
    pub directions: Vec<ProjectionDirection>,
}

impl DebiasedEstimate {
    /// Directions stacked column-wise.
    pub fn u_matrix(&self) -> DMatrix<f64> {
        let d = self.directions.first().map_or(0, |u| u.u.len());
        DMatrix::from_fn(d, self.directions.len(), |i, j| self.directions[j].u[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    pub v_hat: DMatrix<f64>,
    pub sigma_e2_hat: f64,
    pub sigma_z2_hat: f64,
    pub sigma2_hat: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub t_stats: DVector<f64>,
    /// `max |T_j|` for Bonferroni, the quadratic form for chi-square.
    pub statistic: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub reject: bool,
    pub method: TestMethod,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    /// Nonzero mediator coefficients in the outcome fit.
    pub s_hat_m: usize,
    /// Sparsity surrogate for the exposure-mediator coefficients (q = 1).
    pub s_hat_a: Option<usize>,
    pub sigma2: f64,
    pub sigma_e2: f64,
    pub sigma_z2: f64,
    pub lambdas_used: Vec<f64>,
    pub mu_used: f64,
    pub lasso_lambda0: f64,
    pub scaled_lasso_degenerate: bool,
    /// Coordinates of the design kept by the restricted variant.
    pub support: Option<Vec<usize>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TestResult {
    pub outcome: TestOutcome,
    pub estimate: DebiasedEstimate,
    pub variance: VarianceEstimate,
    pub diagnostics: Diagnostics,
    pub theta_hat: DVector<f64>,
    /// `p x q`
    pub beta_hat_a: DMatrix<f64>,
}

/// Everything that does not depend on the ridge constant or the decision
/// rule, so several tests can share one fit.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub estimate: DebiasedEstimate,
    pub theta_hat: DVector<f64>,
    pub beta_hat_a: DMatrix<f64>,
    pub diagnostics: Diagnostics,
    n: usize,
    sigma_a_inv: DMatrix<f64>,
    /// `U' S U` on the design the directions were solved on.
    u_sigma_u: DMatrix<f64>,
    sigma2: f64,
    sigma_z2: f64,
    sigma_e2: f64,
}

/// `beta_hat_a' theta_hat_m`.
pub fn pilot_estimator(beta_hat_a: &DMatrix<f64>, theta_hat_m: &DVector<f64>) -> Result<DVector<f64>> {
    if beta_hat_a.nrows() != theta_hat_m.len() {
        return Err(Error::Dimension(format!(
            "beta_hat_a has {} rows, theta_hat_m has {} entries",
            beta_hat_a.nrows(),
            theta_hat_m.len()
        )));
    }
    Ok(beta_hat_a.tr_mul(theta_hat_m))
}

/// `p x q` least-squares coefficients of the mediators on the exposures,
/// adjusting for covariates when present.
fn exposure_coefficients(centered: &CenteredDataset) -> Result<DMatrix<f64>> {
    let h = centered.exposures_and_covariates();
    let coef = ols(&h, &centered.m)?;
    Ok(coef.rows(0, centered.q()).transpose())
}

pub fn debiased_estimator(
    centered: &CenteredDataset,
    beta_hat_a: &DMatrix<f64>,
    theta_hat: &RegressionFit,
    directions: Vec<ProjectionDirection>,
) -> Result<DebiasedEstimate> {
    let x = centered.design();
    let d = x.ncols();
    if theta_hat.coef.len() != d || directions.len() != centered.q() {
        return Err(Error::Dimension(format!(
            "debiasing needs {} coefficients and {} directions (got {}, {})",
            d,
            centered.q(),
            theta_hat.coef.len(),
            directions.len()
        )));
    }
    if directions.iter().any(|u| u.u.len() != d) {
        return Err(Error::Dimension("projection direction length differs from design".into()));
    }
    let p = centered.p();
    let theta_m = theta_hat.coef.rows(d - p, p).into_owned();
    let gamma_pilot = pilot_estimator(beta_hat_a, &theta_m)?;
    let resid = &centered.y - &x * &theta_hat.coef;
    let score = x.tr_mul(&resid);
    Ok(assemble_estimate(gamma_pilot, &score, directions, centered.n()))
}

fn assemble_estimate(
    gamma_pilot: DVector<f64>,
    score: &DVector<f64>,
    directions: Vec<ProjectionDirection>,
    n: usize,
) -> DebiasedEstimate {
    let correction = DVector::from_iterator(
        directions.len(),
        directions.iter().map(|u| u.u.dot(score) / n as f64),
    );
    DebiasedEstimate {
        gamma_hat: &gamma_pilot + &correction,
        gamma_pilot,
        correction,
        directions,
    }
}

/// `(sigma2, sigma_z2, sigma_e2)` with `sigma_e2 = max(sigma2 - sigma_z2, 0)`.
pub fn variance_components(centered: &CenteredDataset, scaled_fit: &ScaledFit) -> Result<(f64, f64, f64)> {
    let sigma2 = residual_variance(&centered.y, &centered.exposures_and_covariates())?;
    let sigma_z2 = scaled_fit.sigma_z * scaled_fit.sigma_z;
    Ok((sigma2, sigma_z2, split_variance(sigma2, sigma_z2)))
}

fn split_variance(sigma2: f64, sigma_z2: f64) -> f64 {
    (sigma2 - sigma_z2).max(0.0)
}

/// Leading `q x q` block of the inverse exposure (and covariate) Gram.
fn exposure_precision(centered: &CenteredDataset) -> Result<DMatrix<f64>> {
    let q = centered.q();
    let inv = spd_inverse(&gram(&centered.exposures_and_covariates()))?;
    Ok(inv.view((0, 0), (q, q)).into_owned())
}

fn assemble_variance(
    sigma_a_inv: &DMatrix<f64>,
    u_sigma_u: &DMatrix<f64>,
    n: usize,
    sigma2: f64,
    sigma_z2: f64,
    sigma_e2: f64,
    tau: f64,
) -> VarianceEstimate {
    let nf = n as f64;
    let mut v = sigma_a_inv * (sigma_e2 / nf) + u_sigma_u * (sigma_z2 / nf);
    for i in 0..v.nrows() {
        v[(i, i)] += tau / nf;
    }
    VarianceEstimate {
        v_hat: symmetrize(&v),
        sigma_e2_hat: sigma_e2,
        sigma_z2_hat: sigma_z2,
        sigma2_hat: sigma2,
        tau,
    }
}

/// `U' S_X U` computed as the Gram of `X U`.
fn direction_gram(x: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    gram(&(x * u))
}

/// Ridge-enlarged covariance of the debiased estimator. With covariates
/// the exposure term uses the leading block of the inverse Gram of
/// `(A, C)`; without them `(A, C) = A`.
///
/// `components` is `(sigma2, sigma_z2, sigma_e2)` as returned by
/// [`variance_components`].
pub fn covariance_matrix(
    centered: &CenteredDataset,
    directions: &[ProjectionDirection],
    components: (f64, f64, f64),
    tau: f64,
) -> Result<VarianceEstimate> {
    let (sigma2, sigma_z2, sigma_e2) = components;
    let x = centered.design();
    if directions.len() != centered.q() || directions.iter().any(|u| u.u.len() != x.ncols()) {
        return Err(Error::Dimension("directions do not match the design".into()));
    }
    let u = DMatrix::from_fn(x.ncols(), directions.len(), |i, j| directions[j].u[i]);
    let sigma_a_inv = exposure_precision(centered)?;
    Ok(assemble_variance(
        &sigma_a_inv,
        &direction_gram(&x, &u),
        centered.n(),
        sigma2,
        sigma_z2,
        sigma_e2,
        tau,
    ))
}

pub fn bonferroni_test(estimate: &DebiasedEstimate, variance: &VarianceEstimate, alpha: f64) -> Result<TestOutcome> {
    let q = estimate.gamma_hat.len();
    let mut t = DVector::zeros(q);
    for j in 0..q {
        let v = variance.v_hat[(j, j)];
        if !(v > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        t[j] = estimate.gamma_hat[j] / v.sqrt();
    }
    let statistic = t.amax();
    let p_value = (q as f64 * normal_two_sided(statistic)).min(1.0);
    Ok(TestOutcome {
        t_stats: t,
        statistic,
        threshold: normal_upper_quantile(alpha / (2.0 * q as f64)),
        reject: p_value < alpha,
        p_value,
        method: TestMethod::Bonferroni,
    })
}

pub fn chi_square_test(estimate: &DebiasedEstimate, variance: &VarianceEstimate, alpha: f64) -> Result<TestOutcome> {
    let q = estimate.gamma_hat.len();
    let chol = variance
        .v_hat
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?;
    let z = chol.l().solve_lower_triangular(&estimate.gamma_hat).ok_or(Error::NotPositiveDefinite)?;
    let statistic = z.dot(&z);
    let t = DVector::from_fn(q, |j, _| estimate.gamma_hat[j] / variance.v_hat[(j, j)].sqrt());
    let p_value = chi_square_sf(statistic, q);
    Ok(TestOutcome {
        t_stats: t,
        statistic,
        threshold: chi_square_upper_quantile(alpha, q),
        reject: p_value < alpha,
        p_value,
        method: TestMethod::ChiSquare,
    })
}

pub fn run_test(estimate: &DebiasedEstimate, variance: &VarianceEstimate, method: TestMethod, alpha: f64) -> Result<TestOutcome> {
    match method {
        TestMethod::Bonferroni => bonferroni_test(estimate, variance, alpha),
        TestMethod::ChiSquare => chi_square_test(estimate, variance, alpha),
    }
}

impl FittedModel {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn variance(&self, tau: f64) -> VarianceEstimate {
        assemble_variance(
            &self.sigma_a_inv,
            &self.u_sigma_u,
            self.n,
            self.sigma2,
            self.sigma_z2,
            self.sigma_e2,
            tau,
        )
    }

    pub fn test(&self, tau: f64, method: TestMethod, alpha: f64) -> Result<(TestOutcome, VarianceEstimate)> {
        let variance = self.variance(tau);
        let outcome = run_test(&self.estimate, &variance, method, alpha).map_err(|e| e.at("test"))?;
        Ok((outcome, variance))
    }

    pub fn into_result(self, config: &ModelConfig) -> Result<TestResult> {
        let (outcome, variance) = self.test(config.tau, config.method, config.alpha)?;
        Ok(TestResult {
            outcome,
            variance,
            estimate: self.estimate,
            diagnostics: self.diagnostics,
            theta_hat: self.theta_hat,
            beta_hat_a: self.beta_hat_a,
        })
    }
}

/// Shared first stages: centering, exposure regression, scaled Lasso and
/// the variance split.
struct Stages {
    centered: CenteredDataset,
    x: DMatrix<f64>,
    beta_hat_a: DMatrix<f64>,
    scaled: ScaledFit,
    sigma_a_inv: DMatrix<f64>,
    sigma2: f64,
    sigma_z2: f64,
    sigma_e2: f64,
    diagnostics: Diagnostics,
}

fn first_stages(dataset: &Dataset, config: &ModelConfig) -> Result<Stages> {
    config.validate()?;
    let centered = center_dataset(dataset);
    let (n, q, r) = (centered.n(), centered.q(), centered.r());
    if n <= q + r {
        return Err(Error::Dimension(format!(
            "need more observations ({n}) than exposures plus covariates ({})",
            q + r
        )));
    }
    let beta_hat_a = exposure_coefficients(&centered).map_err(|e| e.at("exposure regression"))?;
    let x = centered.design();
    let d = x.ncols();
    let lambda0 = config.lasso_scale * (2.0 * (d as f64).ln() / n as f64).sqrt();
    let scaled = scaled_lasso(&x, &centered.y, lambda0).map_err(|e| e.at("outcome regression"))?;
    let (sigma2, sigma_z2, sigma_e2) =
        variance_components(&centered, &scaled).map_err(|e| e.at("variance components"))?;
    let sigma_a_inv = exposure_precision(&centered).map_err(|e| e.at("variance components"))?;

    let mut diagnostics = Diagnostics {
        s_hat_m: scaled.fit.support.iter().filter(|&&j| j >= q + r).count(),
        sigma2,
        sigma_e2,
        sigma_z2,
        mu_used: config.mu_scale * (n as f64).ln(),
        lasso_lambda0: lambda0,
        scaled_lasso_degenerate: scaled.degenerate,
        ..Diagnostics::default()
    };
    if scaled.degenerate {
        diagnostics
            .warnings
            .push("outcome regression fits exactly; noise scale set to zero".into());
    }
    if q == 1 {
        match surrogate(&centered) {
            Ok(s) => diagnostics.s_hat_a = Some(s),
            Err(e) => diagnostics.warnings.push(format!("sparsity surrogate unavailable: {e}")),
        }
    }
    Ok(Stages {
        centered,
        x,
        beta_hat_a,
        scaled,
        sigma_a_inv,
        sigma2,
        sigma_z2,
        sigma_e2,
        diagnostics,
    })
}

fn surrogate(centered: &CenteredDataset) -> Result<usize> {
    let (coef, se) = ols_with_standard_errors(&centered.exposures_and_covariates(), &centered.m)?;
    let b: Vec<f64> = coef.row(0).iter().copied().collect();
    let s: Vec<f64> = se.row(0).iter().copied().collect();
    sparsity_surrogate(&b, &s)
}

/// Projection direction for one loading, or the zero direction when the
/// loading vanishes.
fn direction_for(
    x: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    g: DVector<f64>,
    config: &ModelConfig,
    warnings: &mut Vec<String>,
    j: usize,
) -> Result<ProjectionDirection> {
    let n = x.nrows();
    if g.iter().all(|v| *v == 0.0) {
        warnings.push(format!("loading {} is zero; using the zero direction", j + 1));
        let lambda = config.lambda_scale * base_lambda(g.len(), n);
        return Ok(ProjectionDirection::zero(g.len(), lambda, config.mu_scale * (n as f64).ln()));
    }
    let template = VepdProblem::from_parts(sigma.clone(), x.clone(), g, 1.0, 1.0)?;
    let (dir, lambda) = tune_lambda(&template, config.lambda_scale, config.mu_scale)?;
    let base = config.lambda_scale * base_lambda(template.d(), n);
    if config.lambda_search == LambdaSearch::Refine && lambda == base {
        return Ok(refine_lambda(&template, dir, lambda).0);
    }
    Ok(dir)
}

/// The full debiased test up to (but excluding) the ridge and decision.
pub fn fit_full(dataset: &Dataset, config: &ModelConfig) -> Result<FittedModel> {
    let Stages {
        centered,
        x,
        beta_hat_a,
        scaled,
        sigma_a_inv,
        sigma2,
        sigma_z2,
        sigma_e2,
        mut diagnostics,
    } = first_stages(dataset, config)?;
    let pad = centered.q() + centered.r();
    let sigma = gram(&x);
    let mut directions = Vec::with_capacity(centered.q());
    for j in 0..centered.q() {
        let g = build_loading(&beta_hat_a, j, pad)?;
        let dir = direction_for(&x, &sigma, g, config, &mut diagnostics.warnings, j)
            .map_err(|e| e.at("projection direction"))?;
        diagnostics.lambdas_used.push(dir.lambda_used);
        directions.push(dir);
    }
    let estimate = debiased_estimator(&centered, &beta_hat_a, &scaled.fit, directions)?;
    let u = estimate.u_matrix();
    Ok(FittedModel {
        u_sigma_u: direction_gram(&x, &u),
        estimate,
        theta_hat: scaled.fit.coef,
        beta_hat_a,
        diagnostics,
        n: centered.n(),
        sigma_a_inv,
        sigma2,
        sigma_z2,
        sigma_e2,
    })
}

/// Debiasing restricted to the support of the outcome fit. Directions live
/// on the selected coordinates only.
pub fn fit_support_restricted(dataset: &Dataset, config: &ModelConfig) -> Result<FittedModel> {
    let Stages {
        centered,
        x,
        beta_hat_a,
        scaled,
        sigma_a_inv,
        sigma2,
        sigma_z2,
        sigma_e2,
        mut diagnostics,
    } = first_stages(dataset, config)?;
    let (n, q) = (centered.n(), centered.q());
    let pad = q + centered.r();
    let p = centered.p();
    let support = scaled.fit.support.clone();
    diagnostics.support = Some(support.clone());
    let theta_m = scaled.fit.coef.rows(x.ncols() - p, p).into_owned();
    let gamma_pilot = pilot_estimator(&beta_hat_a, &theta_m)?;

    if support.is_empty() {
        diagnostics
            .warnings
            .push("outcome regression selected no coordinates; correction term is zero".into());
        let directions: Vec<_> = (0..q)
            .map(|_| ProjectionDirection::zero(0, 0.0, diagnostics.mu_used))
            .collect();
        let estimate = assemble_estimate(gamma_pilot, &DVector::zeros(0), directions, n);
        return Ok(FittedModel {
            estimate,
            theta_hat: scaled.fit.coef,
            beta_hat_a,
            diagnostics,
            n,
            sigma_a_inv,
            u_sigma_u: DMatrix::zeros(q, q),
            sigma2,
            sigma_z2,
            sigma_e2,
        });
    }

    let xs = select_columns(&x, &support);
    let sigma = gram(&xs);
    let mut directions = Vec::with_capacity(q);
    for j in 0..q {
        let g = select_entries(&build_loading(&beta_hat_a, j, pad)?, &support);
        let dir = direction_for(&xs, &sigma, g, config, &mut diagnostics.warnings, j)
            .map_err(|e| e.at("projection direction"))?;
        diagnostics.lambdas_used.push(dir.lambda_used);
        directions.push(dir);
    }
    let theta_s = select_entries(&scaled.fit.coef, &support);
    let resid = &centered.y - &xs * &theta_s;
    let score = xs.tr_mul(&resid);
    let estimate = assemble_estimate(gamma_pilot, &score, directions, n);
    let u = estimate.u_matrix();
    Ok(FittedModel {
        u_sigma_u: direction_gram(&xs, &u),
        estimate,
        theta_hat: scaled.fit.coef,
        beta_hat_a,
        diagnostics,
        n,
        sigma_a_inv,
        sigma2,
        sigma_z2,
        sigma_e2,
    })
}

pub fn fit(dataset: &Dataset, config: &ModelConfig) -> Result<FittedModel> {
    match config.variant {
        Variant::Full => fit_full(dataset, config),
        Variant::SupportRestricted => fit_support_restricted(dataset, config),
    }
}

pub fn run_full_test(dataset: &Dataset, config: &ModelConfig) -> Result<TestResult> {
    fit_full(dataset, config)?.into_result(config)
}

pub fn run_support_restricted_test(dataset: &Dataset, config: &ModelConfig) -> Result<TestResult> {
    fit_support_restricted(dataset, config)?.into_result(config)
}

/// Runs the variant selected in `config`.
pub fn run(dataset: &Dataset, config: &ModelConfig) -> Result<TestResult> {
    fit(dataset, config)?.into_result(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    /// Small mediation model with Bernoulli exposures.
    fn synthetic(seed: u64, n: usize, p: usize, q: usize, signal: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, q, |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 });
        let beta = DMatrix::from_fn(p, q, |k, _| if k < 3 { signal } else { 0.0 });
        let theta_m = DVector::from_fn(p, |k, _| if k < 3 { 0.5 } else { 0.0 });
        let m = &a * beta.transpose() + randn(&mut rng, n, p);
        let y = &a * DVector::from_element(q, 0.5) + &m * theta_m + randn(&mut rng, n, 1).column(0);
        Dataset::new(y, a, m, None).unwrap()
    }

    fn estimate(gamma: &[f64]) -> DebiasedEstimate {
        let g = DVector::from_column_slice(gamma);
        DebiasedEstimate {
            gamma_hat: g.clone(),
            gamma_pilot: g,
            correction: DVector::zeros(gamma.len()),
            directions: vec![],
        }
    }

    fn variance(v: DMatrix<f64>) -> VarianceEstimate {
        VarianceEstimate {
            v_hat: v,
            sigma_e2_hat: 0.0,
            sigma_z2_hat: 0.0,
            sigma2_hat: 0.0,
            tau: 0.0,
        }
    }

    #[test]
    fn pilot_examples() {
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(pilot_estimator(&b, &DVector::zeros(2)).unwrap()[0], 0.0);
        assert_eq!(pilot_estimator(&b, &DVector::from_vec(vec![3.0, 7.0])).unwrap()[0], 3.0);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = randn(&mut rng, 4, 2);
        let t = randn(&mut rng, 4, 1).column(0).into_owned();
        let got = pilot_estimator(&b, &t).unwrap();
        for j in 0..2 {
            let mut s = 0.0;
            for k in 0..4 {
                s += b[(k, j)] * t[k];
            }
            assert!((got[j] - s).abs() < 1e-14);
        }
        assert!(pilot_estimator(&b, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn zero_residual_or_zero_direction_leaves_pilot() {
        let data = synthetic(4, 40, 6, 1, 0.5);
        let centered = center_dataset(&data);
        let x = centered.design();
        let beta = exposure_coefficients(&centered).unwrap();
        let theta = DVector::from_fn(x.ncols(), |k, _| 0.1 * k as f64);
        let fit = RegressionFit {
            support: (0..x.ncols()).collect(),
            coef: theta.clone(),
            lambda: 0.0,
            iterations: 0,
            converged: true,
        };
        let dir = |u: DVector<f64>| ProjectionDirection {
            u,
            ..ProjectionDirection::zero(x.ncols(), 0.1, 1.0)
        };

        // exact fit kills the correction
        let exact = CenteredDataset {
            y: &x * &theta,
            ..centered.clone()
        };
        let u = DVector::from_element(x.ncols(), 1.0);
        let est = debiased_estimator(&exact, &beta, &fit, vec![dir(u)]).unwrap();
        assert!(est.correction[0].abs() < 1e-12);

        // zero direction
        let est = debiased_estimator(&centered, &beta, &fit, vec![dir(DVector::zeros(x.ncols()))]).unwrap();
        assert_eq!(est.gamma_hat, est.gamma_pilot);
    }

    #[test]
    fn variance_split_is_clamped() {
        assert_eq!(split_variance(2.0, 0.5), 1.5);
        assert_eq!(split_variance(0.5, 2.0), 0.0);
    }

    #[test]
    fn covariance_examples() {
        let data = synthetic(5, 5, 2, 1, 0.3);
        let centered = center_dataset(&data);
        let d = centered.design().ncols();
        let zero = vec![ProjectionDirection::zero(d, 0.1, 1.0)];
        let v = covariance_matrix(&centered, &zero, (0.3, 0.3, 0.0), 1.0).unwrap();
        assert_eq!(v.v_hat[(0, 0)], 1.0 / 5.0);

        let mut u = DVector::zeros(d);
        u[0] = 0.7;
        u[2] = -0.4;
        let dirs = vec![ProjectionDirection {
            u: u.clone(),
            ..ProjectionDirection::zero(d, 0.1, 1.0)
        }];
        let v0 = covariance_matrix(&centered, &dirs, (2.0, 0.5, 1.5), 0.0).unwrap();
        let v1 = covariance_matrix(&centered, &dirs, (2.0, 0.5, 1.5), 1.0).unwrap();
        assert!((v1.v_hat[(0, 0)] - v0.v_hat[(0, 0)] - 0.2).abs() < 1e-15);

        // scalar arithmetic: sigma_e2 / sum(a^2) + sigma_z2 * sum((x u)^2) / n^2
        let a = &centered.a;
        let x = centered.design();
        let sa: f64 = a.iter().map(|v| v * v).sum();
        let mut sxu = 0.0;
        for i in 0..5 {
            let mut r = 0.0;
            for k in 0..d {
                r += x[(i, k)] * u[k];
            }
            sxu += r * r;
        }
        let expect = 1.5 / sa + 0.5 * sxu / 25.0;
        assert!((v0.v_hat[(0, 0)] - expect).abs() < 1e-13 * expect.max(1.0));
    }

    #[test]
    fn bonferroni_examples() {
        let v1 = variance(DMatrix::identity(1, 1));
        let out = bonferroni_test(&estimate(&[0.0]), &v1, 0.05).unwrap();
        assert_eq!(out.p_value, 1.0);
        assert!(!out.reject);

        let out = bonferroni_test(&estimate(&[2.5]), &v1, 0.05).unwrap();
        assert!(out.reject);
        assert!((out.threshold - 1.959964).abs() < 1e-6);
        assert!((out.p_value - 0.012419).abs() < 5e-7);

        let v3 = variance(DMatrix::identity(3, 3));
        let out = bonferroni_test(&estimate(&[0.1, -0.2, 0.3]), &v3, 0.05).unwrap();
        assert!((out.threshold - 2.39398).abs() < 1e-5);
    }

    #[test]
    fn chi_square_examples() {
        let out = chi_square_test(&estimate(&[0.0, 0.0]), &variance(DMatrix::identity(2, 2)), 0.05).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert_eq!(out.p_value, 1.0);
        let out = chi_square_test(&estimate(&[1.0, 1.0]), &variance(DMatrix::identity(2, 2)), 0.05).unwrap();
        assert!((out.statistic - 2.0).abs() < 1e-15);
        assert!((out.p_value - (-1.0f64).exp()).abs() < 1e-12);
        let bad = variance(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        assert!(matches!(
            chi_square_test(&estimate(&[1.0, 1.0]), &bad, 0.05),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn q1_tests_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let g: f64 = StandardNormal.sample(&mut rng);
            let v = rng.random_range(1e-4..4.0);
            let e = estimate(&[g * 2.0]);
            let var = variance(DMatrix::from_element(1, 1, v));
            let b = bonferroni_test(&e, &var, 0.05).unwrap();
            let c = chi_square_test(&e, &var, 0.05).unwrap();
            assert_eq!(b.reject, c.reject);
            assert!((b.p_value - c.p_value).abs() <= 1e-12);
        }
    }

    #[test]
    fn full_test_is_consistent() {
        for (seed, q) in [(1u64, 1usize), (2, 2)] {
            let data = synthetic(seed, 80, 30, q, 0.5);
            for method in [TestMethod::Bonferroni, TestMethod::ChiSquare] {
                let config = ModelConfig {
                    method,
                    ..ModelConfig::default()
                };
                let res = run_full_test(&data, &config).unwrap();
                let o = &res.outcome;
                assert!((0.0..=1.0).contains(&o.p_value));
                assert_eq!(o.reject, o.p_value < config.alpha);
                assert_eq!(o.reject, o.statistic > o.threshold);
                for j in 0..q {
                    assert!(res.variance.v_hat[(j, j)] >= config.tau / 80.0 - 1e-12);
                }
                let diff = &res.estimate.gamma_hat - (&res.estimate.gamma_pilot + &res.estimate.correction);
                assert!(diff.amax() <= 1e-12 * res.estimate.gamma_hat.amax().max(1.0));
                assert_eq!(res.diagnostics.s_hat_a.is_some(), q == 1);
                for dir in &res.estimate.directions {
                    assert!(dir.residuals.satisfied(1e-6));
                }
            }
        }
    }

    #[test]
    fn strong_mediation_is_detected() {
        let data = synthetic(3, 200, 40, 1, 1.0);
        let res = run_full_test(&data, &ModelConfig::default()).unwrap();
        assert!(res.outcome.reject, "p = {}", res.outcome.p_value);
    }

    #[test]
    fn empty_covariates_match_base_path() {
        let data = synthetic(6, 60, 20, 1, 0.4);
        let with_c = Dataset::new(
            data.y().clone(),
            data.a().clone(),
            data.m().clone(),
            Some(DMatrix::zeros(60, 0)),
        )
        .unwrap();
        let a = run_full_test(&data, &ModelConfig::default()).unwrap();
        let b = run_full_test(&with_c, &ModelConfig::default()).unwrap();
        assert_eq!(a.outcome, b.outcome);
        assert_eq!(a.variance, b.variance);
        assert_eq!(a.estimate.gamma_hat, b.estimate.gamma_hat);
    }

    #[test]
    fn covariates_enter_the_exposure_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data = synthetic(7, 60, 20, 1, 0.4);
        let c = randn(&mut rng, 60, 2);
        let with_c = Dataset::new(data.y().clone(), data.a().clone(), data.m().clone(), Some(c)).unwrap();
        let res = run_full_test(&with_c, &ModelConfig::default()).unwrap();
        assert_eq!(res.estimate.directions[0].u.len(), 1 + 2 + 20);
        assert!(res.estimate.directions[0].u.len() == res.theta_hat.len());
    }

    #[test]
    fn shifts_do_not_change_the_outcome() {
        let data = synthetic(9, 60, 15, 2, 0.4);
        let base = run_full_test(&data, &ModelConfig::default()).unwrap();
        let shifted = Dataset::new(
            data.y().add_scalar(3.0),
            data.a().add_scalar(-1.5),
            data.m().add_scalar(0.25),
            None,
        )
        .unwrap();
        let moved = run_full_test(&shifted, &ModelConfig::default()).unwrap();
        let (o1, o2) = (&base.outcome, &moved.outcome);
        assert!((o1.p_value - o2.p_value).abs() < 1e-10);
        assert!((o1.statistic - o2.statistic).abs() < 1e-10 * o1.statistic.max(1.0));
        assert!((&o1.t_stats - &o2.t_stats).amax() < 1e-10 * o1.t_stats.amax().max(1.0));
        assert_eq!(o1.reject, o2.reject);
    }

    #[test]
    fn scaling_the_outcome_keeps_the_decision() {
        let data = synthetic(10, 70, 20, 1, 0.4);
        let config = ModelConfig {
            tau: 0.0,
            ..ModelConfig::default()
        };
        let base = run_full_test(&data, &config).unwrap();
        let c = 6.5;
        let scaled = Dataset::new(data.y() * c, data.a().clone(), data.m().clone(), None).unwrap();
        let res = run_full_test(&scaled, &config).unwrap();
        let g0 = base.estimate.gamma_hat[0];
        assert!((res.estimate.gamma_hat[0] - c * g0).abs() < 1e-8 * (c * g0).abs().max(1.0));
        assert!((res.outcome.t_stats[0] - base.outcome.t_stats[0]).abs() < 1e-8);
        assert!((res.outcome.p_value - base.outcome.p_value).abs() < 1e-8);
        assert_eq!(res.outcome.reject, base.outcome.reject);
    }

    #[test]
    fn restricted_variant_on_full_support_matches_full() {
        // strong dense signal on a tiny design so the Lasso keeps everything
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 200;
        let a = DMatrix::from_fn(n, 1, |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 });
        let m = &a * DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.5]) + randn(&mut rng, n, 3);
        let y = &a * 2.0 + &m * DVector::from_vec(vec![1.5, 2.0, -1.0]) + randn(&mut rng, n, 1) * 0.5;
        let data = Dataset::new(y.column(0).into_owned(), a, m, None).unwrap();
        let config = ModelConfig::default();
        let full = run_full_test(&data, &config).unwrap();
        let restricted = run_support_restricted_test(&data, &config).unwrap();
        assert_eq!(restricted.diagnostics.support.as_ref().unwrap().len(), 4);
        assert_eq!(full.estimate.gamma_hat, restricted.estimate.gamma_hat);
        assert_eq!(full.outcome, restricted.outcome);
    }

    #[test]
    fn restricted_variant_with_empty_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let n = 30;
        let a = DMatrix::from_fn(n, 1, |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 });
        let m = randn(&mut rng, n, 10);
        let y = randn(&mut rng, n, 1).column(0).into_owned();
        let data = Dataset::new(y, a, m, None).unwrap();
        let config = ModelConfig {
            lasso_scale: 50.0,
            ..ModelConfig::default()
        };
        let res = run_support_restricted_test(&data, &config).unwrap();
        assert!(res.diagnostics.support.as_ref().unwrap().is_empty());
        assert_eq!(res.estimate.gamma_hat[0], 0.0);
        assert_eq!(res.estimate.correction[0], 0.0);
        assert!(!res.diagnostics.warnings.is_empty());
        assert!((0.0..=1.0).contains(&res.outcome.p_value));
        // pilot-only variance: exposure term plus ridge
        let a = center_dataset(&data).a;
        let expect = res.variance.sigma_e2_hat / a.norm_squared() + config.tau / n as f64;
        assert!((res.variance.v_hat[(0, 0)] - expect).abs() < 1e-14);
    }

    #[test]
    fn restricted_directions_are_feasible() {
        let data = synthetic(16, 50, 12, 1, 0.6);
        let config = ModelConfig::default();
        let fitted = fit_support_restricted(&data, &config).unwrap();
        let support = fitted.diagnostics.support.clone().unwrap();
        assert!(!support.is_empty());
        let centered = center_dataset(&data);
        let xs = select_columns(&centered.design(), &support);
        let g = select_entries(&build_loading(&fitted.beta_hat_a, 0, 1).unwrap(), &support);
        let dir = &fitted.estimate.directions[0];
        let prob = VepdProblem::new(xs, g, dir.lambda_used, dir.mu_used).unwrap();
        assert!(prob.slacks(&dir.u).satisfied(1e-6));
        let reference = crate::vepd::vepd_reference_solver(&prob).unwrap();
        let rel = (reference.objective - dir.objective).abs() / reference.objective.max(1e-12);
        assert!(rel < 1e-4);
    }

    #[test]
    fn rejects_invalid_config_and_tiny_samples() {
        let data = synthetic(1, 20, 5, 1, 0.3);
        let bad = ModelConfig {
            alpha: 1.5,
            ..ModelConfig::default()
        };
        let err = run_full_test(&data, &bad).unwrap_err();
        assert!(err.to_string().contains("alpha must be in (0,1)"));
        assert!(err.is_input_error());
    }
}
