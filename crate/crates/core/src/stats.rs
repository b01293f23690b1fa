//! Normal and chi-square tail functions.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::gamma_ur;
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

/// `P(Z > x)` for standard normal `Z`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

pub fn normal_cdf(x: f64) -> f64 {
    normal_sf(-x)
}

/// `P(|Z| > x)` for `x >= 0`.
pub fn normal_two_sided(x: f64) -> f64 {
    erfc(x.abs() * FRAC_1_SQRT_2)
}

/// `z` with `P(Z > z) = tail`.
pub fn normal_upper_quantile(tail: f64) -> f64 {
    SQRT_2 * erfc_inv(2.0 * tail)
}

/// Upper-tail probability of a chi-square with `df` degrees of freedom.
pub fn chi_square_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if df == 1 {
        // same expression as the two-sided normal tail
        return normal_two_sided(x.sqrt());
    }
    gamma_ur(df as f64 / 2.0, x / 2.0)
}

/// `c` with `P(chi2_df > c) = tail`.
pub fn chi_square_upper_quantile(tail: f64, df: usize) -> f64 {
    if df == 1 {
        let z = normal_upper_quantile(tail / 2.0);
        return z * z;
    }
    ChiSquared::new(df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - tail)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Maclaurin series for erf, accurate for moderate |x|.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        for k in 1..200 {
            term *= -x * x / k as f64;
            sum += term / (2 * k + 1) as f64;
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    fn cdf_by_series(x: f64) -> f64 {
        0.5 * (1.0 + erf_series(x / SQRT_2))
    }

    fn quantile_by_bisection(p: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf_by_series(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn normal_tail_matches_series() {
        for x in [-3.0, -1.2, 0.0, 0.7, 1.96, 2.5, 3.3] {
            assert!((normal_cdf(x) - cdf_by_series(x)).abs() < 1e-13, "{x}");
        }
        assert!((normal_two_sided(2.5) - 0.012419330651552318).abs() < 1e-12);
        assert!((2.0 * (1.0 - cdf_by_series(2.5)) - 0.012419).abs() < 5e-7);
    }

    #[test]
    fn quantiles_match_bisection() {
        let z = normal_upper_quantile(0.025);
        assert!((z - quantile_by_bisection(0.975)).abs() < 1e-9);
        assert!((z - 1.959964).abs() < 1e-6);
        let z3 = normal_upper_quantile(0.05 / 6.0);
        assert!((z3 - quantile_by_bisection(1.0 - 0.05 / 6.0)).abs() < 1e-9);
        assert!((z3 - 2.39398).abs() < 1e-5);
    }

    #[test]
    fn chi_square_closed_forms() {
        // df = 2: survival exp(-x/2)
        for x in [0.5, 2.0, 7.3] {
            assert!((chi_square_sf(x, 2) - (-x / 2.0f64).exp()).abs() < 1e-14);
        }
        assert!((chi_square_sf(2.0, 2) - 0.367879).abs() < 1e-6);
        assert_eq!(chi_square_sf(0.0, 3), 1.0);
        let c = chi_square_upper_quantile(0.05, 2);
        assert!((c - (-2.0 * 0.05f64.ln())).abs() < 1e-8);
        let c1 = chi_square_upper_quantile(0.05, 1);
        assert!((chi_square_sf(c1, 1) - 0.05).abs() < 1e-14);
        let c3 = chi_square_upper_quantile(0.01, 3);
        assert!((chi_square_sf(c3, 3) - 0.01).abs() < 1e-10);
    }
}
