//! Reference distributions and multiple-testing control.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

/// Two-sided 97.5% standard normal quantile.
pub const Z_975: f64 = 1.959964;

/// `P(Z > z)` for a standard normal `Z`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Two-sided normal p-value `2 P(Z > |z|)`.
pub fn normal_two_sided(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    (2.0 * normal_sf(z.abs())).min(1.0)
}

/// Upper tail of the chi-square distribution with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if x.is_infinite() && x > 0.0 {
        return 0.0;
    }
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    dist.sf(x.max(0.0)).clamp(0.0, 1.0)
}

pub fn chi2_cdf(x: f64, df: usize) -> f64 {
    1.0 - chi2_sf(x, df)
}

/// Holm's step-down procedure at level `alpha`.
///
/// Sorting the p-values ascending, the `r`-th smallest (0-based) is rejected
/// while `p <= alpha / (m - r)`; the first failure retains it and every larger one.
/// Ties are broken by input position.
pub fn holm(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut reject = vec![false; m];
    for (rank, &idx) in order.iter().enumerate() {
        if p_values[idx] <= alpha / (m - rank) as f64 {
            reject[idx] = true;
        } else {
            break;
        }
    }
    reject
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holm_single_hypothesis_is_plain_threshold() {
        assert_eq!(holm(&[0.049], 0.05), vec![true]);
        assert_eq!(holm(&[0.051], 0.05), vec![false]);
    }

    #[test]
    fn holm_steps_down_and_stops() {
        // thresholds 0.0125, 0.0167, 0.025, 0.05
        let p = [0.01, 0.04, 0.015, 0.03];
        assert_eq!(holm(&p, 0.05), vec![true, false, true, false]);
        // the first failure blocks later, smaller-threshold-passing values
        let p = [0.02, 0.001, 0.04, 0.049];
        assert_eq!(holm(&p, 0.05), vec![false, true, false, false]);
    }

    #[test]
    fn holm_is_at_least_as_powerful_as_bonferroni() {
        let p = [0.001, 0.012, 0.013, 0.2, 0.011];
        let holm_r = holm(&p, 0.05);
        for (i, &pi) in p.iter().enumerate() {
            if pi <= 0.05 / p.len() as f64 {
                assert!(holm_r[i]);
            }
        }
    }

    #[test]
    fn reference_tails() {
        assert!((normal_two_sided(Z_975) - 0.05).abs() < 1e-6);
        assert!((normal_two_sided(-Z_975) - 0.05).abs() < 1e-6);
        // chi2(1) upper 5% point is 3.841459
        assert!((chi2_sf(3.841459, 1) - 0.05).abs() < 1e-6);
        assert_eq!(chi2_sf(f64::INFINITY, 3), 0.0);
        assert_eq!(chi2_sf(0.0, 3), 1.0);
    }
}
