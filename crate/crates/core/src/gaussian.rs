//! Least-squares estimation of the propagation coefficients, coefficient-level
//! inference and the sequential Wald test for the propagation order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{center_response, ColumnTag, PropagatedDesign};
use crate::error::{NprError, Result};
use crate::linalg::{condition_number_sym, gram_inverse_from_r, lstsq_qr};
use crate::testing::{chi2_sf, holm, normal_sf, normal_two_sided, Z_975};

/// OLS fit over the selected, centered propagated columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    /// Provenance of each coefficient.
    pub tags: Vec<ColumnTag>,
    pub theta_hat: DVector<f64>,
    pub rss: f64,
    /// `rss / (n - d_sel)`.
    pub sigma2_hat: f64,
    /// `N^{-1} X^T X` over the selected columns.
    pub gram: DMatrix<f64>,
    pub gram_inverse: DMatrix<f64>,
    /// `sigma_hat * sqrt([(X^T X)^{-1}]_jj)`.
    pub std_errors: DVector<f64>,
    pub n: usize,
    /// Truncation order `K` of the design the fit came from.
    pub max_order: usize,
    /// Means removed from the selected columns before fitting.
    pub column_means: Vec<f64>,
    pub response_mean: f64,
}

impl GaussianFit {
    pub fn d_sel(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn sigma_hat(&self) -> f64 {
        self.sigma2_hat.sqrt()
    }

    pub fn gram_condition_number(&self) -> f64 {
        condition_number_sym(&self.gram)
    }

    /// Predicted mean response for an uncentered design carrying the fitted columns.
    pub fn predict(&self, raw: &PropagatedDesign) -> Result<DVector<f64>> {
        if raw.is_centered() {
            return Err(NprError::InvalidInput(
                "prediction expects an uncentered design; training means are applied internally"
                    .into(),
            ));
        }
        let mut x = raw.columns_for(&self.tags)?;
        for (mut col, &m) in x.column_iter_mut().zip(&self.column_means) {
            col.add_scalar_mut(-m);
        }
        Ok((x * &self.theta_hat).add_scalar(self.response_mean))
    }
}

/// Ordinary least squares of `y` on the selected columns of a centered design.
///
/// The response is centered internally. The solve goes through a QR
/// factorization of the design; the Gram inverse is formed from the `R` factor.
pub fn fit_ols(design: &PropagatedDesign, y: &DVector<f64>) -> Result<GaussianFit> {
    let selected = design
        .selected()
        .ok_or_else(|| NprError::InvalidInput("run forward selection before fitting".into()))?;
    let means = design.column_means().ok_or_else(|| {
        NprError::InvalidInput("the Gaussian fit expects a centered design".into())
    })?;
    let n = design.n_rows();
    if y.len() != n {
        return Err(NprError::DimensionMismatch(format!(
            "design has {n} rows, response has {} entries",
            y.len()
        )));
    }
    let p = selected.len();
    if n <= p {
        return Err(NprError::InsufficientObservations { n, columns: p });
    }
    let x = design.selected_matrix();
    let yc = center_response(y);
    let (theta_hat, r) = lstsq_qr(&x, &yc)?;
    let resid = &yc - &x * &theta_hat;
    let mut rss = resid.norm_squared();
    if rss <= (64.0 * f64::EPSILON).powi(2) * yc.norm_squared() {
        // exact fit up to rounding
        rss = 0.0;
    }
    let sigma2_hat = rss / (n - p) as f64;
    let xtx_inv = gram_inverse_from_r(&r)?;
    let nf = n as f64;
    let gram = crate::linalg::symmetrize(x.transpose() * &x / nf);
    let gram_inverse = &xtx_inv * nf;
    let sigma = sigma2_hat.sqrt();
    let std_errors = DVector::from_iterator(p, (0..p).map(|j| sigma * xtx_inv[(j, j)].sqrt()));
    Ok(GaussianFit {
        tags: design.selected_tags(),
        theta_hat,
        rss,
        sigma2_hat,
        gram,
        gram_inverse,
        std_errors,
        n,
        max_order: design.max_order(),
        column_means: selected.iter().map(|&c| means[c]).collect(),
        response_mean: if n > 0 { y.mean() } else { 0.0 },
    })
}

/// Per-coefficient inference under `theta_j = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientInference {
    pub tag: ColumnTag,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TStatistics {
    pub rows: Vec<CoefficientInference>,
    /// Set when the residual variance is zero and t-statistics are infinite.
    pub warning: Option<String>,
}

pub fn t_statistics(fit: &GaussianFit) -> TStatistics {
    let mut warning = None;
    let rows = fit
        .tags
        .iter()
        .enumerate()
        .map(|(j, &tag)| {
            let est = fit.theta_hat[j];
            let se = fit.std_errors[j];
            let t = if se > 0.0 {
                est / se
            } else {
                warning = Some("residual variance is zero; t-statistics are infinite".to_string());
                if est == 0.0 {
                    0.0
                } else {
                    f64::INFINITY.copysign(est)
                }
            };
            CoefficientInference {
                tag,
                estimate: est,
                std_error: se,
                t_stat: t,
                p_value: normal_two_sided(t),
                ci_low: est - Z_975 * se,
                ci_high: est + Z_975 * se,
            }
        })
        .collect();
    TStatistics { rows, warning }
}

/// Wald statistic for `H_0: lambda_j = ... = lambda_K = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldStatistic {
    pub order: usize,
    pub statistic: f64,
    /// Number of selected columns of order `>= j`.
    pub restriction_dim: usize,
}

impl WaldStatistic {
    /// True when no selected column has order `>= j`.
    pub fn is_empty(&self) -> bool {
        self.restriction_dim == 0
    }
}

pub fn wald_statistic(fit: &GaussianFit, order: usize) -> Result<WaldStatistic> {
    if order > fit.max_order {
        return Err(NprError::InvalidInput(format!(
            "order {order} exceeds the fitted truncation order {}",
            fit.max_order
        )));
    }
    let idx: Vec<usize> = fit
        .tags
        .iter()
        .enumerate()
        .filter(|(_, t)| t.order >= order)
        .map(|(i, _)| i)
        .collect();
    let statistic = if idx.is_empty() {
        0.0
    } else {
        wald_quadratic_form(fit, &idx)?
    };
    Ok(WaldStatistic {
        order,
        statistic,
        restriction_dim: idx.len(),
    })
}

/// `N theta_R^T (R Gamma^{-1} R^T)^{-1} theta_R / sigma^2` for the coefficient subset `idx`.
pub fn wald_quadratic_form(fit: &GaussianFit, idx: &[usize]) -> Result<f64> {
    let sub = fit
        .gram_inverse
        .select_rows(idx.iter())
        .select_columns(idx.iter());
    let theta_r = fit.theta_hat.select_rows(idx.iter());
    let solved = match sub.clone().cholesky() {
        Some(ch) => ch.solve(&theta_r),
        None => sub
            .lu()
            .solve(&theta_r)
            .ok_or_else(|| NprError::Singular("restricted Gram inverse is singular".into()))?,
    };
    let quad = fit.n as f64 * theta_r.dot(&solved);
    if fit.sigma2_hat > 0.0 {
        Ok(quad / fit.sigma2_hat)
    } else if quad == 0.0 {
        Ok(0.0)
    } else {
        Ok(f64::INFINITY)
    }
}

/// How the normal approximation turns `Z_j` into a p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalTail {
    /// `2 (1 - Phi(|Z|))`.
    Symmetric,
    /// `2 (1 - Phi(Z))` clipped to `[0, 1]`.
    UpperClamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderTestOptions {
    /// Restriction dimensions below this use the chi-square reference.
    pub chi2_max_dim: usize,
    pub normal_tail: NormalTail,
}

impl Default for OrderTestOptions {
    fn default() -> Self {
        Self {
            chi2_max_dim: 30,
            normal_tail: NormalTail::Symmetric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Chi2,
    Normal,
    /// No selected column of the tested orders survived; `p = 1`.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderTestRecord {
    pub order: usize,
    pub restriction_dim: usize,
    pub statistic: f64,
    /// `(T - m) / sqrt(2m)`.
    pub z: f64,
    pub p_value: f64,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderTestReport {
    pub records: Vec<OrderTestRecord>,
    pub holm_rejections: Vec<bool>,
    pub alpha: f64,
    pub k_max: usize,
    /// Smallest order whose null is retained, or `k_max + 1` when all are rejected.
    pub selected_order: usize,
    pub options: OrderTestOptions,
}

/// Sequential tests of `H_0j` for `j = 0..=k_max` with Holm's correction at level `alpha`.
pub fn order_test(
    fit: &GaussianFit,
    k_max: usize,
    alpha: f64,
    options: OrderTestOptions,
) -> Result<OrderTestReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(NprError::InvalidInput(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if k_max > fit.max_order {
        return Err(NprError::InvalidInput(format!(
            "k_max = {k_max} exceeds the fitted truncation order {}",
            fit.max_order
        )));
    }
    let records = (0..=k_max)
        .map(|j| {
            let w = wald_statistic(fit, j)?;
            Ok(record_for(w, &options))
        })
        .collect::<Result<Vec<_>>>()?;
    let p: Vec<f64> = records.iter().map(|r| r.p_value).collect();
    let holm_rejections = holm(&p, alpha);
    let selected_order = holm_rejections
        .iter()
        .position(|&r| !r)
        .unwrap_or(k_max + 1);
    Ok(OrderTestReport {
        records,
        holm_rejections,
        alpha,
        k_max,
        selected_order,
        options,
    })
}

fn record_for(w: WaldStatistic, options: &OrderTestOptions) -> OrderTestRecord {
    let m = w.restriction_dim;
    if m == 0 {
        return OrderTestRecord {
            order: w.order,
            restriction_dim: 0,
            statistic: 0.0,
            z: 0.0,
            p_value: 1.0,
            regime: Regime::Empty,
        };
    }
    let mf = m as f64;
    let z = (w.statistic - mf) / (2.0 * mf).sqrt();
    let (p_value, regime) = if m < options.chi2_max_dim {
        (chi2_sf(w.statistic, m), Regime::Chi2)
    } else {
        let p = match options.normal_tail {
            NormalTail::Symmetric => normal_two_sided(z),
            NormalTail::UpperClamped => (2.0 * normal_sf(z)).clamp(0.0, 1.0),
        };
        (p, Regime::Normal)
    };
    OrderTestRecord {
        order: w.order,
        restriction_dim: m,
        statistic: w.statistic,
        z,
        p_value,
        regime,
    }
}
