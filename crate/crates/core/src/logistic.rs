//! Network logistic regression: conditional maximum likelihood over the
//! intercept-augmented propagated design, prediction and AUC evaluation.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{ColumnTag, PropagatedDesign};
use crate::error::{NprError, Result};
use crate::linalg::spd_inverse;
use crate::newton::{maximize, Evaluation, NewtonOptions, Objective};
use crate::testing::Z_975;

#[inline]
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^eta)` without overflow.
#[inline]
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

/// Bernoulli log-likelihood of `y` under `P = logistic(x theta)`. The design
/// passed here already contains the intercept column.
#[derive(Debug, Clone)]
pub struct LogisticObjective<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(NprError::DimensionMismatch(format!(
                "design has {} rows, response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(NprError::InvalidInput(format!(
                "logistic responses must be 0 or 1, found {bad}"
            )));
        }
        Ok(Self { x, y })
    }
}

impl Objective for LogisticObjective<'_> {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        let eta = self.x * theta;
        eta.iter()
            .zip(self.y.iter())
            .map(|(&e, &y)| y * e - softplus(e))
            .sum()
    }

    fn evaluate(&self, theta: &DVector<f64>) -> Evaluation {
        let eta = self.x * theta;
        let p = self.x.ncols();
        let mut value = 0.0;
        let mut resid = DVector::zeros(eta.len());
        let mut weighted = self.x.clone();
        for i in 0..eta.len() {
            let e = eta[i];
            let prob = logistic(e);
            value += self.y[i] * e - softplus(e);
            resid[i] = self.y[i] - prob;
            let w = (prob * (1.0 - prob)).sqrt();
            for c in 0..p {
                weighted[(i, c)] *= w;
            }
        }
        Evaluation {
            value,
            gradient: self.x.tr_mul(&resid),
            information: weighted.tr_mul(&weighted),
        }
    }
}

/// Fitted network logistic regression. Coefficient 0 is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    /// Provenance of coefficients `1..`; coefficient 0 is the intercept.
    pub tags: Vec<ColumnTag>,
    pub theta_hat: DVector<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `N^{-1} sum_i w_i x_i x_i^T` at the estimate.
    pub information: DMatrix<f64>,
    pub std_errors: DVector<f64>,
    /// Log-likelihood at the start and after each accepted Newton step.
    pub trace: Vec<f64>,
    pub n: usize,
    pub max_order: usize,
}

impl LogisticFit {
    pub fn intercept(&self) -> f64 {
        self.theta_hat[0]
    }

    pub fn score_max_norm(&self, design: &PropagatedDesign, y: &DVector<f64>) -> Result<f64> {
        let x = with_intercept(&design.columns_for(&self.tags)?);
        let probs = (&x * &self.theta_hat).map(logistic);
        Ok(x.tr_mul(&(y - probs)).amax())
    }

    /// Wald intervals `estimate +/- 1.96 se` per coefficient, intercept first.
    pub fn confidence_intervals(&self) -> Vec<(f64, f64)> {
        self.theta_hat
            .iter()
            .zip(self.std_errors.iter())
            .map(|(&b, &se)| (b - Z_975 * se, b + Z_975 * se))
            .collect()
    }
}

pub(crate) fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

/// Newton–Raphson maximum likelihood starting from zero. The design must be
/// uncentered; an all-ones intercept column is prepended internally.
pub fn fit_logistic(
    design: &PropagatedDesign,
    y: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<LogisticFit> {
    if design.is_centered() {
        return Err(NprError::InvalidInput(
            "the logistic fit estimates an explicit intercept; pass an uncentered design".into(),
        ));
    }
    let x = with_intercept(&design.selected_matrix());
    let objective = LogisticObjective::new(&x, y)?;
    if x.nrows() <= x.ncols() {
        return Err(NprError::InsufficientObservations {
            n: x.nrows(),
            columns: x.ncols(),
        });
    }
    let out = maximize(&objective, DVector::zeros(x.ncols()), opts)?;
    let n = x.nrows();
    let total_info = out.evaluation.information;
    let cov = spd_inverse(&total_info)?;
    let std_errors = cov.diagonal().map(|v| v.max(0.0).sqrt());
    Ok(LogisticFit {
        tags: design.selected_tags(),
        theta_hat: out.theta,
        log_likelihood: out.evaluation.value,
        iterations: out.iterations,
        converged: out.converged,
        information: total_info / n as f64,
        std_errors,
        trace: out.trace,
        n,
        max_order: design.max_order(),
    })
}

/// Fitted probabilities `logistic(alpha + x^T lambda)` on a design that carries
/// every fitted column.
pub fn predict_proba(fit: &LogisticFit, design: &PropagatedDesign) -> Result<DVector<f64>> {
    let x = with_intercept(&design.columns_for(&fit.tags)?);
    Ok((x * &fit.theta_hat).map(logistic))
}

/// Area under the ROC curve in its Mann–Whitney form: the fraction of
/// (positive, negative) pairs ordered correctly, ties counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(NprError::DimensionMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(NprError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tied groups
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end + 1) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum_pos += mid_rank * pos_in_group as f64;
        start = end;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Test-AUC summary over repeated random train/test splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    pub mean: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub splits: usize,
    pub train_frac: f64,
    pub per_split: Vec<f64>,
}

impl AucSummary {
    pub fn from_values(values: Vec<f64>, train_frac: f64) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let se = (var / n).sqrt();
        Self {
            mean,
            std_error: se,
            ci_low: mean - Z_975 * se,
            ci_high: mean + Z_975 * se,
            splits: values.len(),
            train_frac,
            per_split: values,
        }
    }
}

/// Repeated hold-out evaluation: propagate once on the full network (the
/// `design` argument), then for each split fit on a random `train_frac` share of
/// the rows and score the remaining rows.
pub fn evaluate_auc_splits<R: Rng + ?Sized>(
    design: &PropagatedDesign,
    y: &DVector<f64>,
    selection_tol: f64,
    opts: &NewtonOptions,
    splits: usize,
    train_frac: f64,
    rng: &mut R,
) -> Result<AucSummary> {
    if splits == 0 {
        return Err(NprError::InvalidInput(
            "at least one split is required".into(),
        ));
    }
    let n = design.n_rows();
    let n_train = train_count(n, train_frac)?;
    let mut values = Vec::with_capacity(splits);
    let mut rows: Vec<usize> = (0..n).collect();
    for _ in 0..splits {
        rows.shuffle(rng);
        let (train, test) = rows.split_at(n_train);
        let train_design = design
            .rows(train)
            .forward_select_with_intercept(selection_tol)?;
        let y_train = y.select_rows(train.iter());
        let fit = fit_logistic(&train_design, &y_train, opts)?;
        let probs = predict_proba(&fit, &design.rows(test))?;
        let labels: Vec<bool> = test.iter().map(|&i| y[i] == 1.0).collect();
        values.push(auc(probs.as_slice(), &labels)?);
    }
    Ok(AucSummary::from_values(values, train_frac))
}

pub(crate) fn train_count(n: usize, frac: f64) -> Result<usize> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(NprError::InvalidInput(format!(
            "training fraction must lie in (0, 1), got {frac}"
        )));
    }
    let n_train = (frac * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(NprError::InvalidInput(format!(
            "split of {n} rows at fraction {frac} leaves an empty side"
        )));
    }
    Ok(n_train)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(cols: &[&[f64]]) -> PropagatedDesign {
        let n = cols[0].len();
        PropagatedDesign::from_blocks(&[DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])])
    }

    #[test]
    fn auc_examples() {
        assert_eq!(
            auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(),
            1.0
        );
        assert_eq!(
            auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap(),
            0.0
        );
        assert_eq!(
            auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap(),
            0.5
        );
        // one tie between a positive and a negative
        assert_eq!(auc(&[0.1, 0.5, 0.5], &[false, false, true]).unwrap(), 0.75);
        assert!(matches!(
            auc(&[0.1, 0.2], &[true, true]),
            Err(NprError::SingleClass)
        ));
    }

    #[test]
    fn zero_coefficients_predict_one_half() {
        let d = raw(&[&[1.0, -2.0, 3.0]]);
        let fit = LogisticFit {
            tags: d.selected_tags(),
            theta_hat: DVector::zeros(2),
            log_likelihood: 0.0,
            iterations: 0,
            converged: true,
            information: DMatrix::identity(2, 2),
            std_errors: DVector::zeros(2),
            trace: vec![],
            n: 3,
            max_order: 0,
        };
        assert!(predict_proba(&fit, &d).unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn constant_response_is_reported_as_separation() {
        let d = raw(&[&[0.1, -0.4, 0.3, 0.9, -1.2, 0.5]]);
        let y = DVector::from_element(6, 1.0);
        let err = fit_logistic(&d, &y, &NewtonOptions::default()).unwrap_err();
        assert!(matches!(err, NprError::Separation { .. }), "{err}");
    }

    #[test]
    fn rejects_non_binary_and_centered_inputs() {
        let d = raw(&[&[0.1, -0.4, 0.3, 0.9]]);
        let y = DVector::from_vec(vec![0.0, 1.0, 2.0, 0.0]);
        assert!(fit_logistic(&d, &y, &NewtonOptions::default()).is_err());
        let y = DVector::from_vec(vec![0.0, 1.0, 1.0, 0.0]);
        assert!(fit_logistic(&d.clone().center(), &y, &NewtonOptions::default()).is_err());
    }

    #[test]
    fn positive_coefficient_raises_probability() {
        let x = [-1.0, -0.5, 0.0, 0.2, 0.4, 0.9, 1.3, -0.2, 0.7, -0.9];
        let y = [0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let d = raw(&[&x]);
        let fit = fit_logistic(
            &d,
            &DVector::from_column_slice(&y),
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!(fit.converged);
        assert!(fit.theta_hat[1] > 0.0);
        let probe = raw(&[&[-1.0, 0.0, 1.0]]);
        let p = predict_proba(&fit, &probe).unwrap();
        assert!(p[0] < p[1] && p[1] < p[2]);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        // round trip on the training design
        let fitted = predict_proba(&fit, &d).unwrap();
        let direct = (with_intercept(d.matrix()) * &fit.theta_hat).map(logistic);
        assert!((fitted - direct).amax() < 1e-12);
    }

    #[test]
    fn train_count_rejects_empty_sides() {
        assert!(train_count(10, 1.0).is_err());
        assert!(train_count(10, 0.0).is_err());
        assert!(train_count(1, 0.5).is_err());
        assert_eq!(train_count(10, 0.8).unwrap(), 8);
    }
}
