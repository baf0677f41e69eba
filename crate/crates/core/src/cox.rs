//! Network Cox proportional hazards model: Breslow partial likelihood over
//! propagated covariates with right censoring.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::design::{ColumnTag, PropagatedDesign};
use crate::error::{NprError, Result};
use crate::linalg::spd_inverse;
use crate::newton::{maximize, Evaluation, NewtonOptions, Objective};

/// Right-censored observations `(min(T, C), 1{T <= C})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalData {
    time: Vec<f64>,
    event: Vec<bool>,
}

impl SurvivalData {
    pub fn new(time: Vec<f64>, event: Vec<bool>) -> Result<Self> {
        if time.len() != event.len() {
            return Err(NprError::DimensionMismatch(format!(
                "{} times for {} event indicators",
                time.len(),
                event.len()
            )));
        }
        if let Some(bad) = time.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(NprError::InvalidInput(format!(
                "observed times must be positive and finite, found {bad}"
            )));
        }
        if !event.iter().any(|&e| e) {
            return Err(NprError::NoEvents);
        }
        Ok(Self { time, event })
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn event(&self) -> &[bool] {
        &self.event
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&e| e).count()
    }

    pub fn rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            rows.iter().map(|&i| self.time[i]).collect(),
            rows.iter().map(|&i| self.event[i]).collect(),
        )
    }

    /// Applies `f` to every observed time; `f` must keep times positive.
    pub fn map_time<F: Fn(f64) -> f64>(&self, f: F) -> Result<Self> {
        Self::new(
            self.time.iter().map(|&t| f(t)).collect(),
            self.event.clone(),
        )
    }
}

/// Breslow log partial likelihood with risk-set sums streamed over times in
/// descending order. Tied times enter the risk set together.
#[derive(Debug, Clone)]
pub struct CoxObjective<'a> {
    x: &'a DMatrix<f64>,
    event: Vec<bool>,
    /// Row indices sorted by descending time (stable).
    order: Vec<usize>,
    /// Boundaries of tied-time groups within `order`.
    groups: Vec<(usize, usize)>,
}

impl<'a> CoxObjective<'a> {
    pub fn new(x: &'a DMatrix<f64>, surv: &SurvivalData) -> Result<Self> {
        if x.nrows() != surv.len() {
            return Err(NprError::DimensionMismatch(format!(
                "design has {} rows, survival data has {} entries",
                x.nrows(),
                surv.len()
            )));
        }
        let t = surv.time();
        let mut order: Vec<usize> = (0..t.len()).collect();
        // descending time; at equal times events come first
        order.sort_by(|&a, &b| {
            t[b].total_cmp(&t[a])
                .then_with(|| surv.event[b].cmp(&surv.event[a]))
        });
        let mut groups = Vec::new();
        let mut start = 0;
        while start < order.len() {
            let mut end = start + 1;
            while end < order.len() && t[order[end]] == t[order[start]] {
                end += 1;
            }
            groups.push((start, end));
            start = end;
        }
        Ok(Self {
            x,
            event: surv.event.clone(),
            order,
            groups,
        })
    }

    fn accumulate(&self, theta: &DVector<f64>, derivatives: bool) -> Evaluation {
        let p = self.x.ncols();
        let eta = self.x * theta;
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(if derivatives { p } else { 0 });
        let mut s2 = DMatrix::zeros(
            if derivatives { p } else { 0 },
            if derivatives { p } else { 0 },
        );
        let mut value = 0.0;
        let mut gradient = DVector::zeros(if derivatives { p } else { 0 });
        let mut information = DMatrix::zeros(gradient.len(), gradient.len());
        for &(start, end) in &self.groups {
            for &i in &self.order[start..end] {
                let w = (eta[i] - shift).exp();
                s0 += w;
                if derivatives {
                    let xi = self.x.row(i).transpose();
                    s1.axpy(w, &xi, 1.0);
                    s2.ger(w, &xi, &xi, 1.0);
                }
            }
            let mut d = 0usize;
            for &i in &self.order[start..end] {
                if self.event[i] {
                    d += 1;
                    value += eta[i];
                    if derivatives {
                        gradient += self.x.row(i).transpose();
                    }
                }
            }
            if d == 0 {
                continue;
            }
            let df = d as f64;
            value -= df * (s0.ln() + shift);
            if derivatives {
                let mean = &s1 / s0;
                gradient.axpy(-df, &mean, 1.0);
                information += (&s2 / s0 - &mean * mean.transpose()) * df;
            }
        }
        Evaluation {
            value,
            gradient,
            information,
        }
    }
}

impl Objective for CoxObjective<'_> {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        self.accumulate(theta, false).value
    }

    fn evaluate(&self, theta: &DVector<f64>) -> Evaluation {
        let mut e = self.accumulate(theta, true);
        e.information = (&e.information + e.information.transpose()) * 0.5;
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub tags: Vec<ColumnTag>,
    pub lambda_hat: DVector<f64>,
    pub partial_loglik: f64,
    /// Observed information divided by `N`.
    pub information: DMatrix<f64>,
    pub std_errors: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
    pub n: usize,
    pub n_events: usize,
    pub max_order: usize,
}

/// Maximum partial likelihood from `lambda = 0` on an uncentered, selected design.
pub fn fit_cox(
    design: &PropagatedDesign,
    surv: &SurvivalData,
    opts: &NewtonOptions,
) -> Result<CoxFit> {
    if design.is_centered() {
        return Err(NprError::InvalidInput(
            "the Cox fit expects an uncentered design".into(),
        ));
    }
    let x = design.selected_matrix();
    let objective = CoxObjective::new(&x, surv)?;
    let out = maximize(&objective, DVector::zeros(x.ncols()), opts)?;
    let n = x.nrows();
    let cov = spd_inverse(&out.evaluation.information)?;
    Ok(CoxFit {
        tags: design.selected_tags(),
        lambda_hat: out.theta,
        partial_loglik: out.evaluation.value,
        information: out.evaluation.information / n as f64,
        std_errors: cov.diagonal().map(|v| v.max(0.0).sqrt()),
        iterations: out.iterations,
        converged: out.converged,
        trace: out.trace,
        n,
        n_events: surv.n_events(),
        max_order: design.max_order(),
    })
}

/// Relative risks `exp(x^T lambda)` on a design carrying the fitted columns.
pub fn relative_risk(fit: &CoxFit, design: &PropagatedDesign) -> Result<DVector<f64>> {
    Ok((design.columns_for(&fit.tags)? * &fit.lambda_hat).map(f64::exp))
}

/// Draws `T ~ Exp(baseline_rate * exp(x^T lambda))` and independent
/// `C ~ Exp(censor_rate)` for each row of `x`.
pub fn simulate_cox_data<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    lambda: &DVector<f64>,
    baseline_rate: f64,
    censor_rate: f64,
    rng: &mut R,
) -> Result<SurvivalData> {
    if x.ncols() != lambda.len() {
        return Err(NprError::DimensionMismatch(format!(
            "{} columns for {} coefficients",
            x.ncols(),
            lambda.len()
        )));
    }
    if !(baseline_rate > 0.0 && censor_rate > 0.0) {
        return Err(NprError::InvalidInput(
            "hazard rates must be positive".into(),
        ));
    }
    let eta = x * lambda;
    let censor = Exp::new(censor_rate).expect("positive rate");
    let mut time = Vec::with_capacity(eta.len());
    let mut event = Vec::with_capacity(eta.len());
    for &e in eta.iter() {
        let rate = baseline_rate * e.exp();
        let t = Exp::new(rate)
            .map_err(|_| NprError::InvalidInput(format!("hazard {rate} is not a valid rate")))?
            .sample(rng);
        let c = censor.sample(rng);
        // guard against a zero draw underflowing the positivity check
        time.push(t.min(c).max(f64::MIN_POSITIVE));
        event.push(t <= c);
    }
    if !event.iter().any(|&e| e) {
        return Err(NprError::NoEvents);
    }
    SurvivalData::new(time, event)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_coefficients_give_log_risk_set_sizes() {
        let x = DMatrix::from_column_slice(5, 1, &[0.3, -1.0, 2.0, 0.1, 0.7]);
        let surv = SurvivalData::new(
            vec![5.0, 2.0, 2.0, 1.0, 4.0],
            vec![true, true, false, true, false],
        )
        .unwrap();
        let obj = CoxObjective::new(&x, &surv).unwrap();
        // risk sets: t=5 -> 1, t=2 -> 4 (tie included), t=1 -> 5
        let expected = -(1f64.ln() + 4f64.ln() + 5f64.ln());
        assert!((obj.value(&DVector::zeros(1)) - expected).abs() < 1e-14);
    }

    #[test]
    fn survival_data_validation() {
        assert!(matches!(
            SurvivalData::new(vec![1.0, 2.0], vec![false, false]),
            Err(NprError::NoEvents)
        ));
        assert!(SurvivalData::new(vec![0.0, 2.0], vec![true, false]).is_err());
        assert!(SurvivalData::new(vec![1.0], vec![true, false]).is_err());
    }

    #[test]
    fn vanishing_censoring_observes_every_event() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(500, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5);
        let lambda = DVector::from_vec(vec![0.5, -0.3]);
        let s = simulate_cox_data(&x, &lambda, 1.0, 1e-9, &mut rng).unwrap();
        assert!(s.event().iter().all(|&e| e));
    }

    #[test]
    fn relative_risk_is_one_at_zero() {
        let d =
            PropagatedDesign::from_blocks(&[DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0])]);
        let fit = CoxFit {
            tags: d.selected_tags(),
            lambda_hat: DVector::zeros(1),
            partial_loglik: 0.0,
            information: DMatrix::zeros(1, 1),
            std_errors: DVector::zeros(1),
            iterations: 0,
            converged: true,
            trace: vec![],
            n: 3,
            n_events: 1,
            max_order: 0,
        };
        assert!(relative_risk(&fit, &d).unwrap().iter().all(|&r| r == 1.0));
    }
}
