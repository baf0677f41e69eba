//! Damped Newton–Raphson maximization shared by the logistic and Cox fits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NprError, Result};
use crate::linalg::solve_spd_with_jitter;

/// Value, gradient and observed information (negative Hessian) of a concave objective.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub information: DMatrix<f64>,
}

pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, theta: &DVector<f64>) -> f64;
    fn evaluate(&self, theta: &DVector<f64>) -> Evaluation;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Convergence threshold on the max-norm of the accepted update.
    pub tol: f64,
    /// Coefficients beyond this max-norm (logit scale) signal separation.
    pub separation_bound: f64,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
            separation_bound: 30.0,
            max_halvings: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub theta: DVector<f64>,
    pub evaluation: Evaluation,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at the start and after every accepted step.
    pub trace: Vec<f64>,
}

/// Maximizes `objective` from `start`. Each Newton step is halved until the
/// objective does not decrease; iteration stops once the accepted update has
/// max-norm below `tol`.
pub fn maximize<O: Objective>(
    objective: &O,
    start: DVector<f64>,
    opts: &NewtonOptions,
) -> Result<NewtonOutcome> {
    let mut theta = start;
    let mut eval = objective.evaluate(&theta);
    if !eval.value.is_finite() {
        return Err(NprError::InvalidInput(
            "objective is not finite at the start".into(),
        ));
    }
    let mut trace = vec![eval.value];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let step = solve_spd_with_jitter(&eval.information, &eval.gradient)?;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand = &theta + &step * scale;
            let v = objective.value(&cand);
            if v.is_finite() && v >= eval.value {
                accepted = Some(cand);
                break;
            }
            scale *= 0.5;
        }
        let Some(next) = accepted else {
            // no ascent left at working precision
            converged = step.amax() < opts.tol.sqrt();
            break;
        };
        let moved = (step * scale).amax();
        theta = next;
        eval = objective.evaluate(&theta);
        trace.push(eval.value);
        if moved < opts.tol {
            converged = true;
            break;
        }
        let max_abs = theta.amax();
        if max_abs > opts.separation_bound && eval.gradient.amax() > 0.0 {
            return Err(NprError::Separation {
                iteration: iterations,
                max_abs,
                bound: opts.separation_bound,
            });
        }
    }
    Ok(NewtonOutcome {
        theta,
        evaluation: eval,
        iterations,
        converged,
        trace,
    })
}
