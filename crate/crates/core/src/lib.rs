//! Network propagation regression.
//!
//! Outcomes are regressed on covariates diffused through a network,
//! `Y = sum_k W^k X lambda_k + e`, where `W` is the row-normalized adjacency
//! matrix. The crate covers the Gaussian (least squares), binary (logistic) and
//! time-to-event (Cox) families, a Wald test for the propagation order with
//! Holm's correction, linear-in-means baselines and the simulation designs used
//! to benchmark them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cox;
pub mod design;
pub mod error;
pub mod gaussian;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod logistic;
pub mod newton;
pub mod sim;
pub mod testing;

pub use design::{center_response, ColumnTag, PropagatedDesign, DEFAULT_SELECTION_TOL};
pub use error::{NprError, Result};
pub use gaussian::{
    fit_ols, order_test, t_statistics, wald_statistic, GaussianFit, OrderTestOptions,
    OrderTestReport,
};
pub use graph::{propagate, row_normalize, DirectedGraph, RowStochasticOperator};
