//! The augmented design `(X, WX, ..., W^K X)`: construction, intercept-removing
//! centering and forward selection of linearly independent columns.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NprError, Result};
use crate::graph::{propagate, RowStochasticOperator};

/// Relative residual-norm threshold used by [`PropagatedDesign::forward_select`] by default.
pub const DEFAULT_SELECTION_TOL: f64 = 1e-8;

/// Origin of a design column: propagation order and 0-based covariate index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnTag {
    pub order: usize,
    pub covariate: usize,
}

impl ColumnTag {
    pub fn new(order: usize, covariate: usize) -> Self {
        Self { order, covariate }
    }
}

/// Formats as `k{order}_x{j}` with a 1-based covariate index, matching the
/// `x1..xd` covariate file header.
impl fmt::Display for ColumnTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}_x{}", self.order, self.covariate + 1)
    }
}

impl FromStr for ColumnTag {
    type Err = NprError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || NprError::InvalidInput(format!("malformed column name {s:?}"));
        let rest = s.strip_prefix('k').ok_or_else(bad)?;
        let (order, cov) = rest.split_once("_x").ok_or_else(bad)?;
        let order: usize = order.parse().map_err(|_| bad())?;
        let cov: usize = cov.parse().map_err(|_| bad())?;
        if cov == 0 {
            return Err(bad());
        }
        Ok(Self::new(order, cov - 1))
    }
}

/// Stacked propagated covariates with column provenance and selection state.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedDesign {
    matrix: DMatrix<f64>,
    n_covariates: usize,
    max_order: usize,
    provenance: Vec<ColumnTag>,
    selected: Option<Vec<usize>>,
    column_means: Option<Vec<f64>>,
}

impl PropagatedDesign {
    /// Propagates `x` through `w` up to order `k` and stacks the blocks.
    pub fn build(w: &RowStochasticOperator, x: &DMatrix<f64>, k: usize) -> Result<Self> {
        let blocks = propagate(w, x, k)?;
        Ok(Self::from_blocks(&blocks))
    }

    /// Stacks already propagated blocks `[X, WX, ...]`; all blocks must share a shape.
    pub fn from_blocks(blocks: &[DMatrix<f64>]) -> Self {
        assert!(!blocks.is_empty(), "at least the order-0 block is required");
        let (n, d) = blocks[0].shape();
        let mut matrix = DMatrix::zeros(n, d * blocks.len());
        let mut provenance = Vec::with_capacity(d * blocks.len());
        for (k, block) in blocks.iter().enumerate() {
            assert_eq!(block.shape(), (n, d), "block {k} has a different shape");
            matrix.columns_mut(k * d, d).copy_from(block);
            provenance.extend((0..d).map(|j| ColumnTag::new(k, j)));
        }
        Self {
            matrix,
            n_covariates: d,
            max_order: blocks.len() - 1,
            provenance,
            selected: None,
            column_means: None,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    /// Largest propagation order `K` present in the design.
    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Block `W^k X` (after centering, if applied).
    pub fn block(&self, k: usize) -> DMatrix<f64> {
        self.matrix
            .columns(k * self.n_covariates, self.n_covariates)
            .into_owned()
    }

    pub fn provenance(&self) -> &[ColumnTag] {
        &self.provenance
    }

    pub fn selected(&self) -> Option<&[usize]> {
        self.selected.as_deref()
    }

    pub fn is_centered(&self) -> bool {
        self.column_means.is_some()
    }

    /// Means removed by centering, one per column of the full design.
    pub fn column_means(&self) -> Option<&[f64]> {
        self.column_means.as_deref()
    }

    /// Indices of the active columns: the selection, or every column before selection.
    pub fn active_columns(&self) -> Vec<usize> {
        match &self.selected {
            Some(s) => s.clone(),
            None => (0..self.n_columns()).collect(),
        }
    }

    pub fn selected_tags(&self) -> Vec<ColumnTag> {
        self.active_columns()
            .into_iter()
            .map(|c| self.provenance[c])
            .collect()
    }

    /// Dense submatrix of the active columns.
    pub fn selected_matrix(&self) -> DMatrix<f64> {
        self.matrix.select_columns(self.active_columns().iter())
    }

    /// Columns matching `tags`, in the order given.
    pub fn columns_for(&self, tags: &[ColumnTag]) -> Result<DMatrix<f64>> {
        let idx = tags
            .iter()
            .map(|t| {
                self.provenance
                    .iter()
                    .position(|p| p == t)
                    .ok_or_else(|| NprError::ProvenanceMismatch(t.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.matrix.select_columns(idx.iter()))
    }

    /// Subtracts every column mean, i.e. applies `I - 11^T/N`.
    pub fn center(self) -> Self {
        let n = self.n_rows().max(1) as f64;
        let means: Vec<f64> = self.matrix.column_iter().map(|c| c.sum() / n).collect();
        self.shift_columns(&means)
    }

    /// Subtracts externally supplied means, e.g. training means applied to test rows.
    pub fn center_with(self, means: &[f64]) -> Result<Self> {
        if means.len() != self.n_columns() {
            return Err(NprError::DimensionMismatch(format!(
                "{} means for {} columns",
                means.len(),
                self.n_columns()
            )));
        }
        Ok(self.shift_columns(means))
    }

    fn shift_columns(mut self, means: &[f64]) -> Self {
        for (mut col, &m) in self.matrix.column_iter_mut().zip(means) {
            col.add_scalar_mut(-m);
        }
        let total = match self.column_means.take() {
            Some(prev) => prev.iter().zip(means).map(|(a, b)| a + b).collect(),
            None => means.to_vec(),
        };
        self.column_means = Some(total);
        self
    }

    /// Restricts to the given rows, keeping provenance, selection and centering offsets.
    pub fn rows(&self, rows: &[usize]) -> Self {
        Self {
            matrix: self.matrix.select_rows(rows.iter()),
            n_covariates: self.n_covariates,
            max_order: self.max_order,
            provenance: self.provenance.clone(),
            selected: self.selected.clone(),
            column_means: self.column_means.clone(),
        }
    }

    /// Imposes a selection computed elsewhere (for instance on training rows).
    pub fn with_selection(mut self, selected: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = selected.iter().find(|&&c| c >= self.n_columns()) {
            return Err(NprError::DimensionMismatch(format!(
                "selected column {bad} out of range for {} columns",
                self.n_columns()
            )));
        }
        self.selected = Some(selected);
        Ok(self)
    }

    /// Greedy Gram–Schmidt screening in block order `k = 0..K`, covariates
    /// ascending within a block. A column is admitted when its residual after
    /// projection onto the admitted columns has norm above `tol` times its own norm.
    pub fn forward_select(self, tol: f64) -> Result<Self> {
        self.screen(tol, Vec::new())
    }

    /// Forward selection with the all-ones intercept admitted first, so that
    /// columns collinear with the intercept are dropped. Used by the families
    /// that estimate an explicit intercept on an uncentered design.
    pub fn forward_select_with_intercept(self, tol: f64) -> Result<Self> {
        let n = self.n_rows();
        let ones = vec![1.0 / (n.max(1) as f64).sqrt(); n];
        self.screen(tol, vec![ones])
    }

    fn screen(mut self, tol: f64, mut basis: Vec<Vec<f64>>) -> Result<Self> {
        let n = self.n_rows();
        let mut admitted = Vec::new();
        for c in 0..self.n_columns() {
            let col = self.matrix.column(c);
            let norm = col.norm();
            if !(norm > 0.0) || !norm.is_finite() {
                continue;
            }
            let mut r: Vec<f64> = col.iter().copied().collect();
            // two passes of modified Gram–Schmidt keep the basis orthogonal to working precision
            for _ in 0..2 {
                for q in &basis {
                    let dot: f64 = q.iter().zip(&r).map(|(a, b)| a * b).sum();
                    r.iter_mut().zip(q).for_each(|(ri, qi)| *ri -= dot * qi);
                }
            }
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm > tol * norm && basis.len() < n {
                r.iter_mut().for_each(|v| *v /= rnorm);
                basis.push(r);
                admitted.push(c);
            }
        }
        if admitted.is_empty() {
            return Err(NprError::DegenerateDesign);
        }
        self.selected = Some(admitted);
        Ok(self)
    }

    /// Writes the full design as CSV with `k{order}_x{j}` headers.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(self.provenance.iter().map(|t| t.to_string()))?;
        for i in 0..self.n_rows() {
            wtr.write_record(self.matrix.row(i).iter().map(|v| format!("{v:e}")))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Subtracts the mean from a response vector.
pub fn center_response(y: &DVector<f64>) -> DVector<f64> {
    if y.is_empty() {
        return y.clone();
    }
    let mean = y.mean();
    y.add_scalar(-mean)
}
