//! Linear-in-means (LIM) data generators and two-stage least squares fits,
//! plus the propagation and cohesion generators used in the simulation study.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NprError, Result};
use crate::graph::{propagate, RowStochasticOperator};
use crate::linalg::lstsq_qr;

pub const NEUMANN_TOL: f64 = 1e-10;
pub const NEUMANN_MAX_TERMS: usize = 10_000;

/// `Y = alpha 1 + rho W Y + X beta + W X delta + e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimParams {
    pub rho: f64,
    pub beta: DVector<f64>,
    pub delta: DVector<f64>,
    pub alpha: f64,
}

/// `Y = alpha 1 + rho1 W Y + rho2 W^2 Y + X g1 + W X g2 + W^2 X g3 + e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lim2Params {
    pub rho1: f64,
    pub rho2: f64,
    pub gamma1: DVector<f64>,
    pub gamma2: DVector<f64>,
    pub gamma3: DVector<f64>,
    pub alpha: f64,
}

impl LimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(NprError::InvalidConfig(format!(
                "spillover {} must satisfy |rho| < 1",
                self.rho
            )));
        }
        if self.beta.len() != self.delta.len() {
            return Err(NprError::DimensionMismatch(
                "beta and delta lengths differ".into(),
            ));
        }
        Ok(())
    }

    pub fn as_second_order(&self) -> Lim2Params {
        Lim2Params {
            rho1: self.rho,
            rho2: 0.0,
            gamma1: self.beta.clone(),
            gamma2: self.delta.clone(),
            gamma3: DVector::zeros(self.beta.len()),
            alpha: self.alpha,
        }
    }
}

impl Lim2Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho1.abs() + self.rho2.abs() < 1.0) {
            return Err(NprError::InvalidConfig(format!(
                "spillovers ({}, {}) must satisfy |rho1| + |rho2| < 1",
                self.rho1, self.rho2
            )));
        }
        let d = self.gamma1.len();
        if self.gamma2.len() != d || self.gamma3.len() != d {
            return Err(NprError::DimensionMismatch("gamma lengths differ".into()));
        }
        Ok(())
    }
}

fn check_rows(w: &RowStochasticOperator, x: &DMatrix<f64>, width: usize) -> Result<()> {
    if x.nrows() != w.n_nodes() {
        return Err(NprError::DimensionMismatch(format!(
            "covariates have {} rows for {} nodes",
            x.nrows(),
            w.n_nodes()
        )));
    }
    if x.ncols() != width {
        return Err(NprError::DimensionMismatch(format!(
            "covariates have {} columns, coefficients have {width}",
            x.ncols()
        )));
    }
    Ok(())
}

/// Solves `(I - rho1 W - rho2 W^2) y = rhs` by fixed-point iteration
/// `y <- rhs + (rho1 W + rho2 W^2) y`, stopping once the residual max-norm falls
/// below [`NEUMANN_TOL`].
pub fn neumann_solve(
    w: &RowStochasticOperator,
    rho1: f64,
    rho2: f64,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut y = rhs.clone();
    for _ in 0..NEUMANN_MAX_TERMS {
        let wy = w.apply_vec(&y)?;
        let mut next = rhs + &wy * rho1;
        if rho2 != 0.0 {
            next.axpy(rho2, &w.apply_vec(&wy)?, 1.0);
        }
        // (I - A) y - rhs = y - next
        let resid = (&y - &next).amax();
        y = next;
        if resid < NEUMANN_TOL {
            return Ok(y);
        }
    }
    Err(NprError::NonConvergence(NEUMANN_MAX_TERMS))
}

fn noise<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> Result<DVector<f64>> {
    if sigma == 0.0 {
        return Ok(DVector::zeros(n));
    }
    let dist = Normal::new(0.0, sigma)
        .map_err(|_| NprError::InvalidInput(format!("invalid noise scale {sigma}")))?;
    Ok(DVector::from_fn(n, |_, _| dist.sample(rng)))
}

/// Structural right-hand side `alpha 1 + X beta + W X delta`.
pub fn lim_index(
    w: &RowStochasticOperator,
    x: &DMatrix<f64>,
    p: &LimParams,
) -> Result<DVector<f64>> {
    if p.beta.len() != p.delta.len() {
        return Err(NprError::DimensionMismatch(
            "beta and delta lengths differ".into(),
        ));
    }
    check_rows(w, x, p.beta.len())?;
    let wx = w.apply(x)?;
    Ok(x * &p.beta + wx * &p.delta + DVector::from_element(x.nrows(), p.alpha))
}

pub fn lim2_index(
    w: &RowStochasticOperator,
    x: &DMatrix<f64>,
    p: &Lim2Params,
) -> Result<DVector<f64>> {
    if p.gamma2.len() != p.gamma1.len() || p.gamma3.len() != p.gamma1.len() {
        return Err(NprError::DimensionMismatch("gamma lengths differ".into()));
    }
    check_rows(w, x, p.gamma1.len())?;
    let wx = w.apply(x)?;
    let w2x = w.apply(&wx)?;
    Ok(
        x * &p.gamma1
            + wx * &p.gamma2
            + w2x * &p.gamma3
            + DVector::from_element(x.nrows(), p.alpha),
    )
}

/// Reduced-form mean `(I - rho W)^{-1}(alpha 1 + X beta + W X delta)`.
pub fn lim_mean(
    w: &RowStochasticOperator,
    x: &DMatrix<f64>,
    p: &LimParams,
) -> Result<DVector<f64>> {
    p.validate()?;
    neumann_solve(w, p.rho, 0.0, &lim_index(w, x, p)?)
}

pub fn lim2_mean(
    w: &RowStochasticOperator,
    x: &DMatrix<f64>,
    p: &Lim2Params,
) -> Result<DVector<f64>> {
    p.validate()?;
    neumann_solve(w, p.rho1, p.rho2, &lim2_index(w, x, p)?)
}

/// Draws `Y` from the linear-in-means model with `N(0, sigma^2)` errors.
pub fn gen_lim<R: Rng + ?Sized>(
    w: &RowStochasticOperator,
    x: &DMatrix<f64>,
    p: &LimParams,
    sigma: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    p.validate()?;
    let rhs = lim_index(w, x, p)? + noise(x.nrows(), sigma, rng)?;
    neumann_solve(w, p.rho, 0.0, &rhs)
}

pub fn gen_lim2<R: Rng + ?Sized>(
    w: &RowStochasticOperator,
    x: &DMatrix<f64>,
    p: &Lim2Params,
    sigma: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    p.validate()?;
    let rhs = lim2_index(w, x, p)? + noise(x.nrows(), sigma, rng)?;
    neumann_solve(w, p.rho1, p.rho2, &rhs)
}

/// Structural fitted values `alpha + rho W y + X beta + W X delta` given the observed `y`.
pub fn lim_structural(
    w: &RowStochasticOperator,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    p: &LimParams,
) -> Result<DVector<f64>> {
    Ok(lim_index(w, x, p)? + w.apply_vec(y)? * p.rho)
}

pub fn lim2_structural(
    w: &RowStochasticOperator,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    p: &Lim2Params,
) -> Result<DVector<f64>> {
    let wy = w.apply_vec(y)?;
    let w2y = w.apply_vec(&wy)?;
    Ok(lim2_index(w, x, p)? + wy * p.rho1 + w2y * p.rho2)
}

/// Propagation coefficient `lambda_k` implied by the reduced form:
/// `beta` at `k = 0`, `rho^{k-1}(rho beta + delta)` afterwards.
pub fn lambda_series_lim(p: &LimParams, k: usize) -> DVector<f64> {
    if k == 0 {
        return p.beta.clone();
    }
    (&p.beta * p.rho + &p.delta) * p.rho.powi(k as i32 - 1)
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Coefficient of `W^k` in `(I - rho1 W - rho2 W^2)^{-1}`:
/// `sum_{h=ceil(k/2)}^{k} C(h, k-h) rho1^{2h-k} rho2^{k-h}`.
pub fn second_order_weight(rho1: f64, rho2: f64, k: usize) -> f64 {
    (k.div_ceil(2)..=k)
        .map(|h| binomial(h, k - h) * rho1.powi((2 * h - k) as i32) * rho2.powi((k - h) as i32))
        .sum()
}

/// `lambda_k = c_k g1 + c_{k-1} g2 + c_{k-2} g3` with `c` from [`second_order_weight`].
pub fn lambda_series_lim2(p: &Lim2Params, k: usize) -> DVector<f64> {
    let c = |j: usize| second_order_weight(p.rho1, p.rho2, j);
    let mut out = &p.gamma1 * c(k);
    if k >= 1 {
        out.axpy(c(k - 1), &p.gamma2, 1.0);
    }
    if k >= 2 {
        out.axpy(c(k - 2), &p.gamma3, 1.0);
    }
    out
}

/// Propagation-model mean `sum_k W^k X lambda_k`.
pub fn npr_mean(
    w: &RowStochasticOperator,
    x: &DMatrix<f64>,
    lambdas: &[DVector<f64>],
) -> Result<DVector<f64>> {
    if lambdas.is_empty() {
        return Ok(DVector::zeros(x.nrows()));
    }
    for l in lambdas {
        check_rows(w, x, l.len())?;
    }
    let blocks = propagate(w, x, lambdas.len() - 1)?;
    Ok(blocks
        .iter()
        .zip(lambdas)
        .fold(DVector::zeros(x.nrows()), |acc, (b, l)| acc + b * l))
}

pub fn gen_npr<R: Rng + ?Sized>(
    w: &RowStochasticOperator,
    x: &DMatrix<f64>,
    lambdas: &[DVector<f64>],
    sigma: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    Ok(npr_mean(w, x, lambdas)? + noise(x.nrows(), sigma, rng)?)
}

/// Cohesion data `Y = mu + X beta + e` with `mu_i ~ N(eta_{c_i}, mu_var)`.
/// Returns the response together with the drawn node effects.
pub fn gen_cohesion<R: Rng + ?Sized>(
    labels: &[u8],
    x: &DMatrix<f64>,
    etas: [f64; 3],
    mu_var: f64,
    beta: &DVector<f64>,
    sigma: f64,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if labels.len() != x.nrows() || beta.len() != x.ncols() {
        return Err(NprError::DimensionMismatch(
            "labels, covariates and beta disagree".into(),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&c| !(1..=3).contains(&c)) {
        return Err(NprError::InvalidInput(format!(
            "block label {bad} outside 1..=3"
        )));
    }
    if !(mu_var >= 0.0) {
        return Err(NprError::InvalidInput(
            "node-effect variance must be non-negative".into(),
        ));
    }
    let spread = noise(labels.len(), mu_var.sqrt(), rng)?;
    let mu = DVector::from_fn(labels.len(), |i, _| {
        etas[labels[i] as usize - 1] + spread[i]
    });
    let y = &mu + x * beta + noise(labels.len(), sigma, rng)?;
    Ok((y, mu))
}

/// Two-stage least squares of `y` on `[exog, endog]` with instruments
/// `[exog, excluded]`. Returns the coefficients in regressor order.
pub fn two_stage_least_squares(
    exog: &DMatrix<f64>,
    endog: &DMatrix<f64>,
    excluded: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = y.len();
    if exog.nrows() != n || endog.nrows() != n || excluded.nrows() != n {
        return Err(NprError::DimensionMismatch(
            "2SLS blocks have different row counts".into(),
        ));
    }
    let instruments = hcat(&[exog, excluded]);
    if instruments.ncols() < exog.ncols() + endog.ncols() {
        return Err(NprError::InvalidInput("model is under-identified".into()));
    }
    let mut projected = DMatrix::zeros(n, endog.ncols());
    for c in 0..endog.ncols() {
        let target = endog.column(c).into_owned();
        let (pi, _) = lstsq_qr(&instruments, &target)?;
        projected.set_column(c, &(&instruments * pi));
    }
    let (theta, _) = lstsq_qr(&hcat(&[exog, &projected]), y)?;
    Ok(theta)
}

fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks[0].nrows();
    let p = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, p);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    out
}

/// Per-node quantities needed by the LIM fits, computed once on the full graph
/// so that fits on a subset of rows keep their network neighbourhoods.
#[derive(Debug, Clone)]
pub struct LimData {
    /// `[X, WX, W^2X, W^3X, W^4X]`.
    pub x_powers: Vec<DMatrix<f64>>,
    pub wy: DVector<f64>,
    pub w2y: DVector<f64>,
    pub y: DVector<f64>,
}

impl LimData {
    pub fn new(w: &RowStochasticOperator, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        if y.len() != w.n_nodes() {
            return Err(NprError::DimensionMismatch(
                "response length differs from node count".into(),
            ));
        }
        let x_powers = propagate(w, x, 4)?;
        let wy = w.apply_vec(y)?;
        let w2y = w.apply_vec(&wy)?;
        Ok(Self {
            x_powers,
            wy,
            w2y,
            y: y.clone(),
        })
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn pick_m(&self, m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
        m.select_rows(rows.iter())
    }

    fn pick_v(&self, v: &DVector<f64>, rows: &[usize]) -> DMatrix<f64> {
        DMatrix::from_iterator(rows.len(), 1, rows.iter().map(|&i| v[i]))
    }
}

/// Spatial 2SLS for the first-order model: endogenous `WY`, instruments
/// `[1, X, WX, W^2X]`, fitted on `rows` (all rows when `None`).
pub fn fit_lim_2sls(data: &LimData, rows: Option<&[usize]>) -> Result<LimParams> {
    let all: Vec<usize>;
    let rows = match rows {
        Some(r) => r,
        None => {
            all = (0..data.n()).collect();
            &all
        }
    };
    let d = data.x_powers[0].ncols();
    let ones = DMatrix::from_element(rows.len(), 1, 1.0);
    let x = data.pick_m(&data.x_powers[0], rows);
    let wx = data.pick_m(&data.x_powers[1], rows);
    let exog = hcat(&[&ones, &x, &wx]);
    let endog = data.pick_v(&data.wy, rows);
    let excluded = data.pick_m(&data.x_powers[2], rows);
    let y = data.y.select_rows(rows.iter());
    let t = two_stage_least_squares(&exog, &endog, &excluded, &y)?;
    Ok(LimParams {
        alpha: t[0],
        beta: t.rows(1, d).into_owned(),
        delta: t.rows(1 + d, d).into_owned(),
        rho: t[1 + 2 * d],
    })
}

/// Spatial 2SLS for the second-order model: endogenous `[WY, W^2Y]`,
/// instruments `[1, X, ..., W^4X]`.
pub fn fit_lim2_2sls(data: &LimData, rows: Option<&[usize]>) -> Result<Lim2Params> {
    let all: Vec<usize>;
    let rows = match rows {
        Some(r) => r,
        None => {
            all = (0..data.n()).collect();
            &all
        }
    };
    let d = data.x_powers[0].ncols();
    let ones = DMatrix::from_element(rows.len(), 1, 1.0);
    let xs: Vec<DMatrix<f64>> = data.x_powers.iter().map(|m| data.pick_m(m, rows)).collect();
    let exog = hcat(&[&ones, &xs[0], &xs[1], &xs[2]]);
    let endog = hcat(&[&data.pick_v(&data.wy, rows), &data.pick_v(&data.w2y, rows)]);
    let excluded = hcat(&[&xs[3], &xs[4]]);
    let y = data.y.select_rows(rows.iter());
    let t = two_stage_least_squares(&exog, &endog, &excluded, &y)?;
    Ok(Lim2Params {
        alpha: t[0],
        gamma1: t.rows(1, d).into_owned(),
        gamma2: t.rows(1 + d, d).into_owned(),
        gamma3: t.rows(1 + 2 * d, d).into_owned(),
        rho1: t[1 + 3 * d],
        rho2: t[2 + 3 * d],
    })
}
