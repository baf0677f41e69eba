//! Monte-Carlo scenario runner: prediction studies comparing the propagation
//! model with its competitors (ratios `kappa_1..kappa_4`) and the order-testing
//! study (EP, ES, MP, FWER, CP).

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    fit_lim2_2sls, fit_lim_2sls, gen_cohesion, gen_lim, gen_lim2, gen_npr, lim2_mean,
    lim2_structural, lim_mean, lim_structural, npr_mean, Lim2Params, LimData, LimParams,
};
use crate::design::{PropagatedDesign, DEFAULT_SELECTION_TOL};
use crate::error::{NprError, Result};
use crate::gaussian::{fit_ols, order_test, t_statistics, GaussianFit, OrderTestOptions};
use crate::graph::{
    gen_erdos_renyi, gen_powerlaw, gen_sbm, row_normalize, DirectedGraph, RowStochasticOperator,
};
use crate::logistic::train_count;

/// Network generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    ErdosRenyi,
    BlockModel,
    PowerLaw,
}

impl Case {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Case::ErdosRenyi),
            2 => Ok(Case::BlockModel),
            3 => Ok(Case::PowerLaw),
            _ => Err(NprError::InvalidConfig(format!(
                "case must be 1, 2 or 3, got {i}"
            ))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Case::ErdosRenyi => 1,
            Case::BlockModel => 2,
            Case::PowerLaw => 3,
        }
    }
}

/// Response-generating mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    LinearInMeans,
    SecondOrder,
    Propagation,
    Cohesion,
}

impl Setting {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Setting::LinearInMeans),
            2 => Ok(Setting::SecondOrder),
            3 => Ok(Setting::Propagation),
            4 => Ok(Setting::Cohesion),
            _ => Err(NprError::InvalidConfig(format!(
                "setting must be 1 to 4, got {i}"
            ))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Setting::LinearInMeans => 1,
            Setting::SecondOrder => 2,
            Setting::Propagation => 3,
            Setting::Cohesion => 4,
        }
    }

    pub fn default_competitor(self) -> Competitor {
        match self {
            Setting::LinearInMeans | Setting::Propagation => Competitor::Lim,
            Setting::SecondOrder => Competitor::Lim2,
            Setting::Cohesion => Competitor::Oracle,
        }
    }
}

/// Model whose errors form the denominators of `kappa_2..kappa_4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Competitor {
    /// First-order linear-in-means, 2SLS.
    Lim,
    /// Second-order linear-in-means, 2SLS.
    Lim2,
    /// True data-generating mean.
    Oracle,
    /// The propagation model itself; every ratio equals one.
    Npr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub case: Case,
    pub setting: Setting,
    pub n: usize,
    pub d: usize,
    pub k_fit: usize,
    pub reps: usize,
    pub seed: u64,
    pub train_frac: f64,
    pub sigma: f64,
    pub selection_tol: f64,
    pub competitor: Competitor,
}

impl ScenarioConfig {
    pub fn new(case: u8, setting: u8, n: usize, reps: usize, seed: u64) -> Result<Self> {
        let setting = Setting::from_index(setting)?;
        let cfg = Self {
            case: Case::from_index(case)?,
            setting,
            n,
            d: 10,
            k_fit: 8,
            reps,
            seed,
            train_frac: 0.8,
            sigma: 1.0,
            selection_tol: DEFAULT_SELECTION_TOL,
            competitor: setting.default_competitor(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.setting == Setting::Cohesion && self.case != Case::BlockModel {
            return Err(NprError::InvalidConfig(
                "setting 4 is defined on the block-model networks of case 2 only".into(),
            ));
        }
        if self.reps == 0 {
            return Err(NprError::InvalidConfig(
                "at least one replicate is required".into(),
            ));
        }
        if self.d == 0 {
            return Err(NprError::InvalidConfig(
                "covariate dimension must be positive".into(),
            ));
        }
        if !(self.sigma >= 0.0) {
            return Err(NprError::InvalidConfig(
                "noise scale must be non-negative".into(),
            ));
        }
        let n_test = self.n - train_count(self.n, self.train_frac)?;
        if n_test < 2 {
            return Err(NprError::InvalidConfig(
                "the test split needs at least two nodes".into(),
            ));
        }
        Ok(())
    }

    pub fn n_test(&self) -> usize {
        self.n - train_count(self.n, self.train_frac).unwrap_or(self.n)
    }
}

/// Generator for replicate `rep`: the master seed with stream index `rep`.
pub fn replicate_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Covariate covariance: AR(1) with correlation 0.5 for cases 1 and 2;
/// for case 3, 0.5 among the first `d - 1` covariates and `sqrt(0.5)` with the last.
pub fn covariate_covariance(case: Case, d: usize) -> DMatrix<f64> {
    match case {
        Case::ErdosRenyi | Case::BlockModel => {
            DMatrix::from_fn(d, d, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()))
        }
        Case::PowerLaw => DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                1.0
            } else if i == d - 1 || j == d - 1 {
                0.5f64.sqrt()
            } else {
                0.5
            }
        }),
    }
}

/// `n` rows drawn from `N(0, Sigma)`.
pub fn gen_covariates<R: Rng + ?Sized>(
    case: Case,
    n: usize,
    d: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let chol = covariate_covariance(case, d).cholesky().ok_or_else(|| {
        NprError::InvalidConfig("covariate covariance is not positive definite".into())
    })?;
    let l = chol.l();
    let z = DMatrix::from_fn(n, d, |_, _| -> f64 { StandardNormal.sample(rng) });
    Ok(z * l.transpose())
}

/// Network for `case`, with block labels for the block model.
pub fn gen_network<R: Rng + ?Sized>(
    case: Case,
    n: usize,
    rng: &mut R,
) -> Result<(DirectedGraph, Option<Vec<u8>>)> {
    Ok(match case {
        Case::ErdosRenyi => (gen_erdos_renyi(n, rng)?, None),
        Case::BlockModel => {
            let (g, labels) = gen_sbm(n, rng)?;
            (g, Some(labels))
        }
        Case::PowerLaw => (gen_powerlaw(n, rng)?, None),
    })
}

/// How test nodes relate to the training network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Test rows are nodes of the training network.
    Linked,
    /// Test nodes form a freshly generated network.
    Isolated,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<usize>,
    /// Test rows of the training network (linked) or of the new network (isolated).
    pub test: Vec<usize>,
    /// Present in isolated mode.
    pub test_graph: Option<DirectedGraph>,
    pub test_labels: Option<Vec<u8>>,
}

/// Random row split of `graph` at `frac`. In isolated mode the test rows are
/// drawn, in the same number, from a new network of the same size generated
/// by `case`, so test nodes share no edges with the training nodes.
pub fn split_scenarios<R: Rng + ?Sized>(
    graph: &DirectedGraph,
    case: Case,
    frac: f64,
    mode: SplitMode,
    rng: &mut R,
) -> Result<Split> {
    let n = graph.n_nodes();
    let n_train = train_count(n, frac)?;
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(rng);
    let (train, test) = rows.split_at(n_train);
    let mut train = train.to_vec();
    train.sort_unstable();
    let mut test = test.to_vec();
    match mode {
        SplitMode::Linked => {
            test.sort_unstable();
            Ok(Split {
                train,
                test,
                test_graph: None,
                test_labels: None,
            })
        }
        SplitMode::Isolated => {
            let (g, labels) = gen_network(case, n, rng)?;
            let mut nodes: Vec<usize> = (0..n).collect();
            nodes.shuffle(rng);
            test = nodes[..n - n_train].to_vec();
            test.sort_unstable();
            Ok(Split {
                train,
                test,
                test_graph: Some(g),
                test_labels: labels,
            })
        }
    }
}

/// Ground truth drawn for one replicate.
#[derive(Debug, Clone)]
enum Truth {
    Lim(LimParams),
    Lim2(Lim2Params),
    Npr(Vec<DVector<f64>>),
    Cohesion { beta: DVector<f64>, etas: [f64; 3] },
}

fn draw_truth<R: Rng + ?Sized>(setting: Setting, d: usize, rng: &mut R) -> Truth {
    let unif = |lo: f64, hi: f64, rng: &mut R| {
        let u = Uniform::new(lo, hi).expect("valid bounds");
        DVector::from_fn(d, |_, _| u.sample(rng))
    };
    match setting {
        Setting::LinearInMeans => {
            let beta = unif(0.5, 5.0, rng);
            let delta = unif(0.5, 5.0, rng);
            Truth::Lim(LimParams {
                rho: 0.25,
                beta,
                delta,
                alpha: 0.0,
            })
        }
        Setting::SecondOrder => {
            let gamma1 = unif(0.5, 5.0, rng);
            let gamma2 = unif(0.5, 5.0, rng);
            let gamma3 = unif(0.5, 5.0, rng);
            Truth::Lim2(Lim2Params {
                rho1: 0.25,
                rho2: 0.05,
                gamma1,
                gamma2,
                gamma3,
                alpha: 0.0,
            })
        }
        Setting::Propagation => Truth::Npr((0..=5).map(|_| unif(0.0, 5.0, rng)).collect()),
        Setting::Cohesion => {
            let normal = Normal::new(1.0, 1.0).expect("valid");
            Truth::Cohesion {
                beta: DVector::from_fn(d, |_, _| normal.sample(rng)),
                etas: [-2.5, 0.0, 2.5],
            }
        }
    }
}

/// Response and noiseless structural mean on one network.
struct Sample {
    y: DVector<f64>,
    /// `y - e`: the structural prediction with the true parameters.
    oracle: DVector<f64>,
}

fn gen_response<R: Rng + ?Sized>(
    truth: &Truth,
    w: &RowStochasticOperator,
    x: &DMatrix<f64>,
    labels: Option<&[u8]>,
    sigma: f64,
    rng: &mut R,
) -> Result<Sample> {
    Ok(match truth {
        Truth::Lim(p) => {
            let y = gen_lim(w, x, p, sigma, rng)?;
            let oracle = lim_structural(w, x, &y, p)?;
            Sample { y, oracle }
        }
        Truth::Lim2(p) => {
            let y = gen_lim2(w, x, p, sigma, rng)?;
            let oracle = lim2_structural(w, x, &y, p)?;
            Sample { y, oracle }
        }
        Truth::Npr(lambdas) => {
            let mean = npr_mean(w, x, lambdas)?;
            let y = &mean + gen_npr(w, x, &[], sigma, rng)?;
            Sample { y, oracle: mean }
        }
        Truth::Cohesion { beta, etas } => {
            let labels = labels
                .ok_or_else(|| NprError::InvalidConfig("cohesion data need block labels".into()))?;
            let (y, mu) = gen_cohesion(labels, x, *etas, 0.25, beta, sigma, rng)?;
            Sample {
                oracle: mu + x * beta,
                y,
            }
        }
    })
}

fn rmse(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    ((a - b).norm_squared() / a.len() as f64).sqrt()
}

fn pick(v: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    v.select_rows(rows.iter())
}

/// Errors of one method in the four evaluation scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioErrors {
    pub oracle: f64,
    pub in_sample: f64,
    pub linked: f64,
    pub isolated: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub rep: usize,
    pub npr: ScenarioErrors,
    pub competitor: ScenarioErrors,
    pub kappa: [f64; 4],
    pub selected_columns: usize,
}

/// Predictions of one method: in-sample on every node, on the linked test rows
/// from a fit to the training rows, and on the isolated network.
struct Predictions {
    in_sample: DVector<f64>,
    linked: DVector<f64>,
    isolated: DVector<f64>,
}

/// Everything one replicate observes.
struct Replicate<'a> {
    w: &'a RowStochasticOperator,
    x: &'a DMatrix<f64>,
    sample: &'a Sample,
    train: &'a [usize],
    test: &'a [usize],
    iso_rows: &'a [usize],
    w_iso: &'a RowStochasticOperator,
    x_iso: &'a DMatrix<f64>,
    iso: &'a Sample,
}

fn competitor_predictions(
    cfg: &ScenarioConfig,
    r: &Replicate<'_>,
    npr: &Predictions,
) -> Result<Predictions> {
    let data = LimData::new(r.w, r.x, &r.sample.y)?;
    Ok(match cfg.competitor {
        Competitor::Lim => {
            let full = fit_lim_2sls(&data, None)?;
            let train = fit_lim_2sls(&data, Some(r.train))?;
            Predictions {
                in_sample: lim_structural(r.w, r.x, &r.sample.y, &full)?,
                linked: pick(
                    &reduced_or_structural_lim(r.w, r.x, &r.sample.y, &train)?,
                    r.test,
                ),
                isolated: pick(
                    &reduced_or_structural_lim(r.w_iso, r.x_iso, &r.iso.y, &full)?,
                    r.iso_rows,
                ),
            }
        }
        Competitor::Lim2 => {
            let full = fit_lim2_2sls(&data, None)?;
            let train = fit_lim2_2sls(&data, Some(r.train))?;
            Predictions {
                in_sample: lim2_structural(r.w, r.x, &r.sample.y, &full)?,
                linked: pick(
                    &reduced_or_structural_lim2(r.w, r.x, &r.sample.y, &train)?,
                    r.test,
                ),
                isolated: pick(
                    &reduced_or_structural_lim2(r.w_iso, r.x_iso, &r.iso.y, &full)?,
                    r.iso_rows,
                ),
            }
        }
        Competitor::Oracle => Predictions {
            in_sample: r.sample.oracle.clone(),
            linked: pick(&r.sample.oracle, r.test),
            isolated: pick(&r.iso.oracle, r.iso_rows),
        },
        Competitor::Npr => Predictions {
            in_sample: npr.in_sample.clone(),
            linked: npr.linked.clone(),
            isolated: npr.isolated.clone(),
        },
    })
}

/// Out-of-sample LIM prediction: the reduced-form mean when the fitted
/// spillover is stable, otherwise the structural predictor.
fn reduced_or_structural_lim(
    w: &RowStochasticOperator,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    p: &LimParams,
) -> Result<DVector<f64>> {
    if p.rho.abs() < 1.0 {
        lim_mean(w, x, p)
    } else {
        lim_structural(w, x, y, p)
    }
}

fn reduced_or_structural_lim2(
    w: &RowStochasticOperator,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    p: &Lim2Params,
) -> Result<DVector<f64>> {
    if p.rho1.abs() + p.rho2.abs() < 1.0 {
        lim2_mean(w, x, p)
    } else {
        lim2_structural(w, x, y, p)
    }
}

fn fit_rows(
    cfg: &ScenarioConfig,
    raw: &PropagatedDesign,
    y: &DVector<f64>,
    rows: &[usize],
) -> Result<GaussianFit> {
    let design = raw.rows(rows).center().forward_select(cfg.selection_tol)?;
    fit_ols(&design, &pick(y, rows))
}

/// One replicate of the prediction study.
///
/// The oracle and in-sample errors are computed over every node from fits to
/// the whole sample, which also predict the isolated network. The linked
/// errors come from refits on the training rows, with features propagated
/// over the full network.
pub fn prediction_replicate(cfg: &ScenarioConfig, rep: usize) -> Result<ReplicateOutcome> {
    let mut rng = replicate_rng(cfg.seed, rep);
    let (graph, labels) = gen_network(cfg.case, cfg.n, &mut rng)?;
    let w = row_normalize(&graph);
    let x = gen_covariates(cfg.case, cfg.n, cfg.d, &mut rng)?;
    let truth = draw_truth(cfg.setting, cfg.d, &mut rng);
    let sample = gen_response(&truth, &w, &x, labels.as_deref(), cfg.sigma, &mut rng)?;

    let linked = split_scenarios(
        &graph,
        cfg.case,
        cfg.train_frac,
        SplitMode::Linked,
        &mut rng,
    )?;
    let isolated = split_scenarios(
        &graph,
        cfg.case,
        cfg.train_frac,
        SplitMode::Isolated,
        &mut rng,
    )?;
    let g_iso = isolated
        .test_graph
        .as_ref()
        .expect("isolated split carries a network");
    let w_iso = row_normalize(g_iso);
    let x_iso = gen_covariates(cfg.case, g_iso.n_nodes(), cfg.d, &mut rng)?;
    let iso = gen_response(
        &truth,
        &w_iso,
        &x_iso,
        isolated.test_labels.as_deref(),
        cfg.sigma,
        &mut rng,
    )?;

    let all: Vec<usize> = (0..cfg.n).collect();
    let raw = PropagatedDesign::build(&w, &x, cfg.k_fit)?;
    let full = fit_rows(cfg, &raw, &sample.y, &all)?;
    let train = fit_rows(cfg, &raw, &sample.y, &linked.train)?;
    let npr_pred = Predictions {
        in_sample: full.predict(&raw)?,
        linked: train.predict(&raw.rows(&linked.test))?,
        isolated: full
            .predict(&PropagatedDesign::build(&w_iso, &x_iso, cfg.k_fit)?.rows(&isolated.test))?,
    };
    let r = Replicate {
        w: &w,
        x: &x,
        sample: &sample,
        train: &linked.train,
        test: &linked.test,
        iso_rows: &isolated.test,
        w_iso: &w_iso,
        x_iso: &x_iso,
        iso: &iso,
    };
    let comp = competitor_predictions(cfg, &r, &npr_pred)?;

    let y_test = pick(&sample.y, &linked.test);
    let y_iso = pick(&iso.y, &isolated.test);
    let oracle = rmse(&sample.y, &sample.oracle);
    let errors = |p: &Predictions| ScenarioErrors {
        oracle,
        in_sample: rmse(&sample.y, &p.in_sample),
        linked: rmse(&y_test, &p.linked),
        isolated: rmse(&y_iso, &p.isolated),
    };
    let npr = errors(&npr_pred);
    let competitor = errors(&comp);
    let kappa = [
        npr.in_sample / npr.oracle,
        npr.in_sample / competitor.in_sample,
        npr.linked / competitor.linked,
        npr.isolated / competitor.isolated,
    ];
    Ok(ReplicateOutcome {
        rep,
        npr,
        competitor,
        kappa,
        selected_columns: full.d_sel(),
    })
}

/// Monte-Carlo mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            se: (var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub config: ScenarioConfig,
    pub kappa1: Estimate,
    pub kappa2: Estimate,
    pub kappa3: Estimate,
    pub kappa4: Estimate,
    pub replicates: Vec<ReplicateOutcome>,
}

impl PredictionReport {
    pub fn kappas(&self) -> [Estimate; 4] {
        [self.kappa1, self.kappa2, self.kappa3, self.kappa4]
    }

    fn from_outcomes(config: ScenarioConfig, replicates: Vec<ReplicateOutcome>) -> Self {
        let k = |s: usize| Estimate::of(replicates.iter().map(|r| r.kappa[s]));
        Self {
            kappa1: k(0),
            kappa2: k(1),
            kappa3: k(2),
            kappa4: k(3),
            config,
            replicates,
        }
    }
}

/// Runs every replicate of the prediction study. With `parallel` the
/// replicates run on the current rayon pool; results do not depend on it.
pub fn run_prediction_study(cfg: &ScenarioConfig, parallel: bool) -> Result<PredictionReport> {
    cfg.validate()?;
    let outcomes = run_replicates(cfg.reps, parallel, |rep| prediction_replicate(cfg, rep))?;
    Ok(PredictionReport::from_outcomes(cfg.clone(), outcomes))
}

fn run_replicates<T, F>(reps: usize, parallel: bool, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Send + Sync,
{
    if parallel {
        (0..reps).into_par_iter().map(f).collect()
    } else {
        (0..reps).map(f).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestStudyConfig {
    pub case: Case,
    pub n: usize,
    pub d: usize,
    pub k_fit: usize,
    pub k_max: usize,
    pub alpha: f64,
    /// Number of true nulls among the `k_max + 1` hypotheses.
    pub n_nulls: usize,
    pub reps: usize,
    pub seed: u64,
    pub sigma: f64,
    pub selection_tol: f64,
    pub options: OrderTestOptions,
}

impl TestStudyConfig {
    pub fn new(case: u8, n_nulls: usize, n: usize, reps: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            case: Case::from_index(case)?,
            n,
            d: 10,
            k_fit: 8,
            k_max: 4,
            alpha: 0.05,
            n_nulls,
            reps,
            seed,
            sigma: 1.0,
            selection_tol: DEFAULT_SELECTION_TOL,
            options: OrderTestOptions::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(NprError::InvalidConfig(
                "at least one replicate is required".into(),
            ));
        }
        if self.k_max > self.k_fit {
            return Err(NprError::InvalidConfig(
                "k_max exceeds the fitted order".into(),
            ));
        }
        if self.n_nulls > self.k_max + 1 {
            return Err(NprError::InvalidConfig(format!(
                "{} nulls requested among {} hypotheses",
                self.n_nulls,
                self.k_max + 1
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(NprError::InvalidConfig("alpha must lie in (0, 1)".into()));
        }
        if self.d == 0 || self.n < 2 {
            return Err(NprError::InvalidConfig("empty problem".into()));
        }
        Ok(())
    }

    /// Orders `0..n_nonzero` carry effects; hypotheses `j >= n_nonzero` are true nulls.
    pub fn n_nonzero(&self) -> usize {
        self.k_max + 1 - self.n_nulls
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReplicate {
    pub rep: usize,
    pub p_values: Vec<f64>,
    pub holm_rejections: Vec<bool>,
    pub covered: usize,
    pub nonzero_coefficients: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestStudyReport {
    pub config: TestStudyConfig,
    /// Mean unadjusted rejection rate over false nulls; absent without false nulls.
    pub ep: Option<f64>,
    /// Mean unadjusted rejection rate over true nulls; absent without true nulls.
    pub es: Option<f64>,
    /// Share of replicates where Holm rejects every false null.
    pub mp: Option<f64>,
    /// Share of replicates where Holm rejects at least one true null.
    pub fwer: Option<f64>,
    /// Coverage of the 95% intervals for the nonzero coefficients.
    pub cp: Option<f64>,
    pub replicates: Vec<TestReplicate>,
}

pub fn test_replicate(cfg: &TestStudyConfig, rep: usize) -> Result<TestReplicate> {
    let mut rng = replicate_rng(cfg.seed, rep);
    let (graph, _) = gen_network(cfg.case, cfg.n, &mut rng)?;
    let w = row_normalize(&graph);
    let x = gen_covariates(cfg.case, cfg.n, cfg.d, &mut rng)?;
    let scale = Uniform::new(-0.25, 0.25).expect("valid bounds");
    let lambdas: Vec<DVector<f64>> = (0..cfg.n_nonzero())
        .map(|_| DVector::from_fn(cfg.d, |_, _| scale.sample(&mut rng) / 2f64.sqrt()))
        .collect();
    let y = gen_npr(&w, &x, &lambdas, cfg.sigma, &mut rng)?;

    let design = PropagatedDesign::build(&w, &x, cfg.k_fit)?
        .center()
        .forward_select(cfg.selection_tol)?;
    let fit = fit_ols(&design, &y)?;
    let report = order_test(&fit, cfg.k_max, cfg.alpha, cfg.options)?;
    let mut covered = 0;
    let mut nonzero = 0;
    for row in t_statistics(&fit).rows {
        if row.tag.order < lambdas.len() {
            let truth = lambdas[row.tag.order][row.tag.covariate];
            nonzero += 1;
            if row.ci_low <= truth && truth <= row.ci_high {
                covered += 1;
            }
        }
    }
    Ok(TestReplicate {
        rep,
        p_values: report.records.iter().map(|r| r.p_value).collect(),
        holm_rejections: report.holm_rejections,
        covered,
        nonzero_coefficients: nonzero,
    })
}

pub fn run_test_study(cfg: &TestStudyConfig, parallel: bool) -> Result<TestStudyReport> {
    cfg.validate()?;
    let reps = run_replicates(cfg.reps, parallel, |rep| test_replicate(cfg, rep))?;
    let false_nulls = 0..cfg.n_nonzero();
    let true_nulls = cfg.n_nonzero()..=cfg.k_max;
    let r = reps.len() as f64;
    let rate = |range: std::ops::Range<usize>, rep: &TestReplicate| {
        let len = range.len() as f64;
        range.filter(|&j| rep.p_values[j] < cfg.alpha).count() as f64 / len
    };
    let (ep, mp) = if false_nulls.is_empty() {
        (None, None)
    } else {
        (
            Some(
                reps.iter()
                    .map(|t| rate(false_nulls.clone(), t))
                    .sum::<f64>()
                    / r,
            ),
            Some(
                reps.iter()
                    .filter(|t| t.holm_rejections[false_nulls.clone()].iter().all(|&b| b))
                    .count() as f64
                    / r,
            ),
        )
    };
    let (es, fwer) = if true_nulls.is_empty() {
        (None, None)
    } else {
        let tn = *true_nulls.start()..cfg.k_max + 1;
        (
            Some(reps.iter().map(|t| rate(tn.clone(), t)).sum::<f64>() / r),
            Some(
                reps.iter()
                    .filter(|t| t.holm_rejections[tn.clone()].iter().any(|&b| b))
                    .count() as f64
                    / r,
            ),
        )
    };
    let total: usize = reps.iter().map(|t| t.nonzero_coefficients).sum();
    let cp =
        (total > 0).then(|| reps.iter().map(|t| t.covered).sum::<usize>() as f64 / total as f64);
    Ok(TestStudyReport {
        config: cfg.clone(),
        ep,
        es,
        mp,
        fwer,
        cp,
        replicates: reps,
    })
}
