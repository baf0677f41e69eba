use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use npr::cox::CoxFit;
use npr::gaussian::WaldStatistic;
use npr::io::write_table;
use npr::logistic::{AucSummary, LogisticFit};
use npr::sim::{PredictionReport, TestStudyReport};
use npr::testing::{normal_two_sided, Z_975};
use npr::{t_statistics, wald_statistic, GaussianFit, OrderTestReport};

use crate::manifest::RunManifest;
use crate::{usage, CliResult};

/// A fitted model of any family, tagged by family name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "fit", rename_all = "snake_case")]
pub enum Model {
    Gaussian(GaussianFit),
    Logistic(LogisticFit),
    Cox(CoxFit),
}

impl Model {
    /// Header of the prediction column.
    pub fn prediction_name(&self) -> &'static str {
        match self {
            Model::Gaussian(_) => "mean",
            Model::Logistic(_) => "probability",
            Model::Cox(_) => "relative_risk",
        }
    }
}

/// One coefficient keyed by provenance (`k{order}_x{j}`, or `intercept`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub order: Option<usize>,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Coefficient {
    fn wald(name: String, order: Option<usize>, estimate: f64, std_error: f64) -> Self {
        let z = estimate / std_error;
        Self {
            name,
            order,
            estimate,
            std_error,
            z,
            p_value: normal_two_sided(z),
            ci_low: estimate - Z_975 * std_error,
            ci_high: estimate + Z_975 * std_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n: usize,
    pub selected_columns: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gram_condition_number: Option<f64>,
    /// Wald statistics `L_j` for `j = 0..=K`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wald: Option<Vec<WaldStatistic>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_likelihood: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_events: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub manifest: RunManifest,
    pub selection_tol: f64,
    pub coefficients: Vec<Coefficient>,
    pub diagnostics: Diagnostics,
    pub model: Model,
}

impl FitReport {
    pub fn new(manifest: RunManifest, selection_tol: f64, model: Model) -> Self {
        let (coefficients, diagnostics) = match &model {
            Model::Gaussian(g) => {
                let coefficients = t_statistics(g)
                    .rows
                    .into_iter()
                    .map(|r| Coefficient {
                        name: r.tag.to_string(),
                        order: Some(r.tag.order),
                        estimate: r.estimate,
                        std_error: r.std_error,
                        z: r.t_stat,
                        p_value: r.p_value,
                        ci_low: r.ci_low,
                        ci_high: r.ci_high,
                    })
                    .collect();
                let wald = (0..=g.max_order)
                    .map(|j| wald_statistic(g, j))
                    .collect::<npr::Result<Vec<_>>>()
                    .ok();
                let d = Diagnostics {
                    n: g.n,
                    selected_columns: g.d_sel(),
                    converged: true,
                    iterations: None,
                    sigma2_hat: Some(g.sigma2_hat),
                    gram_condition_number: Some(g.gram_condition_number()),
                    wald,
                    log_likelihood: None,
                    n_events: None,
                };
                (coefficients, d)
            }
            Model::Logistic(l) => {
                let names = std::iter::once(("intercept".to_string(), None))
                    .chain(l.tags.iter().map(|t| (t.to_string(), Some(t.order))));
                let coefficients = names
                    .zip(l.theta_hat.iter().zip(l.std_errors.iter()))
                    .map(|((name, order), (&b, &se))| Coefficient::wald(name, order, b, se))
                    .collect();
                let d = Diagnostics {
                    n: l.n,
                    selected_columns: l.tags.len(),
                    converged: l.converged,
                    iterations: Some(l.iterations),
                    sigma2_hat: None,
                    gram_condition_number: None,
                    wald: None,
                    log_likelihood: Some(l.log_likelihood),
                    n_events: None,
                };
                (coefficients, d)
            }
            Model::Cox(c) => {
                let coefficients = c
                    .tags
                    .iter()
                    .zip(c.lambda_hat.iter().zip(c.std_errors.iter()))
                    .map(|(t, (&b, &se))| Coefficient::wald(t.to_string(), Some(t.order), b, se))
                    .collect();
                let d = Diagnostics {
                    n: c.n,
                    selected_columns: c.tags.len(),
                    converged: c.converged,
                    iterations: Some(c.iterations),
                    sigma2_hat: None,
                    gram_condition_number: None,
                    wald: None,
                    log_likelihood: Some(c.partial_loglik),
                    n_events: Some(c.n_events),
                };
                (coefficients, d)
            }
        };
        Self {
            manifest,
            selection_tol,
            coefficients,
            diagnostics,
            model,
        }
    }

    pub fn max_order(&self) -> usize {
        match &self.model {
            Model::Gaussian(g) => g.max_order,
            Model::Logistic(l) => l.max_order,
            Model::Cox(c) => c.max_order,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TestReport {
    pub manifest: RunManifest,
    pub report: OrderTestReport,
}

#[derive(Debug, Serialize)]
pub struct AucReport {
    pub manifest: RunManifest,
    pub auc: AucSummary,
}

#[derive(Debug, Serialize)]
pub struct SimulateReport {
    pub manifest: RunManifest,
    #[serde(flatten)]
    pub report: PredictionReport,
}

impl SimulateReport {
    pub fn new(manifest: RunManifest, report: PredictionReport) -> Self {
        Self { manifest, report }
    }
}

#[derive(Debug, Serialize)]
pub struct SimulateTestReport {
    pub manifest: RunManifest,
    #[serde(flatten)]
    pub report: TestStudyReport,
}

impl SimulateTestReport {
    pub fn new(manifest: RunManifest, report: TestStudyReport) -> Self {
        Self { manifest, report }
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| usage(format!("{}: {e}", path.display())))?,
    ))
}

/// Long format: one row per replicate and ratio, `rep,kappa,npr,competitor,value`.
pub fn write_prediction_csv(path: &Path, report: &PredictionReport) -> CliResult<()> {
    let mut out = create(path)?;
    let rows = report.replicates.iter().flat_map(|r| {
        let npr = [
            r.npr.in_sample,
            r.npr.in_sample,
            r.npr.linked,
            r.npr.isolated,
        ];
        let comp = [
            r.npr.oracle,
            r.competitor.in_sample,
            r.competitor.linked,
            r.competitor.isolated,
        ];
        (0..4).map(move |s| vec![r.rep as f64, (s + 1) as f64, npr[s], comp[s], r.kappa[s]])
    });
    write_table(
        &mut out,
        &["rep", "kappa", "npr", "competitor", "value"],
        rows,
    )?;
    out.flush()?;
    Ok(())
}

/// Long format: one row per replicate and tested order, `rep,order,p_value,holm_reject`.
pub fn write_test_csv(path: &Path, report: &TestStudyReport) -> CliResult<()> {
    let mut out = create(path)?;
    let rows = report.replicates.iter().flat_map(|r| {
        r.p_values
            .iter()
            .zip(&r.holm_rejections)
            .enumerate()
            .map(move |(j, (&p, &rej))| {
                vec![r.rep as f64, j as f64, p, if rej { 1.0 } else { 0.0 }]
            })
    });
    write_table(&mut out, &["rep", "order", "p_value", "holm_reject"], rows)?;
    out.flush()?;
    Ok(())
}
