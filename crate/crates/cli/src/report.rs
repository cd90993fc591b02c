//! Machine-readable reports (JSON) and the curve-sample CSV.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use zispline::model::{Component, Prediction};
use zispline::selection::{aic, bic, CvResult, GridReport};
use zispline::simulation::{StudyOptions, StudyReport};
use zispline::{Dataset, FitOptions, FittedModel, MreKind, TermKind};

use crate::error::{CliError, Result};
use crate::specfile::SpecFile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotEntry {
    pub component: Component,
    pub column: String,
    pub interior: Vec<f64>,
    pub boundary: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub mu: f64,
    pub pi: f64,
    pub mean: f64,
}

impl From<Prediction> for PredictionEntry {
    fn from(p: Prediction) -> Self {
        Self {
            mu: p.mu,
            pi: p.pi,
            mean: p.mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub spec: SpecFile,
    /// The specification with every knot and boundary pinned.
    pub resolved_spec: SpecFile,
    pub options: FitOptions,
    pub n: usize,
    pub dimension: usize,
    pub log_lik: f64,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
    pub ebok_iterations: usize,
    pub trace: Vec<f64>,
    pub parameters: Vec<ParamEntry>,
    pub knots: Vec<KnotEntry>,
    /// Fitted μ and π with every covariate at its sample mean.
    pub at_means: PredictionEntry,
    pub warnings: Vec<String>,
}

/// `(component, term index, column)` of every spline term, in the order
/// the fitted knots are reported.
pub fn spline_terms(fit: &FittedModel) -> Vec<(Component, usize, usize)> {
    let mut out = Vec::new();
    let mut comps = vec![(Component::Count, &fit.spec.count)];
    if fit.spec.family.zero_inflated() {
        comps.push((Component::Zero, &fit.spec.zero));
    }
    for (c, comp) in comps {
        for (j, t) in comp.terms.iter().enumerate() {
            if matches!(t.kind, TermKind::Spline(_)) {
                out.push((c, j, t.covariate));
            }
        }
    }
    out
}

pub fn means(data: &Dataset) -> Vec<f64> {
    (0..data.n_covariates()).map(|j| data.column_mean(j)).collect()
}

pub fn params_of(fit: &FittedModel) -> Vec<ParamEntry> {
    fit.params
        .layout
        .labels()
        .iter()
        .zip(&fit.params.values)
        .map(|(label, &value)| ParamEntry {
            label: label.clone(),
            value,
        })
        .collect()
}

pub fn knots_of(fit: &FittedModel, names: &[String]) -> Vec<KnotEntry> {
    let bounds = fit.model.boundaries();
    spline_terms(fit)
        .into_iter()
        .enumerate()
        .map(|(i, (component, _, cov))| KnotEntry {
            component,
            column: names[cov].clone(),
            interior: fit.knots[i].clone(),
            boundary: [bounds[i].0, bounds[i].1],
        })
        .collect()
}

pub fn fit_report(spec: &SpecFile, fit: &FittedModel, data: &Dataset, options: &FitOptions) -> Result<FitReport> {
    let names = data.names();
    let resolved = fit.model.resolved_spec(&fit.params.values);
    let (at_means, _) = fit
        .model
        .predict_point(&fit.params.values, &means(data), true)?;
    Ok(FitReport {
        spec: spec.clone(),
        resolved_spec: SpecFile::from_model(&resolved, names),
        options: *options,
        n: fit.n,
        dimension: fit.dimension,
        log_lik: fit.log_lik,
        aic: aic(fit.log_lik, fit.dimension),
        bic: bic(fit.log_lik, fit.dimension, fit.n),
        converged: fit.converged,
        ebok_iterations: fit.ebok_iterations,
        trace: fit.trace.clone(),
        parameters: params_of(fit),
        knots: knots_of(fit, names),
        at_means: at_means.into(),
        warnings: fit.warnings.clone(),
    })
}

/// Samples `points` equispaced covariate values between the boundary knots
/// of every spline term; other covariates sit at their means.
pub fn write_curves<W: Write>(out: W, fit: &FittedModel, data: &Dataset, points: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| CliError::Config(format!("writing curves: {e}"));
    w.write_record(["term", "component", "column", "x", "contribution", "mu", "pi"])
        .map_err(io)?;
    let base = means(data);
    let bounds = fit.model.boundaries();
    let theta = &fit.params.values;
    for (i, (component, term, cov)) in spline_terms(fit).into_iter().enumerate() {
        let (a, b) = bounds[i];
        for k in 0..points {
            let x = if points == 1 {
                a
            } else {
                a + (b - a) * k as f64 / (points - 1) as f64
            };
            let mut row = base.clone();
            row[cov] = x;
            let contribution = fit.model.term_curve(theta, component, term, x)?;
            let (p, _) = fit.model.predict_point(theta, &row, true)?;
            let component = match component {
                Component::Count => "count",
                Component::Zero => "zero",
            };
            w.write_record([
                i.to_string(),
                component.to_string(),
                data.name(cov).to_string(),
                x.to_string(),
                contribution.to_string(),
                p.mu.to_string(),
                p.pi.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| CliError::Config(format!("writing curves: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub spec: SpecFile,
    pub options: FitOptions,
    pub folds: usize,
    pub seed: u64,
    pub mre_kind: MreKind,
    pub mre: f64,
    pub result: CvResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectEntry {
    pub index: usize,
    pub label: String,
    pub spec: SpecFile,
    pub ok: bool,
    pub error: Option<String>,
    pub converged: Option<bool>,
    pub score: Option<zispline::SelectionScore>,
    pub parameters: Vec<ParamEntry>,
    pub knots: Vec<KnotEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectReport {
    pub options: FitOptions,
    pub top: usize,
    pub folds: usize,
    pub seed: u64,
    pub mre_kind: MreKind,
    pub models: Vec<SelectEntry>,
    /// Successful models, best AIC first.
    pub ranking: Vec<usize>,
    pub winner: Option<usize>,
    pub winner_label: Option<String>,
    pub fold_assignment: Vec<usize>,
}

pub fn select_report(
    labels: &[String],
    grid: &GridReport,
    data: &Dataset,
    options: &FitOptions,
    top: usize,
    seed: u64,
) -> SelectReport {
    let names = data.names();
    let models = grid
        .entries
        .iter()
        .map(|e| {
            let spec = SpecFile::from_model(&e.spec, names);
            match &e.outcome {
                Ok(g) => SelectEntry {
                    index: e.index,
                    label: labels[e.index].clone(),
                    spec,
                    ok: true,
                    error: None,
                    converged: Some(g.fit.converged),
                    score: Some(g.score.clone()),
                    parameters: params_of(&g.fit),
                    knots: knots_of(&g.fit, names),
                },
                Err(msg) => SelectEntry {
                    index: e.index,
                    label: labels[e.index].clone(),
                    spec,
                    ok: false,
                    error: Some(msg.clone()),
                    converged: None,
                    score: None,
                    parameters: Vec::new(),
                    knots: Vec::new(),
                },
            }
        })
        .collect();
    SelectReport {
        options: *options,
        top,
        folds: grid.plan.k,
        seed,
        mre_kind: grid.mre_kind,
        models,
        ranking: grid.ranking.clone(),
        winner: grid.winner,
        winner_label: grid.winner.map(|i| labels[i].clone()),
        fold_assignment: grid.plan.assignment.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub options: StudyOptions,
    pub report: StudyReport,
}

/// Pretty JSON plus a trailing newline. Floats are written in their
/// shortest round-trip form; non-finite values become `null`.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(format!("serializing report: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
