//! Maximum-likelihood fitting with fixed knots and the EBOK adaptive-knot
//! loop.
//!
//! EBOK optimizes every free knot inside its own box. Boxes start at the
//! midpoints between the quantile-initialized knots, separated by a gap `ε`.
//! Whenever a fitted knot ends on a box edge, that edge is moved to the
//! midpoint between the knot and its neighbor and the joint maximization is
//! repeated from the previous optimum, until no edge moves.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::math::floor;
use crate::model::{
    assemble, AssembledModel, Dataset, KnotPlacement, KnotRegime, ModelSpec, ParamVector,
    Prediction, TermKind,
};
use crate::optimizer::{maximize, BoxBounds, Objective, OptimOptions, OptimReport};

/// Quantiles at probabilities `r/(m+1)`, interpolating linearly between
/// order statistics at 1-based position `(n+1)p`. Knots that land on a tied
/// value or on the sample extremes are nudged to the midpoint of the
/// neighboring distinct values.
pub fn initial_knots(values: &[f64], m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < m + 1 {
        return Err(contract!(
            "{} distinct values cannot host {m} interior knots",
            distinct.len()
        ));
    }
    let n = sorted.len();
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let quantile = |p: f64| {
        let h = ((n + 1) as f64 * p).clamp(1.0, n as f64);
        let k = floor(h) as usize;
        if k >= n {
            sorted[n - 1]
        } else {
            sorted[k - 1] + (h - k as f64) * (sorted[k] - sorted[k - 1])
        }
    };
    let next_above = |v: f64| distinct.iter().copied().find(|&d| d > v);
    let mut knots: Vec<f64> = Vec::with_capacity(m);
    for r in 1..=m {
        let mut q = quantile(r as f64 / (m + 1) as f64);
        let floor_v = knots.last().copied().unwrap_or(lo);
        if q <= floor_v {
            q = match next_above(floor_v) {
                Some(nx) => 0.5 * (floor_v + nx),
                None => q,
            };
        }
        if q >= hi {
            q = 0.5 * (floor_v + hi);
        }
        knots.push(q);
    }
    let ordered = knots.windows(2).all(|w| w[0] < w[1]);
    if !ordered || knots[0] <= lo || knots[m - 1] >= hi {
        return Err(contract!("could not place {m} distinct interior knots"));
    }
    Ok(knots)
}

/// Boxes of one variable-knot term.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoxConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub eps: f64,
    pub a: f64,
    pub b: f64,
}

impl BoxConfig {
    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    /// Checks containment in `[a+ε, b−ε]`, ordering and the `ε` gaps, with a
    /// relative slack for rounding.
    pub fn is_valid(&self) -> bool {
        let slack = 1e-12 * (self.b - self.a);
        let m = self.len();
        if m == 0 {
            return true;
        }
        self.lo.iter().zip(&self.hi).all(|(l, h)| l <= h)
            && self.lo[0] >= self.a + self.eps - slack
            && self.hi[m - 1] <= self.b - self.eps + slack
            && (1..m).all(|r| self.lo[r] - self.hi[r - 1] >= self.eps - slack)
    }

    pub fn contains(&self, knots: &[f64]) -> bool {
        knots.len() == self.len()
            && knots
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(t, (l, h))| l <= t && t <= h)
    }
}

pub fn initial_boxes(knots: &[f64], a: f64, b: f64, eps: f64) -> Result<BoxConfig> {
    if !(eps > 0.0) || !(a < b) {
        return Err(contract!("box construction needs a < b and ε > 0"));
    }
    let m = knots.len();
    for (r, &t) in knots.iter().enumerate() {
        if t < a + eps || t > b - eps {
            return Err(contract!("knot {t} is within ε of the boundary [{a}, {b}]"));
        }
        if r > 0 && t - knots[r - 1] < 2.0 * eps {
            return Err(contract!("knots {} and {t} are closer than 2ε", knots[r - 1]));
        }
    }
    let mut lo = vec![a + eps; m];
    let mut hi = vec![b - eps; m];
    for r in 1..m {
        let mid = 0.5 * (knots[r - 1] + knots[r]);
        hi[r - 1] = mid - 0.5 * eps;
        lo[r] = mid + 0.5 * eps;
    }
    Ok(BoxConfig { lo, hi, eps, a, b })
}

/// One EBOK boundary adaptation. Returns whether any edge moved.
pub fn adapt_boxes(boxes: &mut BoxConfig, knots: &[f64], tol_active: f64) -> bool {
    let m = knots.len();
    let eps = boxes.eps;
    let mut moved = false;
    let old = boxes.clone();
    for r in 0..m {
        let t = knots[r];
        if t >= old.hi[r] - tol_active {
            let target = if r + 1 < m {
                let nb = knots[r + 1];
                if 0.5 * (nb - t) < eps {
                    None
                } else {
                    Some(0.5 * (t + nb) - 0.5 * eps)
                }
            } else {
                Some((0.5 * (t + boxes.b)).min(boxes.b - eps))
            };
            if let Some(edge) = target {
                if edge - old.hi[r] > tol_active {
                    boxes.hi[r] = edge;
                    if r + 1 < m {
                        boxes.lo[r + 1] = boxes.lo[r + 1].max(edge + eps);
                    }
                    moved = true;
                }
            }
        }
        if t <= old.lo[r] + tol_active {
            let target = if r > 0 {
                let nb = knots[r - 1];
                if 0.5 * (t - nb) < eps {
                    None
                } else {
                    Some(0.5 * (t + nb) + 0.5 * eps)
                }
            } else {
                Some((0.5 * (t + boxes.a)).max(boxes.a + eps))
            };
            if let Some(edge) = target {
                if old.lo[r] - edge > tol_active {
                    boxes.lo[r] = edge;
                    if r > 0 {
                        boxes.hi[r - 1] = boxes.hi[r - 1].min(edge - eps);
                    }
                    moved = true;
                }
            }
        }
    }
    moved
}

/// Random perturbation of the starting coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Jitter {
    pub seed: u64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitOptions {
    pub optim: OptimOptions,
    /// Minimal knot and box separation as a fraction of `b − a`.
    pub eps_rel: f64,
    pub max_ebok_iter: usize,
    /// A knot within this fraction of `b − a` of a box edge sits on it.
    pub tol_active_rel: f64,
    pub jitter: Option<Jitter>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            optim: OptimOptions::default(),
            eps_rel: 1e-3,
            max_ebok_iter: 50,
            tol_active_rel: 1e-8,
            jitter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub model: AssembledModel,
    pub params: ParamVector,
    /// Interior knots per spline term, count component first.
    pub knots: Vec<Vec<f64>>,
    pub log_lik: f64,
    pub dimension: usize,
    pub n: usize,
    pub ebok_iterations: usize,
    pub converged: bool,
    /// Log-likelihood after each joint maximization.
    pub trace: Vec<f64>,
    /// Final boxes per variable-knot term.
    pub boxes: Vec<BoxConfig>,
    pub warnings: Vec<String>,
}

impl FittedModel {
    pub fn predict(&self, rows: &Dataset) -> Result<Vec<Prediction>> {
        self.model.predict(&self.params, rows)
    }

    pub fn predict_clamped(&self, rows: &Dataset) -> Result<(Vec<Prediction>, Vec<bool>)> {
        self.model.predict_clamped(&self.params, rows)
    }
}

/// Log-likelihood with analytic derivatives in the coefficient slots.
pub(crate) struct Likelihood<'a>(pub &'a AssembledModel);

impl Objective for Likelihood<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.0.log_likelihood_raw(x)
    }

    fn analytic_gradient(&self, x: &[f64], grad: &mut [f64], known: &mut [bool]) -> bool {
        let v = self.0.log_likelihood_grad(x, grad);
        if !v.is_finite() {
            return false;
        }
        known[..self.0.layout().n_coef()].fill(true);
        true
    }
}

fn jittered(mut start: Vec<f64>, n_coef: usize, jitter: Option<Jitter>) -> Vec<f64> {
    if let Some(j) = jitter {
        let mut rng = ChaCha8Rng::seed_from_u64(j.seed);
        for v in &mut start[..n_coef] {
            *v += j.scale * (2.0 * rng.random::<f64>() - 1.0);
        }
    }
    start
}

fn optimize_coefficients(
    model: &AssembledModel,
    start: &[f64],
    options: &FitOptions,
) -> Result<OptimReport> {
    let bounds = BoxBounds::unbounded(start.len());
    maximize(&Likelihood(model), start, &bounds, &options.optim)
}

fn optimizer_warning(stage: &str, report: &OptimReport) -> Option<String> {
    (!report.converged).then(|| {
        format!(
            "{stage}: optimizer stopped ({:?}) after {} iterations",
            report.stop, report.iterations
        )
    })
}

/// Pins every spline term to fixed knots: `knots[i]` for the i-th spline
/// term when given, else its declared placement.
fn fixed_spec(spec: &ModelSpec, knots: Option<&[Vec<f64>]>) -> Result<ModelSpec> {
    let mut out = spec.clone();
    let mut idx = 0;
    let zi = spec.family.zero_inflated();
    for (ci, comp) in [&mut out.count, &mut out.zero].into_iter().enumerate() {
        if ci == 1 && !zi {
            continue;
        }
        for term in &mut comp.terms {
            if let TermKind::Spline(s) = &mut term.kind {
                s.regime = KnotRegime::Fixed;
                if let Some(k) = knots {
                    let t = k
                        .get(idx)
                        .ok_or_else(|| contract!("no knots given for spline term {idx}"))?;
                    s.knots = t.len();
                    s.placement = KnotPlacement::Explicit(t.clone());
                }
                idx += 1;
            }
        }
    }
    if let Some(k) = knots {
        if k.len() != idx {
            return Err(contract!("{} knot sets given for {idx} spline terms", k.len()));
        }
    }
    Ok(out)
}

/// Maximizes over coefficients (and `log ν`) with every knot held fixed.
/// Variable-knot terms are treated as fixed at their initial placement.
pub fn fit_fixed_knots(
    spec: &ModelSpec,
    data: &Dataset,
    knots: Option<&[Vec<f64>]>,
    options: &FitOptions,
) -> Result<FittedModel> {
    let spec = fixed_spec(spec, knots)?;
    let model = assemble(&spec, data)?;
    let start = jittered(model.initial_params().values, model.layout().n_coef(), options.jitter);
    let report = optimize_coefficients(&model, &start, options)?;
    let warnings = optimizer_warning("fixed-knot fit", &report).into_iter().collect();
    let params = model.params(report.argmax)?;
    Ok(FittedModel {
        knots: model.knots_at(&params.values),
        log_lik: report.value,
        dimension: model.dimension(),
        n: model.n(),
        ebok_iterations: 0,
        converged: report.converged,
        trace: vec![report.value],
        boxes: Vec::new(),
        warnings,
        spec,
        params,
        model,
    })
}

/// EBOK fit for a specification with at least one variable-knot term.
pub fn ebok_fit(spec: &ModelSpec, data: &Dataset, options: &FitOptions) -> Result<FittedModel> {
    if !spec.has_variable_knots() {
        return Err(contract!("EBOK needs at least one variable-knot spline term"));
    }
    let model = assemble(spec, data)?;
    let init = model.initial_params().values;
    let n_coef = model.layout().n_coef();
    let blocks = model.free_knot_blocks();
    let mut boxes = Vec::with_capacity(blocks.len());
    for blk in &blocks {
        let eps = options.eps_rel * (blk.b - blk.a);
        boxes.push(initial_boxes(&init[blk.offset..blk.offset + blk.len], blk.a, blk.b, eps)?);
    }

    let mut warnings = Vec::new();
    let frozen = model.freeze_knots(&init)?;
    let start = jittered(frozen.initial_params().values, n_coef, options.jitter);
    let coef_fit = optimize_coefficients(&frozen, &start, options)?;
    warnings.extend(optimizer_warning("initial fixed-knot fit", &coef_fit));
    let mut theta = init;
    theta[..n_coef].copy_from_slice(&coef_fit.argmax);

    let mut trace = Vec::new();
    let mut value = coef_fit.value;
    let mut converged = false;
    let mut iterations = 0;
    let objective = Likelihood(&model);
    while iterations < options.max_ebok_iter {
        iterations += 1;
        let mut bounds = BoxBounds::unbounded(theta.len());
        for (blk, bx) in blocks.iter().zip(&boxes) {
            for r in 0..blk.len {
                bounds.set(blk.offset + r, bx.lo[r], bx.hi[r]);
            }
        }
        let report = maximize(&objective, &theta, &bounds, &options.optim)?;
        if let Some(w) = optimizer_warning(&format!("EBOK iteration {iterations}"), &report) {
            warnings.push(w);
        }
        if report.value >= value {
            theta = report.argmax;
            value = report.value;
        }
        trace.push(value);
        let mut moved = false;
        for (blk, bx) in blocks.iter().zip(boxes.iter_mut()) {
            let tol = options.tol_active_rel * (blk.b - blk.a);
            moved |= adapt_boxes(bx, &theta[blk.offset..blk.offset + blk.len], tol);
        }
        if !moved {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push(format!(
            "EBOK stopped after {} iterations with box edges still moving",
            options.max_ebok_iter
        ));
    }

    // polish coefficients at the final knots
    let frozen = model.freeze_knots(&theta)?;
    let polish = optimize_coefficients(&frozen, &theta[..n_coef], options)?;
    if polish.value > value {
        theta[..n_coef].copy_from_slice(&polish.argmax);
        value = polish.value;
    }

    let params = model.params(theta)?;
    Ok(FittedModel {
        spec: spec.clone(),
        knots: model.knots_at(&params.values),
        log_lik: value,
        dimension: model.dimension(),
        n: model.n(),
        ebok_iterations: iterations,
        converged,
        trace,
        boxes,
        warnings,
        params,
        model,
    })
}

/// Fixed-knot or EBOK fit depending on the specification.
pub fn fit(spec: &ModelSpec, data: &Dataset, options: &FitOptions) -> Result<FittedModel> {
    if spec.has_variable_knots() {
        ebok_fit(spec, data, options)
    } else {
        fit_fixed_knots(spec, data, None, options)
    }
}
