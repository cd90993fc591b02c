//! Declarative model specifications and their assembled log-likelihood.
//!
//! `log μ` and `logit π` are additive in their terms. A term is either
//! `u β` or a B-spline curve `Σ_l β_l N_l(u)`. Because the basis sums to one,
//! each spline carries a constant; [`assemble`] keeps exactly one constant
//! per component (the first spline's first basis, or the intercept when the
//! component has no spline term) and drops the rest.
//!
//! All estimated scalars live in one flat vector. Coefficient slots come
//! first, then `log ν`, then free knot positions, so a model with its knots
//! frozen shares the coefficient prefix of the full layout.

use alloc::borrow::Cow;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::distributions::{ln_factorial, negbin_log_kernel, poisson_log_kernel};
use crate::error::{contract, Error, Result};
use crate::estimation::initial_knots;
use crate::math::{digamma, exp, ln, log_add_exp, logistic, softplus};
use crate::splines::{natural_cubic_map, KnotGrid, NaturalCubicMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Family {
    Poisson,
    NegBin,
    Zip,
    Zinb,
}

impl Family {
    pub fn zero_inflated(self) -> bool {
        matches!(self, Family::Zip | Family::Zinb)
    }

    pub fn has_dispersion(self) -> bool {
        matches!(self, Family::NegBin | Family::Zinb)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::NegBin => "negbin",
            Family::Zip => "zip",
            Family::Zinb => "zinb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum KnotRegime {
    Fixed,
    Variable,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum KnotPlacement {
    /// Equiprobable quantiles of the covariate.
    Quantile,
    /// Equally spaced inside the boundary knots.
    Equidistant,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplineSpec {
    pub degree: usize,
    /// Number of interior knots.
    pub knots: usize,
    pub regime: KnotRegime,
    pub natural: bool,
    pub placement: KnotPlacement,
    /// Boundary knots; the observed covariate range when `None`.
    pub boundary: Option<(f64, f64)>,
}

impl SplineSpec {
    pub fn new(degree: usize, knots: usize, regime: KnotRegime) -> Self {
        Self {
            degree,
            knots,
            regime,
            natural: false,
            placement: KnotPlacement::Quantile,
            boundary: None,
        }
    }

    pub fn natural(mut self) -> Self {
        self.natural = true;
        self
    }

    pub fn placed(mut self, placement: KnotPlacement) -> Self {
        self.placement = placement;
        self
    }

    pub fn on(mut self, a: f64, b: f64) -> Self {
        self.boundary = Some((a, b));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TermKind {
    Linear,
    Spline(SplineSpec),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TermSpec {
    pub covariate: usize,
    pub kind: TermKind,
}

impl TermSpec {
    pub fn linear(covariate: usize) -> Self {
        Self {
            covariate,
            kind: TermKind::Linear,
        }
    }

    pub fn spline(covariate: usize, spec: SplineSpec) -> Self {
        Self {
            covariate,
            kind: TermKind::Spline(spec),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComponentSpec {
    pub intercept: bool,
    pub terms: Vec<TermSpec>,
}

impl ComponentSpec {
    pub fn intercept_only() -> Self {
        Self {
            intercept: true,
            terms: Vec::new(),
        }
    }

    pub fn with_terms(intercept: bool, terms: Vec<TermSpec>) -> Self {
        Self { intercept, terms }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    pub family: Family,
    pub count: ComponentSpec,
    /// Ignored (and should be empty) for families without zero inflation.
    pub zero: ComponentSpec,
}

impl ModelSpec {
    pub fn has_variable_knots(&self) -> bool {
        self.count
            .terms
            .iter()
            .chain(&self.zero.terms)
            .any(|t| matches!(&t.kind, TermKind::Spline(s) if s.regime == KnotRegime::Variable))
    }
}

/// Counts plus real covariates, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<u64>,
    columns: Vec<Vec<f64>>,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(y: Vec<u64>, columns: Vec<Vec<f64>>, names: Vec<String>) -> Result<Self> {
        if y.is_empty() {
            return Err(contract!("dataset needs at least one observation"));
        }
        if names.len() != columns.len() {
            return Err(contract!(
                "{} column names for {} columns",
                names.len(),
                columns.len()
            ));
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != y.len() {
                return Err(contract!(
                    "column {name} has {} rows, response has {}",
                    col.len(),
                    y.len()
                ));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(contract!("column {name} contains a non-finite value"));
            }
        }
        Ok(Self { y, columns, names })
    }

    /// Columns named `x0, x1, …`.
    pub fn unnamed(y: Vec<u64>, columns: Vec<Vec<f64>>) -> Result<Self> {
        let names = (0..columns.len()).map(|j| format!("x{j}")).collect();
        Self::new(y, columns, names)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.columns.len()
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, j: usize) -> &str {
        &self.names[j]
    }

    pub fn range(&self, j: usize) -> (f64, f64) {
        self.columns[j]
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn column_mean(&self, j: usize) -> f64 {
        self.columns[j].iter().sum::<f64>() / self.n() as f64
    }

    /// Covariate vector of row `i`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            y: rows.iter().map(|&i| self.y[i]).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
            names: self.names.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Component {
    Count,
    Zero,
}

impl Component {
    fn prefix(self) -> &'static str {
        match self {
            Component::Count => "count",
            Component::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SlotRole {
    Intercept(Component),
    Linear {
        component: Component,
        covariate: usize,
    },
    SplineCoef {
        component: Component,
        term: usize,
        index: usize,
    },
    LogDispersion,
    FreeKnot {
        component: Component,
        term: usize,
        index: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    roles: Vec<SlotRole>,
    labels: Vec<String>,
    n_coef: usize,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    /// Number of leading non-knot slots (coefficients and `log ν`).
    pub fn n_coef(&self) -> usize {
        self.n_coef
    }

    pub fn roles(&self) -> &[SlotRole] {
        &self.roles
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn push(&mut self, role: SlotRole, label: String) -> usize {
        self.roles.push(role);
        self.labels.push(label);
        self.roles.len() - 1
    }
}

/// Parameter values paired with the layout that names them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParamVector {
    pub fn get(&self, role: SlotRole) -> Option<f64> {
        self.layout
            .roles
            .iter()
            .position(|r| *r == role)
            .map(|i| self.values[i])
    }
}

/// Per-row non-zero basis values of one spline term.
#[derive(Debug, Clone, PartialEq)]
struct RowBasis {
    width: usize,
    first: Vec<u32>,
    values: Vec<f64>,
}

impl RowBasis {
    fn build(grid: &KnotGrid, column: &[f64]) -> Result<Self> {
        let width = grid.degree() + 1;
        let mut first = Vec::with_capacity(column.len());
        let mut values = Vec::with_capacity(column.len() * width);
        for (i, &u) in column.iter().enumerate() {
            let local = grid.local_basis(u).map_err(|_| Error::DomainAt {
                index: i,
                value: u,
                lo: grid.a(),
                hi: grid.b(),
            })?;
            first.push(local.first as u32);
            values.extend_from_slice(&local.values[..width]);
        }
        Ok(Self {
            width,
            first,
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SplineTerm {
    covariate: usize,
    regime: KnotRegime,
    drop_first: bool,
    /// Current knots; for variable terms the authoritative values are in the
    /// parameter vector.
    grid: KnotGrid,
    natural: Option<NaturalCubicMap>,
    natural_flag: bool,
    coef_offset: usize,
    n_coef: usize,
    knot_offset: Option<usize>,
    basis: Option<RowBasis>,
}

impl SplineTerm {
    fn m(&self) -> usize {
        self.grid.interior().len()
    }

    /// Knots taken from `theta` for variable terms; `None` when they are not
    /// strictly increasing inside `(a, b)`.
    fn grid_at<'a>(&'a self, theta: &[f64]) -> Option<Cow<'a, KnotGrid>> {
        match self.knot_offset {
            None => Some(Cow::Borrowed(&self.grid)),
            Some(off) => {
                let knots = &theta[off..off + self.m()];
                self.grid.with_interior(knots.to_vec()).ok().map(Cow::Owned)
            }
        }
    }

    fn natural_at<'a>(&'a self, grid: &KnotGrid) -> Option<Cow<'a, NaturalCubicMap>> {
        if !self.natural_flag {
            return None;
        }
        match (&self.natural, self.knot_offset) {
            (Some(map), None) => Some(Cow::Borrowed(map)),
            _ => natural_cubic_map(grid).ok().map(Cow::Owned),
        }
    }

    /// Full B-spline coefficients from this term's parameter slots.
    fn full_coeffs(&self, params: &[f64], natural: Option<&NaturalCubicMap>) -> Vec<f64> {
        let mut reduced = Vec::with_capacity(self.n_coef + 1);
        if self.drop_first {
            reduced.push(0.0);
        }
        reduced.extend_from_slice(params);
        match natural {
            Some(map) => map.full_coeffs(&reduced),
            None => reduced,
        }
    }

    /// Pulls a gradient on full coefficients back to the parameter slots.
    fn pull_back(&self, full_grad: &[f64], natural: Option<&NaturalCubicMap>) -> Vec<f64> {
        let reduced = match natural {
            Some(map) => map.reduction().tr_mul_vec(full_grad),
            None => full_grad.to_vec(),
        };
        if self.drop_first {
            reduced[1..].to_vec()
        } else {
            reduced
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Term {
    Linear { covariate: usize, slot: usize },
    Spline(SplineTerm),
}

#[derive(Debug, Clone, PartialEq, Default)]
struct AssembledComponent {
    intercept: Option<usize>,
    terms: Vec<Term>,
}

/// Options controlling [`assemble_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssembleOptions {
    /// Apply the one-constant-per-component rule. Disabling it yields the
    /// over-parameterized model, which is only useful for diagnostics.
    pub identifiability: bool,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            identifiability: true,
        }
    }
}

/// A model specification bound to a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledModel {
    spec: ModelSpec,
    count: AssembledComponent,
    zero: AssembledComponent,
    dispersion: Option<usize>,
    layout: ParamLayout,
    y: Vec<u64>,
    ln_fact: Vec<f64>,
    data: Dataset,
}

/// Per-row predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mu: f64,
    pub pi: f64,
    pub mean: f64,
}

pub fn assemble(spec: &ModelSpec, data: &Dataset) -> Result<AssembledModel> {
    assemble_with(spec, data, AssembleOptions::default())
}

pub fn assemble_with(
    spec: &ModelSpec,
    data: &Dataset,
    options: AssembleOptions,
) -> Result<AssembledModel> {
    let mut layout = ParamLayout {
        roles: Vec::new(),
        labels: Vec::new(),
        n_coef: 0,
    };
    let count = assemble_component(
        Component::Count,
        &spec.count,
        data,
        options,
        &mut layout,
    )?;
    let zero = if spec.family.zero_inflated() {
        assemble_component(Component::Zero, &spec.zero, data, options, &mut layout)?
    } else {
        if !spec.zero.terms.is_empty() {
            return Err(contract!(
                "family {} has no zero component but zero terms were given",
                spec.family.name()
            ));
        }
        AssembledComponent::default()
    };
    let dispersion = spec
        .family
        .has_dispersion()
        .then(|| layout.push(SlotRole::LogDispersion, String::from("log_nu")));
    layout.n_coef = layout.len();

    let mut model = AssembledModel {
        spec: spec.clone(),
        count,
        zero,
        dispersion,
        layout,
        y: data.y().to_vec(),
        ln_fact: data.y().iter().map(|&k| ln_factorial(k)).collect(),
        data: data.clone(),
    };
    // knot slots last
    let mut layout = model.layout.clone();
    for (component, comp) in [
        (Component::Count, &mut model.count),
        (Component::Zero, &mut model.zero),
    ] {
        for (term_index, term) in comp.terms.iter_mut().enumerate() {
            if let Term::Spline(s) = term {
                if s.regime == KnotRegime::Variable {
                    let name = data.name(s.covariate);
                    let off = layout.len();
                    for r in 0..s.m() {
                        layout.push(
                            SlotRole::FreeKnot {
                                component,
                                term: term_index,
                                index: r,
                            },
                            format!("{}.{}.knot[{}]", component.prefix(), name, r),
                        );
                    }
                    s.knot_offset = Some(off);
                }
            }
        }
    }
    model.layout = layout;
    Ok(model)
}

fn assemble_component(
    component: Component,
    spec: &ComponentSpec,
    data: &Dataset,
    options: AssembleOptions,
    layout: &mut ParamLayout,
) -> Result<AssembledComponent> {
    let n_splines = spec
        .terms
        .iter()
        .filter(|t| matches!(t.kind, TermKind::Spline(_)))
        .count();
    let keep_intercept = if options.identifiability {
        spec.intercept && n_splines == 0
    } else {
        spec.intercept
    };
    let prefix = component.prefix();
    let mut out = AssembledComponent::default();
    if keep_intercept {
        out.intercept = Some(layout.push(
            SlotRole::Intercept(component),
            format!("{prefix}.intercept"),
        ));
    }
    let mut constant_kept = false;
    for (term_index, term) in spec.terms.iter().enumerate() {
        if term.covariate >= data.n_covariates() {
            return Err(contract!(
                "term refers to covariate {} but the data has {}",
                term.covariate,
                data.n_covariates()
            ));
        }
        let name = data.name(term.covariate);
        match &term.kind {
            TermKind::Linear => {
                let slot = layout.push(
                    SlotRole::Linear {
                        component,
                        covariate: term.covariate,
                    },
                    format!("{prefix}.{name}"),
                );
                out.terms.push(Term::Linear {
                    covariate: term.covariate,
                    slot,
                });
            }
            TermKind::Spline(s) => {
                let drop_first = options.identifiability && constant_kept;
                constant_kept = true;
                let grid = build_grid(s, data.column(term.covariate), data.name(term.covariate))?;
                let natural = if s.natural {
                    Some(natural_cubic_map(&grid)?)
                } else {
                    None
                };
                let full = natural
                    .as_ref()
                    .map_or(grid.basis_len(), NaturalCubicMap::reduced_len);
                let n_coef = full - usize::from(drop_first);
                let coef_offset = layout.len();
                for l in 0..n_coef {
                    layout.push(
                        SlotRole::SplineCoef {
                            component,
                            term: term_index,
                            index: l,
                        },
                        format!("{prefix}.{name}.spline[{}]", l + usize::from(drop_first)),
                    );
                }
                let basis = match s.regime {
                    KnotRegime::Fixed => Some(RowBasis::build(&grid, data.column(term.covariate))?),
                    KnotRegime::Variable => None,
                };
                out.terms.push(Term::Spline(SplineTerm {
                    covariate: term.covariate,
                    regime: s.regime,
                    drop_first,
                    grid,
                    natural,
                    natural_flag: s.natural,
                    coef_offset,
                    n_coef,
                    knot_offset: None,
                    basis,
                }));
            }
        }
    }
    Ok(out)
}

fn build_grid(s: &SplineSpec, column: &[f64], name: &str) -> Result<KnotGrid> {
    if s.natural && s.degree != 3 {
        return Err(contract!("natural spline on {name} must be cubic"));
    }
    let (lo, hi) = column
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let (a, b) = match s.boundary {
        Some((a, b)) => {
            if lo < a || hi > b {
                return Err(contract!(
                    "covariate {name} has values outside the boundary knots [{a}, {b}]"
                ));
            }
            (a, b)
        }
        None => (lo, hi),
    };
    if !(a < b) {
        return Err(contract!("spline term on constant covariate {name}"));
    }
    let interior = match &s.placement {
        KnotPlacement::Quantile => {
            if s.knots == 0 {
                Vec::new()
            } else {
                initial_knots(column, s.knots)
                    .map_err(|e| contract!("knots for {name}: {e}"))?
            }
        }
        KnotPlacement::Equidistant => {
            let h = (b - a) / (s.knots + 1) as f64;
            (1..=s.knots).map(|r| a + h * r as f64).collect()
        }
        KnotPlacement::Explicit(t) => {
            if t.len() != s.knots {
                return Err(contract!(
                    "{} explicit knots given for {name}, expected {}",
                    t.len(),
                    s.knots
                ));
            }
            t.clone()
        }
    };
    KnotGrid::new(a, b, interior, s.degree)
}

/// Per-observation log-likelihood and its derivatives with respect to the
/// count predictor, the zero predictor and `log ν`.
#[derive(Debug, Clone, Copy)]
struct ObsTerms {
    ll: f64,
    d_count: f64,
    d_zero: f64,
    d_log_nu: f64,
}

fn obs_terms(
    k: u64,
    ln_fact: f64,
    eta_c: f64,
    eta_z: Option<f64>,
    nu: Option<f64>,
) -> ObsTerms {
    let mu = exp(eta_c);
    let kf = k as f64;
    // count log-pmf, d/dη_c and d/dν
    let (count_ll, dc, dnu) = match nu {
        None => (poisson_log_kernel(k, eta_c, mu, ln_fact), kf - mu, 0.0),
        Some(nu) => {
            let ll = negbin_log_kernel(k, eta_c, nu, ln_fact);
            let log_mu_nu = log_add_exp(eta_c, ln(nu));
            let frac = exp(eta_c - log_mu_nu); // μ / (μ + ν)
            let dc = kf - (kf + nu) * frac;
            let mut dnu = ln(nu) - log_mu_nu + 1.0 - (kf + nu) / (nu * (1.0 + exp(eta_c - ln(nu))));
            if k > 0 {
                dnu += digamma(kf + nu) - digamma(nu);
            }
            (ll, dc, dnu)
        }
    };
    let Some(eta_z) = eta_z else {
        return ObsTerms {
            ll: count_ll,
            d_count: dc,
            d_zero: 0.0,
            d_log_nu: nu.map_or(0.0, |nu| nu * dnu),
        };
    };
    let log_pi = -softplus(-eta_z);
    let log_keep = -softplus(eta_z);
    let pi = logistic(eta_z);
    if k > 0 {
        return ObsTerms {
            ll: log_keep + count_ll,
            d_count: dc,
            d_zero: -pi,
            d_log_nu: nu.map_or(0.0, |nu| nu * dnu),
        };
    }
    let ll = log_add_exp(log_pi, log_keep + count_ll);
    let w_zero = exp(log_pi - ll); // π / L
    let w_count = exp(log_keep + count_ll - ll); // (1 − π) f(0) / L
    ObsTerms {
        ll,
        d_count: w_count * dc,
        d_zero: (1.0 - pi) * w_zero - pi * w_count,
        d_log_nu: nu.map_or(0.0, |nu| w_count * nu * dnu),
    }
}

impl AssembledModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of estimated scalars: one per parameter slot.
    pub fn dimension(&self) -> usize {
        self.layout.len()
    }

    pub fn params(&self, values: Vec<f64>) -> Result<ParamVector> {
        if values.len() != self.layout.len() {
            return Err(contract!(
                "expected {} parameters, got {}",
                self.layout.len(),
                values.len()
            ));
        }
        Ok(ParamVector {
            values,
            layout: self.layout.clone(),
        })
    }

    fn components(&self) -> [(Component, &AssembledComponent); 2] {
        [
            (Component::Count, &self.count),
            (Component::Zero, &self.zero),
        ]
    }

    fn spline_terms(&self) -> impl Iterator<Item = (Component, usize, &SplineTerm)> {
        self.components().into_iter().flat_map(|(c, comp)| {
            comp.terms.iter().enumerate().filter_map(move |(j, t)| match t {
                Term::Spline(s) => Some((c, j, s)),
                Term::Linear { .. } => None,
            })
        })
    }

    /// Starting values: the count constant at `ln(ȳ + 0.5)`, the zero
    /// constant at the logit of the excess-zero fraction, everything else 0,
    /// `log ν = 0`, knots at their assembled positions.
    pub fn initial_params(&self) -> ParamVector {
        let n = self.n() as f64;
        let ybar = self.y.iter().map(|&v| v as f64).sum::<f64>() / n;
        let p0_obs = self.y.iter().filter(|&&v| v == 0).count() as f64 / n;
        let p0_pois = exp(-ybar);
        let excess = if p0_pois < 1.0 {
            ((p0_obs - p0_pois) / (1.0 - p0_pois)).clamp(0.01, 0.99)
        } else {
            0.5
        };
        let mut values = vec![0.0; self.layout.len()];
        let count_const = ln(ybar + 0.5);
        let zero_const = ln(excess / (1.0 - excess));
        for (comp, c) in [(&self.count, count_const), (&self.zero, zero_const)] {
            if let Some(slot) = comp.intercept {
                values[slot] = c;
            }
            for term in &comp.terms {
                if let Term::Spline(s) = term {
                    if !s.drop_first {
                        // the partition of unity makes equal coefficients a constant curve
                        values[s.coef_offset..s.coef_offset + s.n_coef].fill(c);
                    }
                }
            }
        }
        for (_, _, s) in self.spline_terms() {
            if let Some(off) = s.knot_offset {
                values[off..off + s.m()].copy_from_slice(s.grid.interior());
            }
        }
        ParamVector {
            values,
            layout: self.layout.clone(),
        }
    }

    /// Interior knots of every spline term (count terms first), read from
    /// `theta` for variable terms.
    pub fn knots_at(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        self.spline_terms()
            .map(|(_, _, s)| match s.knot_offset {
                Some(off) => theta[off..off + s.m()].to_vec(),
                None => s.grid.interior().to_vec(),
            })
            .collect()
    }

    /// Boundary knots of every spline term, in the same order as [`Self::knots_at`].
    pub fn boundaries(&self) -> Vec<(f64, f64)> {
        self.spline_terms()
            .map(|(_, _, s)| (s.grid.a(), s.grid.b()))
            .collect()
    }

    /// `(knot slot offset, boundary, term)` for every variable-knot term.
    pub fn free_knot_blocks(&self) -> Vec<FreeKnotBlock> {
        self.spline_terms()
            .filter_map(|(component, term, s)| {
                s.knot_offset.map(|offset| FreeKnotBlock {
                    component,
                    term,
                    offset,
                    len: s.m(),
                    a: s.grid.a(),
                    b: s.grid.b(),
                })
            })
            .collect()
    }

    /// The same model with every variable-knot term fixed at the knots in
    /// `theta`. Its layout is the coefficient prefix of this one.
    pub fn freeze_knots(&self, theta: &[f64]) -> Result<AssembledModel> {
        let mut out = self.clone();
        for comp in [&mut out.count, &mut out.zero] {
            for term in &mut comp.terms {
                if let Term::Spline(s) = term {
                    if let Some(off) = s.knot_offset.take() {
                        s.grid = s.grid.with_interior(theta[off..off + s.m()].to_vec())?;
                        s.regime = KnotRegime::Fixed;
                        if s.natural_flag {
                            s.natural = Some(natural_cubic_map(&s.grid)?);
                        }
                        s.basis = Some(RowBasis::build(&s.grid, self.data.column(s.covariate))?);
                    }
                }
            }
        }
        out.layout.roles.truncate(out.layout.n_coef);
        out.layout.labels.truncate(out.layout.n_coef);
        Ok(out)
    }

    /// The specification with every spline's knots and boundary pinned to
    /// the values used by this model at `theta`. Regimes are kept.
    pub fn resolved_spec(&self, theta: &[f64]) -> ModelSpec {
        let mut spec = self.spec.clone();
        let knots = self.knots_at(theta);
        let bounds = self.boundaries();
        let mut idx = 0;
        let zi = spec.family.zero_inflated();
        let comps: [&mut ComponentSpec; 2] = [&mut spec.count, &mut spec.zero];
        for (ci, comp) in comps.into_iter().enumerate() {
            if ci == 1 && !zi {
                continue;
            }
            for term in &mut comp.terms {
                if let TermKind::Spline(s) = &mut term.kind {
                    s.placement = KnotPlacement::Explicit(knots[idx].clone());
                    s.boundary = Some(bounds[idx]);
                    idx += 1;
                }
            }
        }
        spec
    }

    pub fn log_likelihood(&self, params: &ParamVector) -> f64 {
        self.evaluate(&params.values, None)
    }

    /// Log-likelihood at a raw parameter slice; `-∞` when the predictors are
    /// not finite or free knots are disordered.
    pub fn log_likelihood_raw(&self, theta: &[f64]) -> f64 {
        self.evaluate(theta, None)
    }

    /// Log-likelihood plus its analytic gradient in the coefficient slots
    /// (`grad[..n_coef]`); knot entries of `grad` are left untouched.
    pub fn log_likelihood_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate(theta, Some(grad))
    }

    fn evaluate(&self, theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        assert_eq!(theta.len(), self.layout.len(), "parameter length mismatch");
        let n = self.n();
        let zi = self.spec.family.zero_inflated();
        let nu = self.dispersion.map(|s| exp(theta[s]));
        if nu.is_some_and(|v| !(v.is_finite() && v > 0.0)) {
            return f64::NEG_INFINITY;
        }

        let Some(count_states) = self.term_states(&self.count, theta) else {
            return f64::NEG_INFINITY;
        };
        let Some(zero_states) = self.term_states(&self.zero, theta) else {
            return f64::NEG_INFINITY;
        };
        let eta_c = self.predictor(&self.count, &count_states, theta);
        let eta_z = if zi {
            Some(self.predictor(&self.zero, &zero_states, theta))
        } else {
            None
        };

        let mut total = 0.0;
        let mut d_count = vec![0.0; n];
        let mut d_zero = vec![0.0; if zi { n } else { 0 }];
        let mut d_log_nu = 0.0;
        for i in 0..n {
            if !eta_c[i].is_finite() || eta_c[i] > 700.0 {
                return f64::NEG_INFINITY;
            }
            let ez = eta_z.as_ref().map(|v| v[i]);
            if ez.is_some_and(|v| !v.is_finite()) {
                return f64::NEG_INFINITY;
            }
            let o = obs_terms(self.y[i], self.ln_fact[i], eta_c[i], ez, nu);
            total += o.ll;
            d_count[i] = o.d_count;
            if zi {
                d_zero[i] = o.d_zero;
            }
            d_log_nu += o.d_log_nu;
        }
        if !total.is_finite() {
            return f64::NEG_INFINITY;
        }
        if let Some(grad) = grad {
            self.backprop(&self.count, &count_states, &d_count, grad);
            if zi {
                self.backprop(&self.zero, &zero_states, &d_zero, grad);
            }
            if let Some(s) = self.dispersion {
                grad[s] = d_log_nu;
            }
        }
        total
    }

    fn term_states<'a>(
        &'a self,
        comp: &'a AssembledComponent,
        theta: &[f64],
    ) -> Option<Vec<Option<TermState<'a>>>> {
        comp.terms
            .iter()
            .map(|t| match t {
                Term::Linear { .. } => Some(None),
                Term::Spline(s) => {
                    let grid = s.grid_at(theta)?;
                    let natural = s.natural_at(&grid);
                    if s.natural_flag && natural.is_none() {
                        return None;
                    }
                    let basis = match &s.basis {
                        Some(b) if s.knot_offset.is_none() => Cow::Borrowed(b),
                        _ => Cow::Owned(RowBasis::build(&grid, self.data.column(s.covariate)).ok()?),
                    };
                    let coeffs = s.full_coeffs(
                        &theta[s.coef_offset..s.coef_offset + s.n_coef],
                        natural.as_deref(),
                    );
                    Some(Some(TermState {
                        basis,
                        natural,
                        coeffs,
                    }))
                }
            })
            .collect()
    }

    fn predictor(
        &self,
        comp: &AssembledComponent,
        states: &[Option<TermState<'_>>],
        theta: &[f64],
    ) -> Vec<f64> {
        let n = self.n();
        let mut eta = vec![comp.intercept.map_or(0.0, |s| theta[s]); n];
        for (term, state) in comp.terms.iter().zip(states) {
            match (term, state) {
                (Term::Linear { covariate, slot }, _) => {
                    let beta = theta[*slot];
                    for (e, x) in eta.iter_mut().zip(self.data.column(*covariate)) {
                        *e += beta * x;
                    }
                }
                (Term::Spline(_), Some(st)) => {
                    let w = st.basis.width;
                    for (i, e) in eta.iter_mut().enumerate() {
                        let f = st.basis.first[i] as usize;
                        let vals = &st.basis.values[i * w..(i + 1) * w];
                        *e += vals
                            .iter()
                            .zip(&st.coeffs[f..f + w])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
                (Term::Spline(_), None) => unreachable!("spline term without state"),
            }
        }
        eta
    }

    fn backprop(
        &self,
        comp: &AssembledComponent,
        states: &[Option<TermState<'_>>],
        d_eta: &[f64],
        grad: &mut [f64],
    ) {
        if let Some(s) = comp.intercept {
            grad[s] = d_eta.iter().sum();
        }
        for (term, state) in comp.terms.iter().zip(states) {
            match (term, state) {
                (Term::Linear { covariate, slot }, _) => {
                    grad[*slot] = d_eta
                        .iter()
                        .zip(self.data.column(*covariate))
                        .map(|(d, x)| d * x)
                        .sum();
                }
                (Term::Spline(s), Some(st)) => {
                    let w = st.basis.width;
                    let mut full = vec![0.0; st.coeffs.len()];
                    for (i, d) in d_eta.iter().enumerate() {
                        let f = st.basis.first[i] as usize;
                        for (g, v) in full[f..f + w]
                            .iter_mut()
                            .zip(&st.basis.values[i * w..(i + 1) * w])
                        {
                            *g += d * v;
                        }
                    }
                    let pulled = s.pull_back(&full, st.natural.as_deref());
                    grad[s.coef_offset..s.coef_offset + s.n_coef].copy_from_slice(&pulled);
                }
                (Term::Spline(_), None) => unreachable!("spline term without state"),
            }
        }
    }

    /// Linear predictor of one component at a single covariate vector.
    /// Spline covariates outside their boundary knots are an error unless
    /// `clamp` is set, in which case they are moved onto the boundary and
    /// the returned flag is true.
    pub fn eta_at(
        &self,
        theta: &[f64],
        component: Component,
        x: &[f64],
        clamp: bool,
    ) -> Result<(f64, bool)> {
        let comp = match component {
            Component::Count => &self.count,
            Component::Zero => &self.zero,
        };
        let mut eta = comp.intercept.map_or(0.0, |s| theta[s]);
        let mut clamped = false;
        for term in &comp.terms {
            match term {
                Term::Linear { covariate, slot } => eta += theta[*slot] * x[*covariate],
                Term::Spline(s) => {
                    let grid = s
                        .grid_at(theta)
                        .ok_or_else(|| contract!("free knots are not strictly increasing"))?;
                    let mut u = x[s.covariate];
                    if clamp && (u < grid.a() || u > grid.b()) {
                        u = u.clamp(grid.a(), grid.b());
                        clamped = true;
                    }
                    let natural = s.natural_at(&grid);
                    let coeffs = s.full_coeffs(
                        &theta[s.coef_offset..s.coef_offset + s.n_coef],
                        natural.as_deref(),
                    );
                    eta += crate::splines::spline_eval(u, &grid, &coeffs)?;
                }
            }
        }
        Ok((eta, clamped))
    }

    /// Contribution of a single term (by position in its component) at `u`.
    pub fn term_curve(
        &self,
        theta: &[f64],
        component: Component,
        term: usize,
        u: f64,
    ) -> Result<f64> {
        let comp = match component {
            Component::Count => &self.count,
            Component::Zero => &self.zero,
        };
        match comp.terms.get(term) {
            None => Err(contract!("no term {term} in the {} component", component.prefix())),
            Some(Term::Linear { slot, .. }) => Ok(theta[*slot] * u),
            Some(Term::Spline(s)) => {
                let grid = s
                    .grid_at(theta)
                    .ok_or_else(|| contract!("free knots are not strictly increasing"))?;
                let natural = s.natural_at(&grid);
                let coeffs = s.full_coeffs(
                    &theta[s.coef_offset..s.coef_offset + s.n_coef],
                    natural.as_deref(),
                );
                crate::splines::spline_eval(u, &grid, &coeffs)
            }
        }
    }

    pub fn predict_point(&self, theta: &[f64], x: &[f64], clamp: bool) -> Result<(Prediction, bool)> {
        let (eta_c, c1) = self.eta_at(theta, Component::Count, x, clamp)?;
        let (pi, c2) = if self.spec.family.zero_inflated() {
            let (eta_z, c2) = self.eta_at(theta, Component::Zero, x, clamp)?;
            (logistic(eta_z), c2)
        } else {
            (0.0, false)
        };
        let mu = crate::distributions::link_log_inv(eta_c);
        Ok((
            Prediction {
                mu,
                pi,
                mean: (1.0 - pi) * mu,
            },
            c1 || c2,
        ))
    }

    /// Predictions for every row of `rows`; out-of-domain spline covariates
    /// are an error.
    pub fn predict(&self, params: &ParamVector, rows: &Dataset) -> Result<Vec<Prediction>> {
        self.check_columns(rows)?;
        (0..rows.n())
            .map(|i| {
                self.predict_point(&params.values, &rows.row(i), false)
                    .map(|(p, _)| p)
            })
            .collect()
    }

    /// Like [`Self::predict`] but clamps spline covariates onto the boundary
    /// knots; the flags mark clamped rows.
    pub fn predict_clamped(
        &self,
        params: &ParamVector,
        rows: &Dataset,
    ) -> Result<(Vec<Prediction>, Vec<bool>)> {
        self.check_columns(rows)?;
        let mut preds = Vec::with_capacity(rows.n());
        let mut flags = Vec::with_capacity(rows.n());
        for i in 0..rows.n() {
            let (p, c) = self.predict_point(&params.values, &rows.row(i), true)?;
            preds.push(p);
            flags.push(c);
        }
        Ok((preds, flags))
    }

    fn check_columns(&self, rows: &Dataset) -> Result<()> {
        if rows.n_covariates() != self.data.n_covariates() {
            return Err(contract!(
                "prediction rows have {} covariates, model was built on {}",
                rows.n_covariates(),
                self.data.n_covariates()
            ));
        }
        Ok(())
    }
}

/// Location of one variable-knot term's knots in the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeKnotBlock {
    pub component: Component,
    pub term: usize,
    pub offset: usize,
    pub len: usize,
    pub a: f64,
    pub b: f64,
}

struct TermState<'a> {
    basis: Cow<'a, RowBasis>,
    natural: Option<Cow<'a, NaturalCubicMap>>,
    coeffs: Vec<f64>,
}

/// Number of estimated scalars of an assembled model.
pub fn model_dimension(model: &AssembledModel) -> usize {
    model.dimension()
}
