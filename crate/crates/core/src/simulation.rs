//! Monte-Carlo studies on zero-inflated Poisson data and a synthetic
//! stand-in for a dental cohort.
//!
//! Both studies draw `X ~ U[0,1]` and `Y | x ~ ZIP(exp f_c(x), logit⁻¹(1 − x))`.
//! Study 1 uses a cubic spline `f_c` with knots `1/3, 2/3` and alternating
//! coefficients `±α`; Study 2 uses `f_c(x) = 1 + √x + sin(4πx)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Gamma};

use crate::distributions::{zi_sample, ZinbParams, ZipParams};
use crate::error::{contract, Result};
use crate::estimation::{fit, FitOptions, FittedModel};
use crate::exec::Executor;
use crate::math::{abs, exp, logistic, median, sin, sqrt, std_dev};
use crate::model::{
    Component, ComponentSpec, Dataset, Family, KnotPlacement, KnotRegime, ModelSpec, SlotRole,
    SplineSpec, TermSpec,
};
use crate::selection::{aic, bic, cv_mre, make_folds, MreKind};
use crate::splines::{spline_eval, KnotGrid};

pub const DEFAULT_GRID_POINTS: usize = 1001;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Study1Config {
    pub alpha: f64,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
}

impl Study1Config {
    pub fn new(alpha: f64, seed: u64) -> Self {
        Self {
            alpha,
            n: 200,
            replications: 100,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Study2Config {
    pub n: usize,
    pub replications: usize,
    /// Inclusive range of interior knot counts.
    pub knot_range: (usize, usize),
    pub seed: u64,
}

impl Study2Config {
    pub fn new(seed: u64) -> Self {
        Self {
            n: 200,
            replications: 50,
            knot_range: (1, 6),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Study {
    One(Study1Config),
    Two(Study2Config),
}

fn study1_grid() -> KnotGrid {
    KnotGrid::new(0.0, 1.0, vec![1.0 / 3.0, 2.0 / 3.0], 3).expect("valid study grid")
}

/// Count curve of Study 1.
pub fn study1_fc(alpha: f64, x: f64) -> f64 {
    let coeffs: Vec<f64> = (1..=6)
        .map(|i| if i % 2 == 1 { alpha } else { -alpha })
        .collect();
    spline_eval(x.clamp(0.0, 1.0), &study1_grid(), &coeffs).expect("x clamped into [0, 1]")
}

/// Count curve of Study 2.
pub fn study2_fc(x: f64) -> f64 {
    1.0 + sqrt(x) + sin(4.0 * core::f64::consts::PI * x)
}

/// Zero-inflation predictor shared by both studies.
pub fn study_fz(x: f64) -> f64 {
    1.0 - x
}

fn rep_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

fn generate_zip(n: usize, seed: u64, rep: usize, fc: impl Fn(f64) -> f64) -> Dataset {
    let mut rng = rep_rng(seed, rep);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let p = ZipParams::new(exp(fc(u)), logistic(study_fz(u))).expect("finite study curves");
        y.push(zi_sample(&p.into(), &mut rng));
        x.push(u);
    }
    Dataset::new(y, vec![x], vec![String::from("x")]).expect("generated data is valid")
}

pub fn study1_generate(cfg: &Study1Config, rep: usize) -> Dataset {
    let alpha = cfg.alpha;
    generate_zip(cfg.n, cfg.seed, rep, |u| study1_fc(alpha, u))
}

pub fn study2_generate(cfg: &Study2Config, rep: usize) -> Dataset {
    generate_zip(cfg.n, cfg.seed, rep, study2_fc)
}

impl Study {
    pub fn n(&self) -> usize {
        match self {
            Study::One(c) => c.n,
            Study::Two(c) => c.n,
        }
    }

    pub fn replications(&self) -> usize {
        match self {
            Study::One(c) => c.replications,
            Study::Two(c) => c.replications,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Study::One(c) => c.seed,
            Study::Two(c) => c.seed,
        }
    }

    pub fn generate(&self, rep: usize) -> Dataset {
        match self {
            Study::One(c) => study1_generate(c, rep),
            Study::Two(c) => study2_generate(c, rep),
        }
    }

    pub fn truth(&self, x: f64) -> f64 {
        match self {
            Study::One(c) => study1_fc(c.alpha, x),
            Study::Two(_) => study2_fc(x),
        }
    }

    /// The families fitted in the published layout: Study 1 compares the
    /// linear fit with cubic splines on 1–3 equidistant fixed knots; Study 2
    /// compares the linear fit with linear and cubic splines on fixed and
    /// variable knots over the configured knot range.
    pub fn default_families(&self) -> Vec<StudyFamily> {
        match self {
            Study::One(_) => {
                let mut out = vec![StudyFamily::linear("lin.", "cubic fixed")];
                for m in 1..=3 {
                    out.push(StudyFamily::spline("cubic fixed", 3, m, KnotRegime::Fixed));
                }
                out
            }
            Study::Two(c) => {
                let (lo, hi) = c.knot_range;
                let mut out = vec![StudyFamily::linear("lin.", "linear fixed")];
                let groups = [
                    ("linear fixed", 1, KnotRegime::Fixed),
                    ("linear variable", 1, KnotRegime::Variable),
                    ("cubic fixed", 3, KnotRegime::Fixed),
                    ("cubic variable", 3, KnotRegime::Variable),
                ];
                for (group, degree, regime) in groups {
                    for m in lo..=hi {
                        out.push(StudyFamily::spline(group, degree, m, regime));
                    }
                }
                out
            }
        }
    }
}

/// One fitted model family of a study, with the comparison group it is
/// tallied in.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyFamily {
    pub name: String,
    pub group: String,
    pub spec: ModelSpec,
}

fn study_zero() -> ComponentSpec {
    ComponentSpec::with_terms(true, vec![TermSpec::linear(0)])
}

impl StudyFamily {
    pub fn linear(name: &str, group: &str) -> Self {
        Self {
            name: String::from(name),
            group: String::from(group),
            spec: ModelSpec {
                family: Family::Zip,
                count: ComponentSpec::with_terms(true, vec![TermSpec::linear(0)]),
                zero: study_zero(),
            },
        }
    }

    /// Spline on `[0, 1]` with `m` equidistant interior knots (the starting
    /// knots for variable regimes come from the data quantiles instead).
    pub fn spline(group: &str, degree: usize, m: usize, regime: KnotRegime) -> Self {
        let placement = match regime {
            KnotRegime::Fixed => KnotPlacement::Equidistant,
            KnotRegime::Variable => KnotPlacement::Quantile,
        };
        let s = SplineSpec::new(degree, m, regime).placed(placement).on(0.0, 1.0);
        Self {
            name: format!("{m}"),
            group: String::from(group),
            spec: ModelSpec {
                family: Family::Zip,
                count: ComponentSpec::with_terms(false, vec![TermSpec::spline(0, s)]),
                zero: study_zero(),
            },
        }
    }
}

/// `max |f − g|` over an equispaced grid on `[0, 1]`.
pub fn curve_sup_norm(f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64, points: usize) -> f64 {
    let h = 1.0 / (points - 1) as f64;
    (0..points)
        .map(|i| {
            let x = i as f64 * h;
            abs(f(x) - g(x))
        })
        .fold(0.0, f64::max)
}

/// Composite trapezoid integral of `|f − g|` over the same grid.
pub fn curve_l1_norm(f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64, points: usize) -> f64 {
    let h = 1.0 / (points - 1) as f64;
    let d: Vec<f64> = (0..points)
        .map(|i| {
            let x = i as f64 * h;
            abs(f(x) - g(x))
        })
        .collect();
    let inner: f64 = d[1..points - 1].iter().sum();
    h * (inner + 0.5 * (d[0] + d[points - 1]))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StudyOptions {
    pub fit: FitOptions,
    /// Compute cross-validated MRE (the expensive part of a study).
    pub compute_mre: bool,
    pub folds: usize,
    pub mre_kind: MreKind,
    pub grid_points: usize,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            compute_mre: true,
            folds: 20,
            mre_kind: MreKind::Abs,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

/// Outcome of one family on one replication.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RepRecord {
    pub rep: usize,
    pub family: usize,
    pub ok: bool,
    pub converged: bool,
    pub sup: f64,
    pub l1: f64,
    pub mre: Option<f64>,
    pub aic: f64,
    pub bic: f64,
    pub beta0_zero: f64,
    pub beta1_zero: f64,
    pub knots: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Summary {
    pub median: f64,
    pub sd: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        Self {
            median: median(values),
            sd: std_dev(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Criterion {
    pub summary: Summary,
    pub best: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FamilyStats {
    pub name: String,
    pub successes: usize,
    pub failures: usize,
    pub not_converged: usize,
    pub sup: Criterion,
    pub l1: Criterion,
    pub mre: Option<Criterion>,
    pub aic: Criterion,
    pub bic: Criterion,
    pub beta0_zero: Summary,
    pub beta1_zero: Summary,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupReport {
    pub name: String,
    /// Indices into the study's family list.
    pub members: Vec<usize>,
    pub families: Vec<FamilyStats>,
    /// Replications with at least one successful member.
    pub tallied: usize,
}

impl GroupReport {
    pub fn family(&self, name: &str) -> Option<&FamilyStats> {
        self.families.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StudyReport {
    pub study: Study,
    pub family_names: Vec<String>,
    pub groups: Vec<GroupReport>,
    pub records: Vec<RepRecord>,
}

impl StudyReport {
    pub fn group(&self, name: &str) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.name == name)
    }
}

/// The fitted count predictor as a function of the covariate.
pub fn fitted_count_curve(fit: &FittedModel, x: f64) -> f64 {
    fit.model
        .eta_at(&fit.params.values, Component::Count, &[x], true)
        .map_or(f64::NAN, |(v, _)| v)
}

fn run_one(
    study: &Study,
    families: &[StudyFamily],
    options: &StudyOptions,
    rep: usize,
    family: usize,
) -> RepRecord {
    let data = study.generate(rep);
    let spec = &families[family].spec;
    let failed = |e: String| RepRecord {
        rep,
        family,
        ok: false,
        converged: false,
        sup: f64::NAN,
        l1: f64::NAN,
        mre: None,
        aic: f64::NAN,
        bic: f64::NAN,
        beta0_zero: f64::NAN,
        beta1_zero: f64::NAN,
        knots: Vec::new(),
        error: Some(e),
    };
    let fitted = match fit(spec, &data, &options.fit) {
        Ok(f) => f,
        Err(e) => return failed(format!("{e}")),
    };
    let curve = |x: f64| fitted_count_curve(&fitted, x);
    let truth = |x: f64| study.truth(x);
    let sup = curve_sup_norm(curve, truth, options.grid_points);
    let l1 = curve_l1_norm(curve, truth, options.grid_points);
    let mre = if options.compute_mre {
        let plan_seed = study.seed() ^ (rep as u64).wrapping_mul(0xA076_1D64_78BD_642F);
        match make_folds(data.n(), options.folds, plan_seed)
            .and_then(|plan| cv_mre(spec, &data, &plan, &options.fit, &crate::exec::Sequential))
        {
            Ok(cv) if cv.valid => Some(cv.mre(options.mre_kind)),
            Ok(_) | Err(_) => Some(f64::NAN),
        }
    } else {
        None
    };
    let zero = |role| fitted.params.get(role).unwrap_or(f64::NAN);
    RepRecord {
        rep,
        family,
        ok: true,
        converged: fitted.converged,
        sup,
        l1,
        mre,
        aic: aic(fitted.log_lik, fitted.dimension),
        bic: bic(fitted.log_lik, fitted.dimension, fitted.n),
        beta0_zero: zero(SlotRole::Intercept(Component::Zero)),
        beta1_zero: zero(SlotRole::Linear {
            component: Component::Zero,
            covariate: 0,
        }),
        knots: fitted.knots.concat(),
        error: None,
    }
}

/// Runs every family on every replication and aggregates per group.
pub fn run_study<E: Executor>(
    study: &Study,
    families: &[StudyFamily],
    options: &StudyOptions,
    exec: &E,
) -> Result<StudyReport> {
    if families.is_empty() {
        return Err(contract!("a study needs at least one model family"));
    }
    if study.n() < 10 || study.replications() == 0 {
        return Err(contract!("a study needs n ≥ 10 and at least one replication"));
    }
    if let Study::One(c) = study {
        if !(c.alpha > 0.0) {
            return Err(contract!("α must be positive"));
        }
    }
    let reps = study.replications();
    let jobs: Vec<(usize, usize)> = (0..reps)
        .flat_map(|r| (0..families.len()).map(move |f| (r, f)))
        .collect();
    let records = exec.map(&jobs, |&(r, f)| run_one(study, families, options, r, f));

    let mut group_names: Vec<String> = Vec::new();
    for f in families {
        if !group_names.contains(&f.group) {
            group_names.push(f.group.clone());
        }
    }
    let at = |rep: usize, fam: usize| &records[rep * families.len() + fam];
    let groups = group_names
        .into_iter()
        .map(|name| {
            let members: Vec<usize> = (0..families.len())
                .filter(|&i| families[i].group == name)
                .collect();
            let mut best = vec![[0usize; 5]; members.len()];
            let mut tallied = 0;
            for rep in 0..reps {
                if !members.iter().any(|&m| at(rep, m).ok) {
                    continue;
                }
                tallied += 1;
                let keys: [fn(&RepRecord) -> f64; 5] = [
                    |r| r.sup,
                    |r| r.l1,
                    |r| r.mre.unwrap_or(f64::NAN),
                    |r| r.aic,
                    |r| r.bic,
                ];
                for (c, key) in keys.iter().enumerate() {
                    let winner = members
                        .iter()
                        .enumerate()
                        .filter(|(_, &m)| at(rep, m).ok && !key(at(rep, m)).is_nan())
                        .min_by(|(_, &a), (_, &b)| key(at(rep, a)).total_cmp(&key(at(rep, b))));
                    if let Some((slot, _)) = winner {
                        best[slot][c] += 1;
                    }
                }
            }
            let stats = members
                .iter()
                .zip(&best)
                .map(|(&m, b)| {
                    let ok: Vec<&RepRecord> = (0..reps).map(|r| at(r, m)).filter(|r| r.ok).collect();
                    let col = |key: fn(&RepRecord) -> f64| -> Vec<f64> { ok.iter().map(|r| key(r)).collect() };
                    let crit = |key: fn(&RepRecord) -> f64, i: usize| Criterion {
                        summary: Summary::of(&col(key)),
                        best: b[i],
                    };
                    FamilyStats {
                        name: families[m].name.clone(),
                        successes: ok.len(),
                        failures: reps - ok.len(),
                        not_converged: ok.iter().filter(|r| !r.converged).count(),
                        sup: crit(|r| r.sup, 0),
                        l1: crit(|r| r.l1, 1),
                        mre: options
                            .compute_mre
                            .then(|| crit(|r| r.mre.unwrap_or(f64::NAN), 2)),
                        aic: crit(|r| r.aic, 3),
                        bic: crit(|r| r.bic, 4),
                        beta0_zero: Summary::of(&col(|r| r.beta0_zero)),
                        beta1_zero: Summary::of(&col(|r| r.beta1_zero)),
                    }
                })
                .collect();
            GroupReport {
                name,
                members,
                families: stats,
                tallied,
            }
        })
        .collect();
    Ok(StudyReport {
        study: *study,
        family_names: families.iter().map(|f| f.name.clone()).collect(),
        groups,
        records,
    })
}

/// Synthetic cohort resembling a caries/BMI study: a unimodal BMI-like
/// covariate, three binary factors and ZINB counts whose log-mean follows a
/// fixed cubic B-spline in BMI with two peaks separated by a dent.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SurrogateConfig {
    pub n: usize,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self { n: 768, seed: 0 }
    }
}

pub const SURROGATE_BMI_RANGE: (f64, f64) = (12.0, 32.0);
pub const SURROGATE_KNOTS: [f64; 5] = [16.0, 18.0, 20.0, 22.0, 26.0];
pub const SURROGATE_COEFFS: [f64; 9] = [0.3, 0.4, 1.4, 0.2, 1.4, 0.9, 0.6, 0.6, 0.6];
/// Log-mean shifts of the three binary factors.
pub const SURROGATE_FACTOR_EFFECTS: [f64; 3] = [0.4, -0.3, 0.2];
pub const SURROGATE_FACTOR_RATES: [f64; 3] = [0.5, 0.6, 0.3];
pub const SURROGATE_NU: f64 = 1.5;
pub const SURROGATE_ZERO_LOGIT: f64 = -0.8;
pub const SURROGATE_COLUMNS: [&str; 4] = ["bmi", "sweets", "brushing", "soda"];

/// The surrogate's BMI curve on the log-mean scale.
pub fn surrogate_curve(bmi: f64) -> f64 {
    let (a, b) = SURROGATE_BMI_RANGE;
    let grid = KnotGrid::new(a, b, SURROGATE_KNOTS.to_vec(), 3).expect("valid surrogate grid");
    spline_eval(bmi.clamp(a, b), &grid, &SURROGATE_COEFFS).expect("bmi clamped into range")
}

pub fn surrogate(cfg: &SurrogateConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gamma = Gamma::new(9.0, 0.75).expect("valid gamma");
    let factors: Vec<Bernoulli> = SURROGATE_FACTOR_RATES
        .iter()
        .map(|&p| Bernoulli::new(p).expect("valid rate"))
        .collect();
    let mut cols: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(cfg.n)).collect();
    let mut y = Vec::with_capacity(cfg.n);
    let (a, b) = SURROGATE_BMI_RANGE;
    for _ in 0..cfg.n {
        let draw: f64 = gamma.sample(&mut rng);
        let bmi = (12.0 + draw).clamp(a + 0.5, b - 0.5);
        let mut eta = surrogate_curve(bmi);
        cols[0].push(bmi);
        for (j, f) in factors.iter().enumerate() {
            let on = f.sample(&mut rng);
            if on {
                eta += SURROGATE_FACTOR_EFFECTS[j];
            }
            cols[j + 1].push(if on { 1.0 } else { 0.0 });
        }
        let p = ZinbParams::new(exp(eta), SURROGATE_NU, logistic(SURROGATE_ZERO_LOGIT))
            .expect("finite surrogate parameters");
        y.push(zi_sample(&p.into(), &mut rng));
    }
    let names = SURROGATE_COLUMNS.iter().map(|s| String::from(*s)).collect();
    Dataset::new(y, cols, names).expect("generated data is valid")
}
