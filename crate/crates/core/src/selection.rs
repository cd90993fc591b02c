//! Information criteria, K-fold cross-validated mean residual error and a
//! grid runner that preselects by AIC before cross-validating.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};
use crate::estimation::{fit, FitOptions, FittedModel, Jitter};
use crate::exec::Executor;
use crate::math::{abs, ln};
use crate::model::{Dataset, ModelSpec};

pub fn aic(log_lik: f64, dimension: usize) -> f64 {
    -2.0 * log_lik + 2.0 * dimension as f64
}

pub fn bic(log_lik: f64, dimension: usize, n: usize) -> f64 {
    -2.0 * log_lik + dimension as f64 * ln(n as f64)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SelectionScore {
    pub log_lik: f64,
    pub aic: f64,
    pub bic: f64,
    pub dimension: usize,
    pub n: usize,
    pub cv: Option<CvResult>,
    /// 1-based ranks within a grid; `None` outside [`grid_run`].
    pub aic_rank: Option<usize>,
    pub bic_rank: Option<usize>,
    pub mre_rank: Option<usize>,
}

pub fn score(fit: &FittedModel) -> SelectionScore {
    SelectionScore {
        log_lik: fit.log_lik,
        aic: aic(fit.log_lik, fit.dimension),
        bic: bic(fit.log_lik, fit.dimension, fit.n),
        dimension: fit.dimension,
        n: fit.n,
        cv: None,
        aic_rank: None,
        bic_rank: None,
        mre_rank: None,
    }
}

/// Assignment of every row to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    /// Row indices of every fold, ascending.
    pub fn folds(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &f) in self.assignment.iter().enumerate() {
            out[f].push(i);
        }
        out
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }
}

/// Random permutation of `0..n` cut into `k` contiguous blocks whose sizes
/// differ by at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 || k > n {
        return Err(contract!("cannot split {n} rows into {k} folds"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    let base = n / k;
    let extra = n % k;
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &row in &perm[pos..pos + size] {
            assignment[row] = fold;
        }
        pos += size;
    }
    Ok(FoldPlan { k, seed, assignment })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum MreKind {
    /// Mean absolute raw residual.
    #[default]
    Abs,
    /// Mean squared raw residual.
    Sq,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CvResult {
    pub mre_abs: f64,
    pub mre_sq: f64,
    /// False when some fold could not be fitted even after a retry.
    pub valid: bool,
    pub failed_folds: Vec<usize>,
    pub retried_folds: Vec<usize>,
    /// Held-out rows whose covariates were clamped onto the boundary knots.
    pub clamped_rows: Vec<usize>,
}

impl CvResult {
    pub fn mre(&self, kind: MreKind) -> f64 {
        match kind {
            MreKind::Abs => self.mre_abs,
            MreKind::Sq => self.mre_sq,
        }
    }
}

struct FoldOutcome {
    /// `(row, residual, clamped)` of held-out rows.
    residuals: Vec<(usize, f64, bool)>,
    retried: bool,
    failed: bool,
}

fn fold_job(
    spec: &ModelSpec,
    data: &Dataset,
    plan: &FoldPlan,
    test_rows: &[usize],
    fold: usize,
    options: &FitOptions,
) -> FoldOutcome {
    let train_rows: Vec<usize> = (0..data.n())
        .filter(|&i| plan.assignment[i] != fold)
        .collect();
    let train = data.subset(&train_rows);
    let test = data.subset(test_rows);
    let attempt = |opts: &FitOptions| -> Option<(FittedModel, bool)> {
        let f = fit(spec, &train, opts).ok()?;
        let ok = f.converged;
        Some((f, ok))
    };
    let mut retried = false;
    let mut result = attempt(options);
    if !matches!(result, Some((_, true))) {
        retried = true;
        let jittered = FitOptions {
            jitter: Some(Jitter {
                seed: plan.seed ^ (fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                scale: 0.1,
            }),
            ..*options
        };
        let second = attempt(&jittered);
        result = match (result, second) {
            (_, Some(s)) if s.1 => Some(s),
            (Some(a), Some(b)) => Some(if b.0.log_lik > a.0.log_lik { b } else { a }),
            (a, b) => a.or(b),
        };
    }
    let Some((fitted, ok)) = result else {
        return FoldOutcome {
            residuals: Vec::new(),
            retried,
            failed: true,
        };
    };
    match fitted.predict_clamped(&test) {
        Ok((preds, clamped)) => FoldOutcome {
            residuals: test_rows
                .iter()
                .zip(preds.iter().zip(clamped))
                .map(|(&row, (p, c))| (row, data.y()[row] as f64 - p.mean, c))
                .collect(),
            retried,
            failed: !ok,
        },
        Err(_) => FoldOutcome {
            residuals: Vec::new(),
            retried,
            failed: true,
        },
    }
}

fn merge_folds(outcomes: Vec<(usize, FoldOutcome)>) -> CvResult {
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    let mut failed_folds = Vec::new();
    let mut retried_folds = Vec::new();
    let mut clamped_rows = Vec::new();
    for (fold, o) in outcomes {
        if o.failed {
            failed_folds.push(fold);
        }
        if o.retried {
            retried_folds.push(fold);
        }
        for (row, r, c) in o.residuals {
            abs_sum += abs(r);
            sq_sum += r * r;
            count += 1;
            if c {
                clamped_rows.push(row);
            }
        }
    }
    clamped_rows.sort_unstable();
    let (mre_abs, mre_sq) = if count == 0 {
        (f64::NAN, f64::NAN)
    } else {
        (abs_sum / count as f64, sq_sum / count as f64)
    };
    CvResult {
        mre_abs,
        mre_sq,
        valid: failed_folds.is_empty() && mre_abs.is_finite(),
        failed_folds,
        retried_folds,
        clamped_rows,
    }
}

/// Cross-validated mean residual error: each fold is predicted by a model
/// fitted on the other folds, and the raw residuals `y − (1−π̂)μ̂` are
/// averaged over all rows.
pub fn cv_mre<E: Executor>(
    spec: &ModelSpec,
    data: &Dataset,
    plan: &FoldPlan,
    options: &FitOptions,
    exec: &E,
) -> Result<CvResult> {
    if plan.n() != data.n() {
        return Err(contract!(
            "fold plan covers {} rows, data has {}",
            plan.n(),
            data.n()
        ));
    }
    let folds: Vec<(usize, Vec<usize>)> = plan.folds().into_iter().enumerate().collect();
    let outcomes = exec.map(&folds, |(fold, rows)| {
        (*fold, fold_job(spec, data, plan, rows, *fold, options))
    });
    Ok(merge_folds(outcomes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptions {
    pub fit: FitOptions,
    /// Number of AIC-best models that are cross-validated.
    pub top: usize,
    pub folds: usize,
    pub seed: u64,
    pub mre_kind: MreKind,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            top: 20,
            folds: 20,
            seed: 0,
            mre_kind: MreKind::Abs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    pub index: usize,
    pub spec: ModelSpec,
    pub outcome: core::result::Result<GridFit, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFit {
    pub fit: FittedModel,
    pub score: SelectionScore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    /// In grid order.
    pub entries: Vec<GridEntry>,
    /// Indices of successful entries, best AIC first.
    pub ranking: Vec<usize>,
    /// Entry with the smallest valid MRE among the cross-validated ones.
    pub winner: Option<usize>,
    pub mre_kind: MreKind,
    pub plan: FoldPlan,
}

fn rank_by(entries: &[GridEntry], idx: &[usize], key: impl Fn(&GridFit) -> f64) -> Vec<usize> {
    let mut out = idx.to_vec();
    let val = |i: usize| match &entries[i].outcome {
        Ok(g) => key(g),
        Err(_) => f64::INFINITY,
    };
    out.sort_by(|&a, &b| val(a).total_cmp(&val(b)).then(a.cmp(&b)));
    out
}

/// Fits every specification, ranks by AIC and cross-validates the top
/// `options.top`. Individual failures are recorded, never fatal.
pub fn grid_run<E: Executor>(
    grid: &[ModelSpec],
    data: &Dataset,
    options: &GridOptions,
    exec: &E,
) -> Result<GridReport> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let plan = make_folds(data.n(), options.folds.min(data.n()), options.seed)?;
    let fits = exec.map(grid, |spec| fit(spec, data, &options.fit));
    let mut entries: Vec<GridEntry> = grid
        .iter()
        .zip(fits)
        .enumerate()
        .map(|(index, (spec, f))| GridEntry {
            index,
            spec: spec.clone(),
            outcome: f
                .map(|fit| GridFit {
                    score: score(&fit),
                    fit,
                })
                .map_err(|e| format!("{e}")),
        })
        .collect();
    let ok: Vec<usize> = entries
        .iter()
        .filter(|e| e.outcome.is_ok())
        .map(|e| e.index)
        .collect();
    if ok.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let ranking = rank_by(&entries, &ok, |g| g.score.aic);
    for (r, &i) in rank_by(&entries, &ok, |g| g.score.bic).iter().enumerate() {
        if let Ok(g) = &mut entries[i].outcome {
            g.score.bic_rank = Some(r + 1);
        }
    }
    for (r, &i) in ranking.iter().enumerate() {
        if let Ok(g) = &mut entries[i].outcome {
            g.score.aic_rank = Some(r + 1);
        }
    }

    let top: Vec<usize> = ranking.iter().copied().take(options.top).collect();
    let folds = plan.folds();
    let jobs: Vec<(usize, usize)> = top
        .iter()
        .flat_map(|&i| (0..plan.k).map(move |f| (i, f)))
        .collect();
    let outcomes = exec.map(&jobs, |&(i, f)| {
        (
            f,
            fold_job(&entries[i].spec, data, &plan, &folds[f], f, &options.fit),
        )
    });
    let mut outcomes = outcomes.into_iter();
    for &i in &top {
        let per_model: Vec<(usize, FoldOutcome)> = outcomes.by_ref().take(plan.k).collect();
        if let Ok(g) = &mut entries[i].outcome {
            g.score.cv = Some(merge_folds(per_model));
        }
    }
    let kind = options.mre_kind;
    let cv_ok: Vec<usize> = top
        .iter()
        .copied()
        .filter(|&i| {
            matches!(&entries[i].outcome, Ok(g) if g.score.cv.as_ref().is_some_and(|c| c.valid))
        })
        .collect();
    let by_mre = rank_by(&entries, &cv_ok, |g| {
        g.score.cv.as_ref().map_or(f64::INFINITY, |c| c.mre(kind))
    });
    for (r, &i) in by_mre.iter().enumerate() {
        if let Ok(g) = &mut entries[i].outcome {
            g.score.mre_rank = Some(r + 1);
        }
    }
    Ok(GridReport {
        winner: by_mre.first().copied(),
        entries,
        ranking,
        mre_kind: kind,
        plan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{zi_sample, ZipParams};
    use crate::exec::Sequential;
    use crate::math::logistic;
    use crate::model::{ComponentSpec, Family, TermSpec};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn criteria_formulas() {
        assert!((aic(-100.0, 5) - 210.0).abs() < 1e-12);
        let b = bic(-100.0, 5, 200);
        assert!((b - (200.0 + 5.0 * 200f64.ln())).abs() < 1e-12);
        assert!((b - 226.49).abs() < 0.01);
        assert!((aic(-100.0, 6) - aic(-100.0, 5) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fold_examples() {
        let p = make_folds(200, 20, 1).unwrap();
        assert!(p.folds().iter().all(|f| f.len() == 10));
        let p = make_folds(10, 10, 1).unwrap();
        assert!(p.folds().iter().all(|f| f.len() == 1));
        assert_eq!(make_folds(50, 7, 3).unwrap(), make_folds(50, 7, 3).unwrap());
        assert!(make_folds(3, 4, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_rows(n in 1usize..300, k in 1usize..40, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let p = make_folds(n, k, seed).unwrap();
            let folds = p.folds();
            let mut seen = vec![false; n];
            for f in &folds {
                for &i in f {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }

        #[test]
        fn constant_shift_keeps_ranks(lls in proptest::collection::vec(-500.0f64..-50.0, 2..8), shift in -100.0f64..100.0) {
            let dims: Vec<usize> = (0..lls.len()).map(|i| i % 4 + 1).collect();
            let arg = |s: f64| {
                (0..lls.len())
                    .min_by(|&a, &b| aic(lls[a] + s, dims[a]).total_cmp(&aic(lls[b] + s, dims[b])))
                    .unwrap()
            };
            prop_assert_eq!(arg(0.0), arg(shift));
        }
    }

    fn poisson_intercept() -> ModelSpec {
        ModelSpec {
            family: Family::Poisson,
            count: ComponentSpec::intercept_only(),
            zero: ComponentSpec::default(),
        }
    }

    #[test]
    fn constant_data_has_zero_mre() {
        let data = Dataset::unnamed(vec![4; 30], vec![]).unwrap();
        let plan = make_folds(30, 5, 2).unwrap();
        let cv = cv_mre(&poisson_intercept(), &data, &plan, &FitOptions::default(), &Sequential).unwrap();
        assert!(cv.valid && cv.mre_abs < 1e-8 && cv.mre_sq < 1e-12, "{cv:?}");
    }

    #[test]
    fn leave_one_out_matches_loop_oracle() {
        let y = vec![0u64, 2, 5, 1, 3, 0, 4, 2, 6, 1];
        let x: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
        let data = Dataset::unnamed(y.clone(), vec![x.clone()]).unwrap();
        let spec = ModelSpec {
            family: Family::Poisson,
            count: ComponentSpec::with_terms(true, vec![TermSpec::linear(0)]),
            zero: ComponentSpec::default(),
        };
        let plan = make_folds(10, 10, 4).unwrap();
        let opts = FitOptions::default();
        let cv = cv_mre(&spec, &data, &plan, &opts, &Sequential).unwrap();
        let mut total = 0.0;
        for i in 0..10 {
            let rows: Vec<usize> = (0..10).filter(|&j| j != i).collect();
            let f = fit(&spec, &data.subset(&rows), &opts).unwrap();
            let th = &f.params.values;
            total += (y[i] as f64 - (th[0] + th[1] * x[i]).exp()).abs();
        }
        assert!((cv.mre_abs - total / 10.0).abs() < 1e-12, "{} vs {}", cv.mre_abs, total / 10.0);
    }

    fn structured(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..120 {
            let u: f64 = rng.random();
            let p = ZipParams::new((0.2 + 2.0 * u).exp(), logistic(-1.0)).unwrap().into();
            y.push(zi_sample(&p, &mut rng));
            x.push(u);
        }
        Dataset::unnamed(y, vec![x]).unwrap()
    }

    #[test]
    fn true_model_beats_intercept_in_cv() {
        let lin = ModelSpec {
            family: Family::Zip,
            count: ComponentSpec::with_terms(true, vec![TermSpec::linear(0)]),
            zero: ComponentSpec::intercept_only(),
        };
        let constant = ModelSpec {
            family: Family::Zip,
            count: ComponentSpec::intercept_only(),
            zero: ComponentSpec::intercept_only(),
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        for seed in 0..20 {
            let data = structured(seed);
            let plan = make_folds(data.n(), 10, seed).unwrap();
            let opts = FitOptions::default();
            a.push(cv_mre(&lin, &data, &plan, &opts, &Sequential).unwrap().mre_abs);
            b.push(cv_mre(&constant, &data, &plan, &opts, &Sequential).unwrap().mre_abs);
        }
        assert!(crate::math::median(&a) <= crate::math::median(&b));
    }

    #[test]
    fn grid_with_single_model_and_failures() {
        let data = structured(3);
        let opts = GridOptions {
            folds: 5,
            ..GridOptions::default()
        };
        let r = grid_run(&[poisson_intercept()], &data, &opts, &Sequential).unwrap();
        assert_eq!(r.winner, Some(0));
        assert_eq!(r.ranking, vec![0]);
        let bad = ModelSpec {
            family: Family::Poisson,
            count: ComponentSpec::with_terms(true, vec![TermSpec::linear(7)]),
            zero: ComponentSpec::default(),
        };
        let r = grid_run(&[bad.clone(), poisson_intercept()], &data, &opts, &Sequential).unwrap();
        assert!(r.entries[0].outcome.is_err());
        assert_eq!(r.winner, Some(1));
        assert_eq!(grid_run(&[bad], &data, &opts, &Sequential), Err(Error::EmptyGrid));
        assert_eq!(grid_run(&[], &data, &opts, &Sequential), Err(Error::EmptyGrid));
    }
}
