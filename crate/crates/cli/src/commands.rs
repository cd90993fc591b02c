//! One function per subcommand. Each returns the process exit code: 0 on
//! success, 2 when a fit did not converge (reports are still written).

use std::io::Write;
use std::path::{Path, PathBuf};

use zispline::selection::GridOptions;
use zispline::simulation::{
    run_study, surrogate, Study, Study1Config, Study2Config, StudyOptions, SurrogateConfig,
    DEFAULT_GRID_POINTS,
};
use zispline::{assemble, cv_mre, fit, grid_run, make_folds, Dataset, Error, FittedModel, ModelSpec, MreKind};

use crate::config::{
    parse_knot_range, required, ConfigFile, CvArgs, EvalArgs, FitArgs, RunConfig, SelectArgs,
    StudyArgs, StudyFlags, SurrogateArgs, DEFAULT_CURVE_POINTS, DEFAULT_OUT, DEFAULT_TOP,
};
use crate::data::{read_dataset, write_dataset};
use crate::error::{CliError, Result};
use crate::format::{render_table, sig4};
use crate::grid::{expand, read_grid};
use crate::parallel::Rayon;
use crate::report::{
    fit_report, select_report, write_curves, write_json, CvReport, FitReport, SimulationReport,
};
use crate::specfile::{read_spec, SpecFile};
use crate::tables::study_tables;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 2;

/// Column name written for the surrogate's count response.
pub const SURROGATE_RESPONSE: &str = "dmfs";

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn stdout_err(e: std::io::Error) -> CliError {
    CliError::io("<stdout>", e)
}

fn load_model(data_path: &Path, spec_path: &Path) -> Result<(Dataset, SpecFile, ModelSpec)> {
    let data = read_dataset(data_path)?;
    let file = read_spec(spec_path)?;
    let spec = file
        .to_model(data.names())
        .map_err(|m| CliError::spec(spec_path, m))?;
    Ok((data, file, spec))
}

pub fn cmd_fit<W: Write>(args: &FitArgs, out: &mut W) -> Result<i32> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let cfg = RunConfig::resolve(&args.common, None, &file)?;
    let data_path = required(&args.data, &file.data, "data")?;
    let spec_path = required(&args.spec, &file.spec, "spec")?;
    let points = args
        .curve_points
        .or(file.curve_points)
        .unwrap_or(DEFAULT_CURVE_POINTS);
    if points == 0 {
        return Err(CliError::Config("--curve-points must be at least 1".into()));
    }
    let (data, spec_file, spec) = load_model(&data_path, &spec_path)?;
    let fitted = fit(&spec, &data, &cfg.fit)?;
    let report = fit_report(&spec_file, &fitted, &data, &cfg.fit)?;
    create_out(&cfg.out)?;
    write_json(&cfg.out.join("fit.json"), &report)?;
    let curve_path = cfg.out.join("curves.csv");
    let curve_file = std::fs::File::create(&curve_path).map_err(|e| CliError::io(&curve_path, e))?;
    write_curves(std::io::BufWriter::new(curve_file), &fitted, &data, points)?;
    write_fit_table(out, &report, &fitted).map_err(stdout_err)?;
    Ok(if fitted.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn write_fit_table<W: Write>(out: &mut W, r: &FitReport, fit: &FittedModel) -> std::io::Result<()> {
    writeln!(
        out,
        "{} fit, n = {}, p = {}{}",
        fit.spec.family.name(),
        r.n,
        r.dimension,
        if r.converged { "" } else { "  [NOT CONVERGED]" }
    )?;
    writeln!(
        out,
        "log-likelihood {}  AIC {}  BIC {}",
        sig4(r.log_lik),
        sig4(r.aic),
        sig4(r.bic)
    )?;
    let rows: Vec<Vec<String>> = r
        .parameters
        .iter()
        .map(|p| vec![p.label.clone(), sig4(p.value)])
        .collect();
    write!(out, "{}", render_table(&["parameter".into(), "estimate".into()], &rows))?;
    for k in &r.knots {
        let inner: Vec<String> = k.interior.iter().map(|&v| sig4(v)).collect();
        writeln!(
            out,
            "knots {}.{}: [{}] on [{}, {}]",
            match k.component {
                zispline::model::Component::Count => "count",
                zispline::model::Component::Zero => "zero",
            },
            k.column,
            inner.join(", "),
            sig4(k.boundary[0]),
            sig4(k.boundary[1])
        )?;
    }
    writeln!(
        out,
        "at covariate means: mu = {}, pi = {}",
        sig4(r.at_means.mu),
        sig4(r.at_means.pi)
    )?;
    for w in &r.warnings {
        writeln!(out, "warning: {w}")?;
    }
    Ok(())
}

/// Log-likelihood of a stored fit report on `data`.
pub fn evaluate_report(report: &FitReport, data: &Dataset) -> Result<f64> {
    let spec = report
        .resolved_spec
        .to_model(data.names())
        .map_err(|m| CliError::spec("fit report", m))?;
    let model = assemble(&spec, data)?;
    let labels = model.layout().labels();
    if labels.len() != report.parameters.len()
        || labels.iter().zip(&report.parameters).any(|(l, p)| *l != p.label)
    {
        return Err(CliError::spec(
            "fit report",
            "parameter labels do not match the model layout",
        ));
    }
    let values: Vec<f64> = report.parameters.iter().map(|p| p.value).collect();
    Ok(model.log_likelihood_raw(&values))
}

pub fn cmd_eval<W: Write>(args: &EvalArgs, out: &mut W) -> Result<i32> {
    let text = std::fs::read_to_string(&args.report).map_err(|e| CliError::io(&args.report, e))?;
    let report: FitReport = serde_json::from_str(&text)
        .map_err(|e| CliError::spec(&args.report, e.to_string()))?;
    let data = read_dataset(&args.data)?;
    let ll = evaluate_report(&report, &data)?;
    let diff = (ll - report.log_lik).abs();
    writeln!(
        out,
        "log-likelihood {ll:?} (reported {:?}, difference {diff:e})",
        report.log_lik
    )
    .map_err(stdout_err)?;
    if !(diff <= 1e-8) {
        return Err(CliError::Config(format!(
            "re-evaluated log-likelihood differs from the report by {diff:e}"
        )));
    }
    Ok(EXIT_OK)
}

pub fn cmd_cv<W: Write>(args: &CvArgs, out: &mut W) -> Result<i32> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let cfg = RunConfig::resolve(&args.common, Some(&args.cv), &file)?;
    let data_path = required(&args.data, &file.data, "data")?;
    let spec_path = required(&args.spec, &file.spec, "spec")?;
    let (data, spec_file, spec) = load_model(&data_path, &spec_path)?;
    let plan = make_folds(data.n(), cfg.folds, cfg.seed)?;
    let result = cv_mre(&spec, &data, &plan, &cfg.fit, &Rayon)?;
    let report = CvReport {
        spec: spec_file,
        options: cfg.fit,
        folds: cfg.folds,
        seed: cfg.seed,
        mre_kind: cfg.mre_kind,
        mre: result.mre(cfg.mre_kind),
        result,
    };
    create_out(&cfg.out)?;
    write_json(&cfg.out.join("cv.json"), &report)?;
    let r = &report.result;
    writeln!(
        out,
        "{}-fold CV: MRE(abs) = {}, MRE(sq) = {}{}",
        cfg.folds,
        sig4(r.mre_abs),
        sig4(r.mre_sq),
        if r.valid { "" } else { "  [INVALID]" }
    )
    .and_then(|_| {
        if r.retried_folds.is_empty() && r.clamped_rows.is_empty() {
            Ok(())
        } else {
            writeln!(
                out,
                "retried folds {:?}, failed folds {:?}, {} held-out rows clamped",
                r.retried_folds,
                r.failed_folds,
                r.clamped_rows.len()
            )
        }
    })
    .map_err(stdout_err)?;
    Ok(if r.valid { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

pub fn cmd_select<W: Write>(args: &SelectArgs, out: &mut W) -> Result<i32> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let cfg = RunConfig::resolve(&args.common, Some(&args.cv), &file)?;
    let data_path = required(&args.data, &file.data, "data")?;
    let grid_path = required(&args.grid, &file.grid, "grid")?;
    let data = read_dataset(&data_path)?;
    let grid_file = read_grid(&grid_path)?;
    let models = expand(&grid_file, data.names())?;
    let top = args
        .top
        .or(file.top)
        .or(grid_file.top)
        .unwrap_or(DEFAULT_TOP);
    let specs: Vec<ModelSpec> = models.iter().map(|m| m.spec.clone()).collect();
    let labels: Vec<String> = models.iter().map(|m| m.label.clone()).collect();
    let options = GridOptions {
        fit: cfg.fit,
        top,
        folds: cfg.folds,
        seed: cfg.seed,
        mre_kind: cfg.mre_kind,
    };
    let grid = match grid_run(&specs, &data, &options, &Rayon) {
        Err(Error::EmptyGrid) => {
            return Err(CliError::Grid {
                axis: "*".into(),
                message: "no model in the grid could be fitted".into(),
            })
        }
        other => other?,
    };
    let report = select_report(&labels, &grid, &data, &cfg.fit, top, cfg.seed);
    create_out(&cfg.out)?;
    write_json(&cfg.out.join("select.json"), &report)?;

    let header: Vec<String> = ["AIC rank", "model", "p", "logLik", "AIC", "BIC", "BIC rank", "MRE", "MRE rank", ""]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for &i in &report.ranking {
        let e = &report.models[i];
        let Some(s) = &e.score else { continue };
        let mre = s.cv.as_ref().map_or("-".into(), |c| {
            if c.valid {
                sig4(c.mre(cfg.mre_kind))
            } else {
                "invalid".into()
            }
        });
        let rank = |r: Option<usize>| r.map_or("-".into(), |v| v.to_string());
        rows.push(vec![
            rank(s.aic_rank),
            e.label.clone(),
            s.dimension.to_string(),
            sig4(s.log_lik),
            sig4(s.aic),
            sig4(s.bic),
            rank(s.bic_rank),
            mre,
            rank(s.mre_rank),
            if report.winner == Some(i) { "winner".into() } else { String::new() },
        ]);
    }
    let failed: Vec<&crate::report::SelectEntry> = report.models.iter().filter(|e| !e.ok).collect();
    (|| -> std::io::Result<()> {
        write!(out, "{}", render_table(&header, &rows))?;
        for e in &failed {
            writeln!(out, "failed: {}: {}", e.label, e.error.as_deref().unwrap_or(""))?;
        }
        match &report.winner_label {
            Some(w) => writeln!(out, "winner by MRE({}) among the AIC top {top}: {w}", mre_name(cfg.mre_kind)),
            None => writeln!(out, "no model has a valid cross-validated MRE"),
        }
    })()
    .map_err(stdout_err)?;
    Ok(EXIT_OK)
}

fn mre_name(kind: MreKind) -> &'static str {
    match kind {
        MreKind::Abs => "abs",
        MreKind::Sq => "sq",
    }
}

fn study_options(flags: &StudyFlags, file: &ConfigFile) -> Result<(RunConfig, StudyOptions)> {
    let cfg = RunConfig::resolve(&flags.common, Some(&flags.cv), file)?;
    let options = StudyOptions {
        fit: cfg.fit,
        compute_mre: !(flags.no_mre || file.no_mre.unwrap_or(false)),
        folds: cfg.folds,
        mre_kind: cfg.mre_kind,
        grid_points: DEFAULT_GRID_POINTS,
    };
    Ok((cfg, options))
}

pub fn cmd_simulate<W: Write>(args: &StudyArgs, out: &mut W) -> Result<i32> {
    let (flags, name) = match args {
        StudyArgs::Study1(a) => (&a.flags, "study1"),
        StudyArgs::Study2(a) => (&a.flags, "study2"),
    };
    let file = ConfigFile::load(flags.common.config.as_deref())?;
    let (cfg, options) = study_options(flags, &file)?;
    let n = flags.n.or(file.n);
    let reps = flags.reps.or(file.reps);
    let study = match args {
        StudyArgs::Study1(a) => {
            let mut c = Study1Config::new(a.alpha.or(file.alpha).unwrap_or(0.5), cfg.seed);
            c.n = n.unwrap_or(c.n);
            c.replications = reps.unwrap_or(c.replications);
            Study::One(c)
        }
        StudyArgs::Study2(a) => {
            let mut c = Study2Config::new(cfg.seed);
            c.n = n.unwrap_or(c.n);
            c.replications = reps.unwrap_or(c.replications);
            if let Some(k) = a.knots.as_ref().or(file.knots.as_ref()) {
                c.knot_range = parse_knot_range(k)?;
            }
            Study::Two(c)
        }
    };
    let families = study.default_families();
    let report = run_study(&study, &families, &options, &Rayon)
        .map_err(|e| CliError::Config(format!("study configuration: {e}")))?;
    let tables = study_tables(&report, options.compute_mre);
    create_out(&cfg.out)?;
    write_json(
        &cfg.out.join(format!("{name}.json")),
        &SimulationReport { options, report },
    )?;
    let txt = cfg.out.join(format!("{name}.txt"));
    std::fs::write(&txt, &tables).map_err(|e| CliError::io(&txt, e))?;
    write!(out, "{tables}").map_err(stdout_err)?;
    Ok(EXIT_OK)
}

pub fn cmd_surrogate<W: Write>(args: &SurrogateArgs, out: &mut W) -> Result<i32> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let defaults = SurrogateConfig::default();
    let cfg = SurrogateConfig {
        n: args.n.or(file.n).unwrap_or(defaults.n),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
    };
    if cfg.n == 0 {
        return Err(CliError::Config("--n must be at least 1".into()));
    }
    let dir: PathBuf = args
        .out
        .clone()
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let data = surrogate(&cfg);
    create_out(&dir)?;
    let path = dir.join("surrogate.csv");
    let f = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    write_dataset(std::io::BufWriter::new(f), &data, SURROGATE_RESPONSE)
        .map_err(|e| CliError::io(&path, e))?;
    let n = data.n() as f64;
    let ybar = data.y().iter().sum::<u64>() as f64 / n;
    let zeros = data.y().iter().filter(|&&v| v == 0).count() as f64 / n;
    writeln!(
        out,
        "wrote {} rows to {}: mean count {}, zero fraction {} (Poisson at the mean: {})",
        data.n(),
        path.display(),
        sig4(ybar),
        sig4(zeros),
        sig4((-ybar).exp())
    )
    .map_err(stdout_err)?;
    Ok(EXIT_OK)
}
