//! Command-line flags and the optional TOML config file. Config keys are the
//! long flag names (`max-ebok-iter = 30`); explicit flags win.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use zispline::{FitOptions, MreKind, OptimOptions};

use crate::error::{CliError, Result};
use crate::specfile::single_line;

pub const DEFAULT_OUT: &str = "zispline-out";
pub const DEFAULT_FOLDS: usize = 20;
pub const DEFAULT_TOP: usize = 20;
pub const DEFAULT_CURVE_POINTS: usize = 200;

#[derive(Debug, Parser)]
#[command(
    name = "zispline",
    version,
    about = "Zero-inflated count regression with B-spline terms and adaptive knots"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model; writes fit.json and curves.csv.
    Fit(FitArgs),
    /// Re-evaluate the log-likelihood stored in a fit report.
    Eval(EvalArgs),
    /// Cross-validated mean raw error of one model; writes cv.json.
    Cv(CvArgs),
    /// Fit a grid of models, rank by AIC and cross-validate the best; writes select.json.
    Select(SelectArgs),
    /// Run a Monte-Carlo study; writes <study>.json and <study>.txt.
    Simulate(SimulateArgs),
    /// Generate the synthetic caries/BMI-like cohort; writes surrogate.csv.
    Surrogate(SurrogateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MreArg {
    Abs,
    Sq,
}

impl From<MreArg> for MreKind {
    fn from(m: MreArg) -> Self {
        match m {
            MreArg::Abs => MreKind::Abs,
            MreArg::Sq => MreKind::Sq,
        }
    }
}

/// Options shared by every command that fits models.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for fold assignment and data generation [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: zispline-out].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Minimal knot separation as a fraction of the covariate range [default: 0.001].
    #[arg(long)]
    pub eps: Option<f64>,
    /// Maximal number of box-adaptation rounds [default: 50].
    #[arg(long)]
    pub max_ebok_iter: Option<usize>,
    /// Projected-gradient stopping tolerance [default: 1e-6].
    #[arg(long)]
    pub tol_g: Option<f64>,
    /// Relative log-likelihood change stopping tolerance [default: 1e-9].
    #[arg(long)]
    pub tol_f: Option<f64>,
    /// Worker threads [default: all cores].
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CvFlags {
    /// Number of cross-validation folds [default: 20].
    #[arg(long)]
    pub folds: Option<usize>,
    /// Residual measure used for ranking [default: abs].
    #[arg(long, value_enum)]
    pub mre_kind: Option<MreArg>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV data file; the first column is the count response.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// TOML model specification.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Points per spline term in curves.csv [default: 200].
    #[arg(long)]
    pub curve_points: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// CSV data file the report is evaluated on.
    #[arg(long)]
    pub data: PathBuf,
    /// A fit.json written by `zispline fit`.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub cv: CvFlags,
    /// CSV data file; the first column is the count response.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// TOML model specification.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub cv: CvFlags,
    /// CSV data file; the first column is the count response.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// TOML grid description.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Number of AIC-best models to cross-validate [default: 20].
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(subcommand)]
    pub study: StudyArgs,
}

#[derive(Debug, Subcommand)]
pub enum StudyArgs {
    /// Smooth count curve of amplitude alpha; linear vs cubic splines on 1-3 knots.
    Study1(Study1Args),
    /// Curve with a kink, a jump and a bump; linear and cubic splines, fixed and variable knots.
    Study2(Study2Args),
}

#[derive(Debug, Clone, Default, Args)]
pub struct StudyFlags {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub cv: CvFlags,
    /// Replications [default: 100 for study1, 50 for study2].
    #[arg(long)]
    pub reps: Option<usize>,
    /// Observations per replication [default: 200].
    #[arg(long)]
    pub n: Option<usize>,
    /// Skip the cross-validated MRE (much faster).
    #[arg(long)]
    pub no_mre: bool,
}

#[derive(Debug, Args)]
pub struct Study1Args {
    #[command(flatten)]
    pub flags: StudyFlags,
    /// Amplitude of the count curve [default: 0.5].
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Study2Args {
    #[command(flatten)]
    pub flags: StudyFlags,
    /// Inclusive range of interior knot counts, `lo..hi` [default: 1..6].
    #[arg(long)]
    pub knots: Option<String>,
}

#[derive(Debug, Args)]
pub struct SurrogateArgs {
    /// Rows [default: 768].
    #[arg(long)]
    pub n: Option<usize>,
    /// Seed of the generator [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: zispline-out].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Every key a config file may set.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub data: Option<PathBuf>,
    pub spec: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub eps: Option<f64>,
    pub max_ebok_iter: Option<usize>,
    pub tol_g: Option<f64>,
    pub tol_f: Option<f64>,
    pub threads: Option<usize>,
    pub folds: Option<usize>,
    pub mre_kind: Option<MreArg>,
    pub top: Option<usize>,
    pub curve_points: Option<usize>,
    pub reps: Option<usize>,
    pub n: Option<usize>,
    pub no_mre: Option<bool>,
    pub alpha: Option<f64>,
    pub knots: Option<String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::spec(path, single_line(&e.to_string())))
    }
}

/// Fully resolved options of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub fit: FitOptions,
    pub threads: Option<usize>,
    pub folds: usize,
    pub mre_kind: MreKind,
}

impl RunConfig {
    pub fn resolve(common: &CommonArgs, cv: Option<&CvFlags>, file: &ConfigFile) -> Result<Self> {
        let defaults = FitOptions::default();
        let optim = OptimOptions {
            tol_g: common.tol_g.or(file.tol_g).unwrap_or(defaults.optim.tol_g),
            tol_f: common.tol_f.or(file.tol_f).unwrap_or(defaults.optim.tol_f),
            ..defaults.optim
        };
        let fit = FitOptions {
            optim,
            eps_rel: common.eps.or(file.eps).unwrap_or(defaults.eps_rel),
            max_ebok_iter: common
                .max_ebok_iter
                .or(file.max_ebok_iter)
                .unwrap_or(defaults.max_ebok_iter),
            ..defaults
        };
        if !(fit.eps_rel > 0.0 && fit.eps_rel < 0.5) {
            return Err(CliError::Config(format!("--eps must lie in (0, 0.5), got {}", fit.eps_rel)));
        }
        if !(fit.optim.tol_g > 0.0) || !(fit.optim.tol_f > 0.0) {
            return Err(CliError::Config("--tol-g and --tol-f must be positive".into()));
        }
        if fit.max_ebok_iter == 0 {
            return Err(CliError::Config("--max-ebok-iter must be at least 1".into()));
        }
        let folds = cv
            .and_then(|c| c.folds)
            .or(file.folds)
            .unwrap_or(DEFAULT_FOLDS);
        if folds < 2 {
            return Err(CliError::Config("--folds must be at least 2".into()));
        }
        let threads = common.threads.or(file.threads);
        if threads == Some(0) {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        Ok(Self {
            seed: common.seed.or(file.seed).unwrap_or(0),
            out: common
                .out
                .clone()
                .or_else(|| file.out.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            fit,
            threads,
            folds,
            mre_kind: cv
                .and_then(|c| c.mre_kind)
                .or(file.mre_kind)
                .map_or(MreKind::Abs, MreKind::from),
        })
    }
}

/// `flag`, else the config value, else an error naming the flag.
pub fn required(flag: &Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| file.clone())
        .ok_or_else(|| CliError::Config(format!("missing --{name}")))
}

/// Parses `lo..hi` (inclusive).
pub fn parse_knot_range(text: &str) -> Result<(usize, usize)> {
    let err = || CliError::Config(format!("--knots expects lo..hi, got `{text}`"));
    let (lo, hi) = text.split_once("..").ok_or_else(err)?;
    let lo: usize = lo.trim().parse().map_err(|_| err())?;
    let hi: usize = hi.trim().parse().map_err(|_| err())?;
    if lo > hi {
        return Err(err());
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_documented_values() {
        let cfg =
            RunConfig::resolve(&CommonArgs::default(), None, &ConfigFile::default()).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.out, PathBuf::from(DEFAULT_OUT));
        assert_eq!(cfg.folds, 20);
        assert_eq!(cfg.mre_kind, MreKind::Abs);
        assert_eq!(cfg.fit, FitOptions::default());
    }

    #[test]
    fn flags_override_config_file() {
        let file: ConfigFile =
            toml::from_str("seed = 3\neps = 0.01\nfolds = 5\nmre-kind = \"sq\"\nmax-ebok-iter = 7")
                .unwrap();
        let common = CommonArgs {
            seed: Some(9),
            ..CommonArgs::default()
        };
        let cv = CvFlags {
            folds: Some(10),
            mre_kind: None,
        };
        let cfg = RunConfig::resolve(&common, Some(&cv), &file).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.fit.eps_rel, 0.01);
        assert_eq!(cfg.fit.max_ebok_iter, 7);
        assert_eq!(cfg.folds, 10);
        assert_eq!(cfg.mre_kind, MreKind::Sq);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let bad = [
            CommonArgs {
                eps: Some(0.0),
                ..CommonArgs::default()
            },
            CommonArgs {
                tol_g: Some(-1.0),
                ..CommonArgs::default()
            },
            CommonArgs {
                max_ebok_iter: Some(0),
                ..CommonArgs::default()
            },
        ];
        for c in bad {
            assert!(RunConfig::resolve(&c, None, &ConfigFile::default()).is_err());
        }
        assert!(toml::from_str::<ConfigFile>("colour = 1").is_err());
    }

    #[test]
    fn knot_ranges() {
        assert_eq!(parse_knot_range("1..3").unwrap(), (1, 3));
        assert!(parse_knot_range("3..1").is_err());
        assert!(parse_knot_range("3").is_err());
    }
}
