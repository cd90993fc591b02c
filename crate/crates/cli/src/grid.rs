//! Model grids: named axes of options expanded to their cartesian product.
//!
//! ```toml
//! top = 10
//! [axes]
//! family = ["zip", "zinb"]
//! "count.bmi" = ["linear", "spline:3:2:variable", "spline:3:3:fixed:natural"]
//! "count.sweets" = ["none", "linear"]
//! "zero.bmi" = ["none", "linear"]
//! ```

use std::path::Path;

use serde::Deserialize;
use zispline::{ComponentSpec, Family, KnotRegime, ModelSpec, SplineSpec, TermKind, TermSpec};

use crate::error::{CliError, Result};
use crate::specfile::single_line;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    #[serde(default)]
    pub top: Option<usize>,
    pub axes: toml::Table,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    pub label: String,
    pub spec: ModelSpec,
}

#[derive(Debug, Clone, PartialEq)]
enum TermOption {
    None,
    Linear,
    Spline {
        degree: usize,
        knots: usize,
        regime: KnotRegime,
        natural: bool,
    },
}

#[derive(Debug, Clone)]
enum Axis {
    Family(Vec<Family>),
    Term {
        zero: bool,
        covariate: usize,
        options: Vec<(String, TermOption)>,
    },
}

pub fn read_grid(path: &Path) -> Result<GridFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::spec(path, single_line(&e.to_string())))
}

fn parse_option(text: &str) -> std::result::Result<TermOption, String> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        ["none"] => Ok(TermOption::None),
        ["linear"] => Ok(TermOption::Linear),
        ["spline", deg, m, regime, rest @ ..] => {
            let degree = deg
                .parse()
                .map_err(|_| format!("bad degree `{deg}` in `{text}`"))?;
            let knots = m
                .parse()
                .map_err(|_| format!("bad knot count `{m}` in `{text}`"))?;
            let regime = match *regime {
                "fixed" => KnotRegime::Fixed,
                "variable" => KnotRegime::Variable,
                other => return Err(format!("bad regime `{other}` in `{text}`")),
            };
            let natural = match rest {
                [] => false,
                ["natural"] => true,
                _ => return Err(format!("trailing fields in `{text}`")),
            };
            Ok(TermOption::Spline {
                degree,
                knots,
                regime,
                natural,
            })
        }
        _ => Err(format!(
            "`{text}` is not none, linear or spline:<degree>:<knots>:<fixed|variable>[:natural]"
        )),
    }
}

fn strings(axis: &str, value: &toml::Value) -> Result<Vec<String>> {
    let err = |message: String| CliError::Grid {
        axis: axis.to_string(),
        message,
    };
    let arr = value
        .as_array()
        .ok_or_else(|| err("expected an array of strings".into()))?;
    if arr.is_empty() {
        return Err(err("no options".into()));
    }
    arr.iter()
        .map(|v| {
            v.as_str()
                .map(String::from)
                .ok_or_else(|| err(format!("option {v} is not a string")))
        })
        .collect()
}

fn parse_axes(grid: &GridFile, names: &[String]) -> Result<Vec<(String, Axis)>> {
    let mut axes = Vec::new();
    for (key, value) in &grid.axes {
        let err = |message: String| CliError::Grid {
            axis: key.clone(),
            message,
        };
        let opts = strings(key, value)?;
        let axis = if key == "family" {
            let fams = opts
                .iter()
                .map(|o| match o.as_str() {
                    "poisson" => Ok(Family::Poisson),
                    "negbin" => Ok(Family::NegBin),
                    "zip" => Ok(Family::Zip),
                    "zinb" => Ok(Family::Zinb),
                    other => Err(err(format!("unknown family `{other}`"))),
                })
                .collect::<Result<Vec<_>>>()?;
            Axis::Family(fams)
        } else {
            let (zero, column) = match key.split_once('.') {
                Some(("count", c)) => (false, c),
                Some(("zero", c)) => (true, c),
                _ => {
                    return Err(err(
                        "axis names are `family`, `count.<column>` or `zero.<column>`".into(),
                    ))
                }
            };
            let covariate = names
                .iter()
                .position(|n| n == column)
                .ok_or_else(|| err(format!("unknown column `{column}`")))?;
            let options = opts
                .into_iter()
                .map(|o| parse_option(&o).map(|p| (o, p)).map_err(&err))
                .collect::<Result<Vec<_>>>()?;
            Axis::Term {
                zero,
                covariate,
                options,
            }
        };
        axes.push((key.clone(), axis));
    }
    Ok(axes)
}

/// All distinct models of the grid, last axis varying fastest. Zero-axis
/// choices collapse for families without zero inflation.
pub fn expand(grid: &GridFile, names: &[String]) -> Result<Vec<GridModel>> {
    let axes = parse_axes(grid, names)?;
    let sizes: Vec<usize> = axes
        .iter()
        .map(|(_, a)| match a {
            Axis::Family(f) => f.len(),
            Axis::Term { options, .. } => options.len(),
        })
        .collect();
    let total: usize = sizes.iter().product();
    let mut out: Vec<GridModel> = Vec::new();
    for flat in 0..total {
        let mut idx = vec![0; axes.len()];
        let mut rest = flat;
        for k in (0..axes.len()).rev() {
            idx[k] = rest % sizes[k];
            rest /= sizes[k];
        }
        let mut family = Family::Zip;
        let mut count = Vec::new();
        let mut zero = Vec::new();
        let mut count_label = Vec::new();
        let mut zero_label = Vec::new();
        for ((_, axis), &i) in axes.iter().zip(&idx) {
            match axis {
                Axis::Family(f) => family = f[i],
                Axis::Term {
                    zero: z,
                    covariate,
                    options,
                } => {
                    let (text, opt) = &options[i];
                    let term = match opt {
                        TermOption::None => continue,
                        TermOption::Linear => TermSpec::linear(*covariate),
                        TermOption::Spline {
                            degree,
                            knots,
                            regime,
                            natural,
                        } => {
                            let mut s = SplineSpec::new(*degree, *knots, *regime);
                            if *natural {
                                s = s.natural();
                            }
                            TermSpec::spline(*covariate, s)
                        }
                    };
                    let label = format!("{}={text}", names[*covariate]);
                    if *z {
                        zero.push(term);
                        zero_label.push(label);
                    } else {
                        count.push(term);
                        count_label.push(label);
                    }
                }
            }
        }
        if !family.zero_inflated() {
            zero.clear();
            zero_label.clear();
        }
        let spec = ModelSpec {
            family,
            count: ComponentSpec::with_terms(true, count),
            zero: if family.zero_inflated() {
                ComponentSpec::with_terms(true, zero)
            } else {
                ComponentSpec::default()
            },
        };
        if out.iter().any(|m| m.spec == spec) {
            continue;
        }
        let mut label = format!("{} count[{}]", family.name(), count_label.join(","));
        if family.zero_inflated() {
            label.push_str(&format!(" zero[{}]", zero_label.join(",")));
        }
        out.push(GridModel { label, spec });
    }
    Ok(out)
}

/// True when no term of either component is a spline.
pub fn is_pure_linear(spec: &ModelSpec) -> bool {
    spec.count
        .terms
        .iter()
        .chain(&spec.zero.terms)
        .all(|t| matches!(t.kind, TermKind::Linear))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        ["bmi", "sweets"].iter().map(|s| s.to_string()).collect()
    }

    fn grid(text: &str) -> GridFile {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn cartesian_product_in_axis_order() {
        let g = grid(
            r#"
[axes]
family = ["zip", "zinb"]
"count.bmi" = ["linear", "spline:3:2:variable", "spline:3:3:fixed:natural"]
"count.sweets" = ["none", "linear"]
"#,
        );
        let models = expand(&g, &names()).unwrap();
        assert_eq!(models.len(), 12);
        assert_eq!(models[0].label, "zip count[bmi=linear] zero[]");
        assert_eq!(models[1].label, "zip count[bmi=linear,sweets=linear] zero[]");
        assert_eq!(models[11].spec.family, Family::Zinb);
        let TermKind::Spline(s) = &models[11].spec.count.terms[0].kind else {
            panic!("expected spline")
        };
        assert!(s.natural && s.knots == 3 && s.regime == KnotRegime::Fixed);
    }

    #[test]
    fn zero_axes_collapse_without_inflation() {
        let g = grid(
            r#"
[axes]
family = ["poisson", "zip"]
"zero.bmi" = ["none", "linear"]
"#,
        );
        let models = expand(&g, &names()).unwrap();
        assert_eq!(models.len(), 3);
    }

    #[test]
    fn errors_name_the_axis() {
        let cases = [
            ("[axes]\n\"count.bmi\" = [\"spline:3:x:fixed\"]", "count.bmi"),
            ("[axes]\n\"count.age\" = [\"linear\"]", "count.age"),
            ("[axes]\nfamily = [\"gauss\"]", "family"),
            ("[axes]\n\"zero.bmi\" = []", "zero.bmi"),
            ("[axes]\n\"count.sweets\" = \"linear\"", "count.sweets"),
            ("[axes]\nbmi = [\"linear\"]", "`bmi`"),
        ];
        for (text, axis) in cases {
            let msg = expand(&grid(text), &names()).unwrap_err().to_string();
            assert!(msg.contains(axis), "{msg}");
        }
    }

    #[test]
    fn option_syntax() {
        assert_eq!(parse_option("none"), Ok(TermOption::None));
        assert!(parse_option("spline:1:4:variable").is_ok());
        assert!(parse_option("spline:1:4").is_err());
        assert!(parse_option("spline:1:4:fixed:natural:x").is_err());
        assert!(parse_option("quadratic").is_err());
    }
}
