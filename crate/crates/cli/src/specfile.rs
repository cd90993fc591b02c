//! Model specification files (TOML). Covariates are referred to by their CSV
//! column name; see `docs/model-spec.md` for the schema.

use std::path::Path;

use serde::{Deserialize, Serialize};
use zispline::{
    ComponentSpec, Family, KnotPlacement, KnotRegime, ModelSpec, SplineSpec, TermKind, TermSpec,
};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub family: Family,
    #[serde(default)]
    pub count: ComponentFile,
    #[serde(default)]
    pub zero: ComponentFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentFile {
    #[serde(default = "yes")]
    pub intercept: bool,
    #[serde(default)]
    pub terms: Vec<TermFile>,
}

impl Default for ComponentFile {
    fn default() -> Self {
        Self {
            intercept: true,
            terms: Vec::new(),
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindName {
    Linear,
    Spline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlacementName {
    Quantile,
    Equidistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermFile {
    pub column: String,
    pub kind: KindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<KnotRegime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub natural: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<PlacementName>,
    /// Explicit interior knots (starting knots for variable regimes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locations: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<[f64; 2]>,
}

impl TermFile {
    pub fn linear(column: &str) -> Self {
        Self {
            column: column.to_string(),
            kind: KindName::Linear,
            degree: None,
            knots: None,
            regime: None,
            natural: None,
            placement: None,
            locations: None,
            boundary: None,
        }
    }

    pub fn spline(column: &str, degree: usize, knots: usize, regime: KnotRegime, natural: bool) -> Self {
        Self {
            kind: KindName::Spline,
            degree: Some(degree),
            knots: Some(knots),
            regime: Some(regime),
            natural: natural.then_some(true),
            ..Self::linear(column)
        }
    }
}

pub fn read_spec(path: &Path) -> Result<SpecFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_spec(&text, path)
}

pub fn parse_spec(text: &str, path: &Path) -> Result<SpecFile> {
    toml::from_str(text).map_err(|e| CliError::spec(path, single_line(&e.to_string())))
}

pub(crate) fn single_line(msg: &str) -> String {
    msg.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

impl SpecFile {
    /// Resolves column names against `names` (the covariate header fields).
    pub fn to_model(&self, names: &[String]) -> std::result::Result<ModelSpec, String> {
        let component = |c: &ComponentFile, which: &str| -> std::result::Result<ComponentSpec, String> {
            let terms = c
                .terms
                .iter()
                .enumerate()
                .map(|(i, t)| term_to_model(t, names).map_err(|e| format!("{which}.terms[{i}]: {e}")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(ComponentSpec::with_terms(c.intercept, terms))
        };
        let count = component(&self.count, "count")?;
        let zero = if self.family.zero_inflated() {
            component(&self.zero, "zero")?
        } else {
            if !self.zero.terms.is_empty() {
                return Err(format!(
                    "family {} has no zero component but zero.terms is not empty",
                    self.family.name()
                ));
            }
            ComponentSpec::default()
        };
        Ok(ModelSpec {
            family: self.family,
            count,
            zero,
        })
    }

    /// Inverse of [`Self::to_model`]; explicit knots and boundaries are kept.
    pub fn from_model(spec: &ModelSpec, names: &[String]) -> Self {
        let component = |c: &ComponentSpec| ComponentFile {
            intercept: c.intercept,
            terms: c.terms.iter().map(|t| term_from_model(t, names)).collect(),
        };
        Self {
            family: spec.family,
            count: component(&spec.count),
            zero: if spec.family.zero_inflated() {
                component(&spec.zero)
            } else {
                ComponentFile::default()
            },
        }
    }
}

fn term_to_model(t: &TermFile, names: &[String]) -> std::result::Result<TermSpec, String> {
    let covariate = names
        .iter()
        .position(|n| *n == t.column)
        .ok_or_else(|| format!("unknown column `{}`", t.column))?;
    match t.kind {
        KindName::Linear => {
            let extra = [
                ("degree", t.degree.is_some()),
                ("knots", t.knots.is_some()),
                ("regime", t.regime.is_some()),
                ("natural", t.natural.is_some()),
                ("placement", t.placement.is_some()),
                ("locations", t.locations.is_some()),
                ("boundary", t.boundary.is_some()),
            ];
            if let Some((key, _)) = extra.iter().find(|(_, set)| *set) {
                return Err(format!("`{key}` only applies to spline terms"));
            }
            Ok(TermSpec::linear(covariate))
        }
        KindName::Spline => {
            let degree = t.degree.unwrap_or(3);
            let knots = match (t.knots, &t.locations) {
                (Some(k), Some(l)) if k != l.len() => {
                    return Err(format!("knots = {k} but {} locations given", l.len()))
                }
                (Some(k), _) => k,
                (None, Some(l)) => l.len(),
                (None, None) => return Err("spline terms need `knots` or `locations`".into()),
            };
            let placement = match (&t.locations, t.placement) {
                (Some(_), Some(_)) => {
                    return Err("give either `placement` or `locations`, not both".into())
                }
                (Some(l), None) => KnotPlacement::Explicit(l.clone()),
                (None, Some(PlacementName::Equidistant)) => KnotPlacement::Equidistant,
                (None, _) => KnotPlacement::Quantile,
            };
            let mut s = SplineSpec::new(degree, knots, t.regime.unwrap_or(KnotRegime::Fixed))
                .placed(placement);
            if t.natural.unwrap_or(false) {
                s = s.natural();
            }
            if let Some([a, b]) = t.boundary {
                s = s.on(a, b);
            }
            Ok(TermSpec::spline(covariate, s))
        }
    }
}

fn term_from_model(t: &TermSpec, names: &[String]) -> TermFile {
    let column = &names[t.covariate];
    match &t.kind {
        TermKind::Linear => TermFile::linear(column),
        TermKind::Spline(s) => {
            let mut out = TermFile::spline(column, s.degree, s.knots, s.regime, s.natural);
            match &s.placement {
                KnotPlacement::Quantile => out.placement = Some(PlacementName::Quantile),
                KnotPlacement::Equidistant => out.placement = Some(PlacementName::Equidistant),
                KnotPlacement::Explicit(v) => out.locations = Some(v.clone()),
            }
            out.boundary = s.boundary.map(|(a, b)| [a, b]);
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["bmi".into(), "sweets".into()]
    }

    fn parse(text: &str) -> Result<SpecFile> {
        parse_spec(text, Path::new("m.toml"))
    }

    #[test]
    fn parses_full_schema() {
        let text = r#"
family = "zinb"
[count]
terms = [
  { column = "bmi", kind = "spline", degree = 3, knots = 2, regime = "variable" },
  { column = "sweets", kind = "linear" },
]
[zero]
intercept = true
terms = [{ column = "bmi", kind = "spline", degree = 1, knots = 1, placement = "equidistant", boundary = [10, 40] }]
"#;
        let spec = parse(text).unwrap().to_model(&names()).unwrap();
        assert_eq!(spec.family, Family::Zinb);
        assert!(spec.has_variable_knots());
        assert_eq!(spec.count.terms[1], TermSpec::linear(1));
        let TermKind::Spline(z) = &spec.zero.terms[0].kind else {
            panic!("expected spline")
        };
        assert_eq!(z.placement, KnotPlacement::Equidistant);
        assert_eq!(z.boundary, Some((10.0, 40.0)));
    }

    #[test]
    fn defaults_apply() {
        let spec = parse("family = \"zip\"").unwrap().to_model(&names()).unwrap();
        assert!(spec.count.intercept && spec.zero.intercept);
        assert!(spec.count.terms.is_empty());
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = [
            "family = \"gauss\"",
            "family = \"zip\"\ncolour = 1",
            "family = \"zip\"\n[count]\nterms=[{column=\"bmi\", kind=\"curve\"}]",
        ];
        for text in bad {
            assert!(parse(text).is_err(), "{text}");
        }
        let resolve_bad = [
            "family = \"zip\"\n[count]\nterms=[{column=\"age\", kind=\"linear\"}]",
            "family = \"zip\"\n[count]\nterms=[{column=\"bmi\", kind=\"linear\", degree=3}]",
            "family = \"zip\"\n[count]\nterms=[{column=\"bmi\", kind=\"spline\"}]",
            "family = \"zip\"\n[count]\nterms=[{column=\"bmi\", kind=\"spline\", knots=2, locations=[1]}]",
            "family = \"poisson\"\n[zero]\nterms=[{column=\"bmi\", kind=\"linear\"}]",
        ];
        for text in resolve_bad {
            assert!(parse(text).unwrap().to_model(&names()).is_err(), "{text}");
        }
    }

    #[test]
    fn model_round_trip() {
        let s = SplineSpec::new(3, 2, KnotRegime::Variable)
            .placed(KnotPlacement::Explicit(vec![20.0, 24.0]))
            .on(12.0, 32.0)
            .natural();
        let spec = ModelSpec {
            family: Family::Zip,
            count: ComponentSpec::with_terms(false, vec![TermSpec::spline(0, s), TermSpec::linear(1)]),
            zero: ComponentSpec::with_terms(true, vec![TermSpec::linear(0)]),
        };
        let file = SpecFile::from_model(&spec, &names());
        let text = toml::to_string(&file).unwrap();
        let back = parse(&text).unwrap().to_model(&names()).unwrap();
        assert_eq!(back, spec);
    }
}
