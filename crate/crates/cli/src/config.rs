//! TOML experiment configuration.

use crate::error::{CliError, CliResult};
use dyadlab::dyadic::MeasurePreset;
use dyadlab::shifts::CoefficientLaw;
use dyadlab::weights::WeightPreset;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub tree: TreeSpec,
    #[serde(default)]
    pub haar: HaarSpec,
    #[serde(default)]
    pub shift: ShiftSpec,
    #[serde(default)]
    pub weight: WeightSpec,
    #[serde(default)]
    pub operations: Vec<Operation>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSpec {
    pub n: usize,
    pub depth: u32,
    /// Measure preset string, e.g. `random-balanced:bound=4,seed=1`.
    pub measure: String,
}

impl Default for TreeSpec {
    fn default() -> Self {
        TreeSpec {
            n: 1,
            depth: 5,
            measure: "lebesgue".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HaarSpec {
    /// Split axis for n ≥ 2: G₊ is the children with offset 1 along it.
    #[serde(default)]
    pub axis: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub s: u32,
    pub t: u32,
    /// `uniform`, `signs` or `non-degenerate:delta=0.5`.
    pub law: String,
    /// Rescale to max_Q ‖K_Q‖_∞ μ(Q) = value.
    #[serde(default)]
    pub l1_normalize: Option<f64>,
    /// Dimension of the random test function.
    #[serde(default = "one")]
    pub d: usize,
}

fn one() -> usize {
    1
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec {
            s: 1,
            t: 1,
            law: "uniform".into(),
            l1_normalize: None,
            d: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub d: usize,
    /// `independent:kappa_max=50` or `path-smooth:kappa_max=50,step=0.5`.
    pub preset: String,
    #[serde(default = "two")]
    pub p: f64,
}

fn two() -> f64 {
    2.0
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec {
            d: 2,
            preset: "independent:kappa_max=1000".into(),
            p: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Operation {
    pub id: String,
    #[serde(default)]
    pub params: toml::Table,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Output directory, relative to the config file; `--out` overrides it.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Pinned-constant table, relative to the config file.
    #[serde(default)]
    pub pins: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn measure_preset(&self) -> CliResult<MeasurePreset> {
        Ok(MeasurePreset::parse(&self.tree.measure)?)
    }
}

/// `key=value` pairs after an optional `kind:` prefix.
fn split_spec(spec: &str) -> (String, Vec<(String, String)>) {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let kv = rest
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let (k, v) = s.split_once('=').unwrap_or((s, ""));
            (k.trim().to_string(), v.trim().to_string())
        })
        .collect();
    (kind.trim().to_string(), kv)
}

fn number(key: &str, v: &str) -> CliResult<f64> {
    v.parse()
        .map_err(|_| CliError::Config(format!("{key}: '{v}' is not a number")))
}

pub fn parse_law(spec: &str) -> CliResult<CoefficientLaw> {
    let (kind, kv) = split_spec(spec);
    match kind.as_str() {
        "uniform" => Ok(CoefficientLaw::Uniform),
        "signs" => Ok(CoefficientLaw::Signs),
        "non-degenerate" => {
            let mut delta = 0.5;
            for (k, v) in kv {
                match k.as_str() {
                    "delta" => delta = number(&k, &v)?,
                    _ => return Err(CliError::Config(format!("unknown law parameter '{k}'"))),
                }
            }
            Ok(CoefficientLaw::NonDegenerate { delta })
        }
        _ => Err(CliError::Config(format!(
            "unknown coefficient law '{kind}'"
        ))),
    }
}

pub fn parse_weight_preset(spec: &str) -> CliResult<WeightPreset> {
    let (kind, kv) = split_spec(spec);
    let mut kappa_max = 1000.0;
    let mut step = 0.5;
    for (k, v) in kv {
        match k.as_str() {
            "kappa_max" => kappa_max = number(&k, &v)?,
            "step" if kind == "path-smooth" => step = number(&k, &v)?,
            _ => return Err(CliError::Config(format!("unknown weight parameter '{k}'"))),
        }
    }
    if kappa_max < 1.0 {
        return Err(CliError::Config(format!(
            "kappa_max = {kappa_max} must be ≥ 1"
        )));
    }
    match kind.as_str() {
        "independent" => Ok(WeightPreset::Independent { kappa_max }),
        "path-smooth" => Ok(WeightPreset::PathSmooth { kappa_max, step }),
        _ => Err(CliError::Config(format!("unknown weight preset '{kind}'"))),
    }
}

/// Typed access to an operation's parameter table; unknown keys are rejected.
pub struct Params<'a> {
    table: &'a toml::Table,
}

impl<'a> Params<'a> {
    pub fn new(table: &'a toml::Table, allowed: &[&str]) -> CliResult<Self> {
        if let Some(k) = table.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(CliError::Config(format!(
                "unknown parameter '{k}' (allowed: {})",
                allowed.join(", ")
            )));
        }
        Ok(Params { table })
    }

    pub fn usize(&self, key: &str, default: usize) -> CliResult<usize> {
        match self.table.get(key) {
            None => Ok(default),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
            Some(v) => Err(CliError::Config(format!(
                "{key}: expected a nonnegative integer, got {v}"
            ))),
        }
    }

    pub fn f64(&self, key: &str, default: f64) -> CliResult<f64> {
        match self.table.get(key) {
            None => Ok(default),
            Some(toml::Value::Float(x)) => Ok(*x),
            Some(toml::Value::Integer(i)) => Ok(*i as f64),
            Some(v) => Err(CliError::Config(format!(
                "{key}: expected a number, got {v}"
            ))),
        }
    }

    pub fn f64_list(&self, key: &str, default: &[f64]) -> CliResult<Vec<f64>> {
        match self.table.get(key) {
            None => Ok(default.to_vec()),
            Some(toml::Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    toml::Value::Float(x) => Ok(*x),
                    toml::Value::Integer(i) => Ok(*i as f64),
                    _ => Err(CliError::Config(format!("{key}: expected numbers"))),
                })
                .collect(),
            Some(v) => Err(CliError::Config(format!(
                "{key}: expected an array, got {v}"
            ))),
        }
    }

    pub fn string(&self, key: &str, default: &str) -> CliResult<String> {
        match self.table.get(key) {
            None => Ok(default.to_string()),
            Some(toml::Value::String(s)) => Ok(s.clone()),
            Some(v) => Err(CliError::Config(format!(
                "{key}: expected a string, got {v}"
            ))),
        }
    }

    pub fn string_list(&self, key: &str, default: &[&str]) -> CliResult<Vec<String>> {
        match self.table.get(key) {
            None => Ok(default.iter().map(|s| s.to_string()).collect()),
            Some(toml::Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    toml::Value::String(s) => Ok(s.clone()),
                    _ => Err(CliError::Config(format!("{key}: expected strings"))),
                })
                .collect(),
            Some(v) => Err(CliError::Config(format!(
                "{key}: expected an array, got {v}"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let c = ExperimentConfig::parse("schema_version = 1\nseed = 7\n").unwrap();
        assert_eq!(c.seed, 7);
        assert!(c.operations.is_empty());
        assert_eq!(c.tree, TreeSpec::default());
    }

    #[test]
    fn unknown_fields_and_versions_are_rejected() {
        assert!(ExperimentConfig::parse("schema_version = 1\nseed = 7\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::parse("schema_version = 9\nseed = 7\n").is_err());
        assert!(ExperimentConfig::parse("seed = 7\n").is_err());
    }

    #[test]
    fn operations_carry_params() {
        let c = ExperimentConfig::parse(
            "schema_version = 1\nseed = 1\n[[operations]]\nid = \"haar_validity\"\nparams = { measures = 3 }\n",
        )
        .unwrap();
        let p = Params::new(&c.operations[0].params, &["measures"]).unwrap();
        assert_eq!(p.usize("measures", 100).unwrap(), 3);
        assert!(Params::new(&c.operations[0].params, &["other"]).is_err());
    }

    #[test]
    fn presets_parse() {
        assert_eq!(
            parse_law("non-degenerate:delta=0.5").unwrap(),
            CoefficientLaw::NonDegenerate { delta: 0.5 }
        );
        assert_eq!(
            parse_weight_preset("path-smooth:kappa_max=10,step=0.25").unwrap(),
            WeightPreset::PathSmooth {
                kappa_max: 10.0,
                step: 0.25
            }
        );
        assert!(parse_weight_preset("independent:step=1").is_err());
        assert!(parse_law("cauchy").is_err());
    }
}
