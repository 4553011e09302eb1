//! Pinned constants: a versioned TOML table of κ values guarding against
//! regressions.

use crate::error::{CliError, CliResult};
use crate::report::{Outcome, PinStatus, PinVerdict};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const PINS_SCHEMA_VERSION: u32 = 1;
/// A run exceeding its pin by more than this factor fails.
pub const REGRESSION_FACTOR: f64 = 1.05;
/// A run below this fraction of its pin suggests refreshing the pin.
pub const IMPROVEMENT_FACTOR: f64 = 0.8;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pins {
    pub schema_version: u32,
    /// κ name (without the `kappa.` prefix) to pinned value.
    #[serde(default)]
    pub kappa: BTreeMap<String, f64>,
}

impl Pins {
    pub fn parse(text: &str) -> CliResult<Self> {
        let p: Pins = toml::from_str(text).map_err(|e| CliError::Config(format!("pins: {e}")))?;
        if p.schema_version != PINS_SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "pins: unsupported schema_version {}",
                p.schema_version
            )));
        }
        if let Some((k, v)) = p.kappa.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(CliError::Config(format!(
                "pins: {k} = {v} must be finite and non-negative"
            )));
        }
        Ok(p)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        let mut out = String::from(
            "# Pinned suite constants. A run fails when a value exceeds its pin by\n\
             # more than 5% and warns when it drops more than 20% below it.\n",
        );
        out.push_str(&format!(
            "schema_version = {}\n\n[kappa]\n",
            self.schema_version
        ));
        for (k, v) in &self.kappa {
            out.push_str(&format!("{k} = {v:?}\n"));
        }
        out
    }

    /// Pins taken from the `kappa.*` entries of the given outcomes.
    pub fn from_outcomes(outcomes: &[Outcome]) -> Self {
        let kappa = outcomes
            .iter()
            .flat_map(|o| o.measured.iter())
            .filter_map(|(k, v)| k.strip_prefix("kappa.").map(|n| (n.to_string(), *v)))
            .collect();
        Pins {
            schema_version: PINS_SCHEMA_VERSION,
            kappa,
        }
    }

    pub fn compare(&self, outcomes: &[Outcome]) -> Vec<PinVerdict> {
        let mut out = Vec::new();
        for o in outcomes {
            for (k, &measured) in &o.measured {
                let Some(name) = k.strip_prefix("kappa.") else {
                    continue;
                };
                let pinned = self.kappa.get(name).copied();
                let status = match pinned {
                    None => PinStatus::Unpinned,
                    Some(p) if !(measured <= REGRESSION_FACTOR * p) => PinStatus::Regressed,
                    Some(p) if measured < IMPROVEMENT_FACTOR * p => PinStatus::Improved,
                    Some(_) => PinStatus::Ok,
                };
                out.push(PinVerdict {
                    name: name.to_string(),
                    experiment: o.id.clone(),
                    measured,
                    pinned,
                    status,
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(v: f64) -> Outcome {
        let mut o = Outcome::new("e", "e");
        o.measured.insert("kappa.x".into(), v);
        o.measured.insert("other".into(), 3.0);
        o
    }

    #[test]
    fn thresholds() {
        let pins = Pins {
            schema_version: 1,
            kappa: [("x".to_string(), 1.0)].into(),
        };
        let status = |v| pins.compare(&[outcome(v)])[0].status.clone();
        assert_eq!(status(1.0), PinStatus::Ok);
        assert_eq!(status(1.049), PinStatus::Ok);
        assert_eq!(status(1.06), PinStatus::Regressed);
        assert_eq!(status(0.81), PinStatus::Ok);
        assert_eq!(status(0.7), PinStatus::Improved);
        assert_eq!(status(f64::NAN), PinStatus::Regressed);
        assert_eq!(
            Pins::default().compare(&[outcome(1.0)])[0].status,
            PinStatus::Unpinned
        );
    }

    #[test]
    fn toml_round_trip() {
        let pins = Pins::from_outcomes(&[outcome(1.2345678901234567)]);
        assert_eq!(pins.kappa.len(), 1);
        assert_eq!(Pins::parse(&pins.to_toml()).unwrap(), pins);
    }

    #[test]
    fn bad_pins_rejected() {
        assert!(Pins::parse("schema_version = 2\n").is_err());
        assert!(Pins::parse("schema_version = 1\n[kappa]\nx = -1.0\n").is_err());
    }
}
