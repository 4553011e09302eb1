//! Report types: per-experiment outcomes with inequality margins, long-form
//! CSV rows and wide plot tables.

use crate::error::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

/// Tally of one asserted relation over many comparisons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub relation: String,
    pub comparisons: usize,
    pub violations: usize,
    /// Smallest (rhs − lhs)/max(|lhs|, |rhs|) seen; `None` for boolean checks.
    pub min_margin: Option<f64>,
    /// Instance holding the smallest margin or the first violation.
    pub worst_instance: Option<usize>,
    /// Relative slack allowed before a comparison counts as a violation.
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: &str, relation: &str, tolerance: f64) -> Self {
        Check {
            name: name.to_string(),
            relation: relation.to_string(),
            comparisons: 0,
            violations: 0,
            min_margin: None,
            worst_instance: None,
            tolerance,
            passed: true,
        }
    }

    /// Records lhs ≤ rhs, violated when lhs > rhs + tolerance·max(|lhs|, |rhs|).
    pub fn le(&mut self, instance: usize, lhs: f64, rhs: f64) {
        let scale = lhs.abs().max(rhs.abs());
        let margin = if scale > 0.0 {
            (rhs - lhs) / scale
        } else {
            0.0
        };
        let ok = lhs.is_finite() && rhs.is_finite() && lhs <= rhs + self.tolerance * scale;
        self.comparisons += 1;
        if !ok {
            if self.violations == 0 {
                self.worst_instance = Some(instance);
            }
            self.violations += 1;
            self.passed = false;
        }
        let margin = if margin.is_finite() { margin } else { f64::MIN };
        if self.min_margin.is_none_or(|m| margin < m) {
            self.min_margin = Some(margin);
            if self.violations == 0 {
                self.worst_instance = Some(instance);
            }
        }
    }

    /// Records lhs < rhs strictly.
    pub fn lt(&mut self, instance: usize, lhs: f64, rhs: f64) {
        let before = self.violations;
        self.le(instance, lhs, rhs);
        if self.violations == before && lhs >= rhs {
            self.violations += 1;
            self.passed = false;
            self.worst_instance = Some(instance);
        }
    }

    pub fn truth(&mut self, instance: usize, ok: bool) {
        self.comparisons += 1;
        if !ok {
            if self.violations == 0 {
                self.worst_instance = Some(instance);
            }
            self.violations += 1;
            self.passed = false;
        }
    }

    pub fn merge(&mut self, other: &Check) {
        let had_violation = self.violations > 0;
        let better = match (self.min_margin, other.min_margin) {
            (None, Some(_)) => true,
            (Some(a), Some(b)) => b < a,
            _ => false,
        };
        self.comparisons += other.comparisons;
        self.violations += other.violations;
        self.passed &= other.passed;
        if better {
            self.min_margin = other.min_margin;
        }
        if had_violation {
            return;
        }
        if other.violations > 0 || better || self.worst_instance.is_none() {
            self.worst_instance = other.worst_instance.or(self.worst_instance);
        }
    }
}

/// Ordered set of checks keyed by name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub checks: Vec<Check>,
}

impl Tally {
    /// The check called `name`, created with `relation` and `tolerance` on first use.
    pub fn get(&mut self, name: &str, relation: &str, tolerance: f64) -> &mut Check {
        match self.checks.iter().position(|c| c.name == name) {
            Some(i) => &mut self.checks[i],
            None => {
                self.checks.push(Check::new(name, relation, tolerance));
                self.checks.last_mut().expect("just pushed")
            }
        }
    }

    pub fn merge(&mut self, other: &Tally) {
        for c in &other.checks {
            match self.checks.iter_mut().find(|s| s.name == c.name) {
                Some(s) => s.merge(c),
                None => self.checks.push(c.clone()),
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// One long-form CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub experiment: String,
    pub instance: String,
    pub characteristic: String,
    pub value: f64,
}

/// A wide table meant for plotting, written as its own CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub id: String,
    pub title: String,
    pub passed: bool,
    pub instances: usize,
    pub checks: Vec<Check>,
    /// Headline numbers; keys starting with `kappa.` are compared against pins.
    pub measured: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    /// Names of the wide tables written next to the report.
    pub tables: Vec<String>,
    #[serde(skip)]
    pub rows: Vec<Row>,
    #[serde(skip)]
    pub table_data: Vec<Table>,
}

impl Outcome {
    pub fn new(id: &str, title: &str) -> Self {
        Outcome {
            id: id.to_string(),
            title: title.to_string(),
            passed: true,
            instances: 0,
            checks: Vec::new(),
            measured: BTreeMap::new(),
            notes: Vec::new(),
            tables: Vec::new(),
            rows: Vec::new(),
            table_data: Vec::new(),
        }
    }

    pub fn row(&mut self, instance: impl ToString, characteristic: &str, value: f64) {
        self.rows.push(Row {
            experiment: self.id.clone(),
            instance: instance.to_string(),
            characteristic: characteristic.to_string(),
            value,
        });
    }

    pub fn table(&mut self, table: Table) {
        self.tables.push(format!("{}_{}.csv", self.id, table.name));
        self.table_data.push(table);
    }

    /// Sets `checks` and `passed` from a tally.
    pub fn finish(mut self, tally: Tally) -> Self {
        self.passed = tally.passed();
        self.checks = tally.checks;
        self
    }

    /// Margin of a named check, for one-line summaries.
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PinStatus {
    Ok,
    Regressed,
    Improved,
    Unpinned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinVerdict {
    pub name: String,
    pub experiment: String,
    pub measured: f64,
    pub pinned: Option<f64>,
    pub status: PinStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiments: usize,
    pub passed: usize,
    pub failed: usize,
    pub warnings: Vec<String>,
    pub all_passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub seed: u64,
    pub name: String,
    pub experiments: Vec<Outcome>,
    pub pins: Vec<PinVerdict>,
    pub summary: Summary,
    /// Absent unless requested, so repeated runs stay byte-identical.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timestamp: Option<String>,
}

impl SuiteReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn experiment(&self, id: &str) -> Option<&Outcome> {
        self.experiments.iter().find(|e| e.id == id)
    }

    /// All long-form rows, in experiment order.
    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.experiments.iter().flat_map(|e| e.rows.iter())
    }
}

pub fn rows_to_csv<'a>(rows: impl IntoIterator<Item = &'a Row>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::Config(format!("csv: {e}")))?;
    }
    // header only when there are no rows
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Config(format!("csv: {e}")))?;
    let text = String::from_utf8(bytes).expect("csv output is utf-8");
    if text.is_empty() {
        return Ok("experiment,instance,characteristic,value\n".to_string());
    }
    Ok(text)
}

pub fn table_to_csv(t: &Table) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&t.columns)
        .map_err(|e| CliError::Config(format!("csv: {e}")))?;
    for r in &t.rows {
        w.write_record(r.iter().map(|v| format_value(*v)))
            .map_err(|e| CliError::Config(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn format_value(v: f64) -> String {
    format!("{v:?}")
}

/// Flattens a JSON value into (path, number) rows; strings and booleans map
/// to rows only when numeric (booleans become 0/1).
pub fn flatten_json(experiment: &str, value: &serde_json::Value) -> Vec<Row> {
    fn walk(prefix: String, v: &serde_json::Value, out: &mut Vec<(String, f64)>) {
        match v {
            serde_json::Value::Number(n) => {
                if let Some(x) = n.as_f64() {
                    out.push((prefix, x));
                }
            }
            serde_json::Value::Bool(b) => out.push((prefix, if *b { 1.0 } else { 0.0 })),
            serde_json::Value::Array(a) => {
                for (i, x) in a.iter().enumerate() {
                    walk(join(&prefix, &i.to_string()), x, out);
                }
            }
            serde_json::Value::Object(m) => {
                for (k, x) in m {
                    walk(join(&prefix, k), x, out);
                }
            }
            _ => {}
        }
    }
    fn join(a: &str, b: &str) -> String {
        if a.is_empty() {
            b.to_string()
        } else {
            format!("{a}.{b}")
        }
    }
    let mut flat = Vec::new();
    walk(String::new(), value, &mut flat);
    flat.into_iter()
        .map(|(k, v)| Row {
            experiment: experiment.to_string(),
            instance: "0".into(),
            characteristic: k,
            value: v,
        })
        .collect()
}

pub fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn le_tracks_margin_and_violations() {
        let mut c = Check::new("x", "a ≤ b", 0.0);
        c.le(0, 1.0, 2.0);
        c.le(1, 1.9, 2.0);
        assert!(c.passed);
        assert_eq!(c.worst_instance, Some(1));
        assert!((c.min_margin.unwrap() - 0.05).abs() < 1e-12);
        c.le(2, 3.0, 2.0);
        assert!(!c.passed);
        assert_eq!(c.violations, 1);
        assert_eq!(c.worst_instance, Some(2));
    }

    #[test]
    fn tolerance_absorbs_rounding() {
        let mut c = Check::new("x", "a ≤ b", 1e-12);
        c.le(0, 1.0 + 1e-15, 1.0);
        assert!(c.passed);
        let mut s = Check::new("y", "a < b", 0.0);
        s.lt(0, 1.0, 1.0);
        assert!(!s.passed);
    }

    #[test]
    fn nan_is_a_violation() {
        let mut c = Check::new("x", "a ≤ b", 0.0);
        c.le(0, f64::NAN, 1.0);
        assert!(!c.passed);
    }

    #[test]
    fn merge_keeps_first_violation() {
        let mut a = Tally::default();
        a.get("x", "≤", 0.0).le(0, 1.0, 2.0);
        let mut b = Tally::default();
        b.get("x", "≤", 0.0).le(5, 3.0, 2.0);
        b.get("y", "ok", 0.0).truth(5, true);
        a.merge(&b);
        assert_eq!(a.checks.len(), 2);
        assert_eq!(a.checks[0].violations, 1);
        assert_eq!(a.checks[0].worst_instance, Some(5));
        assert!(!a.passed());
    }

    #[test]
    fn empty_rows_still_have_header() {
        assert_eq!(
            rows_to_csv(std::iter::empty()).unwrap(),
            "experiment,instance,characteristic,value\n"
        );
    }

    #[test]
    fn flatten_paths() {
        let v = serde_json::json!({"a": 1.5, "b": [true, {"c": 2}], "s": "skip"});
        let rows = flatten_json("e", &v);
        let keys: Vec<_> = rows
            .iter()
            .map(|r| (r.characteristic.as_str(), r.value))
            .collect();
        assert_eq!(keys, vec![("a", 1.5), ("b.0", 1.0), ("b.1.c", 2.0)]);
    }
}
