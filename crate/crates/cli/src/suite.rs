//! Suite orchestration: runs configured operations on a worker pool, compares
//! κ values against pins and writes the report files.

use crate::config::{ExperimentConfig, Operation};
use crate::criteria::{self, Context};
use crate::error::{CliError, CliResult};
use crate::ops;
use crate::pins::Pins;
use crate::report::{
    rows_to_csv, table_to_csv, write_file, Outcome, PinStatus, SuiteReport, Summary, SCHEMA_VERSION,
};
use crate::schema::validate_report;
use rayon::prelude::*;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Default)]
pub struct SuiteOptions {
    /// Worker threads; 0 uses one per core.
    pub jobs: usize,
    /// Overrides `output.dir` from the config.
    pub out_dir: Option<PathBuf>,
    /// Overrides `output.pins` from the config.
    pub pins: Option<PathBuf>,
    /// Replace the pins file with this run's κ values.
    pub write_pins: bool,
    /// Add an RFC 3339 timestamp to the report.
    pub timestamp: Option<String>,
}

enum Runner {
    Experiment(&'static criteria::Experiment),
    Op(ops::SuiteOp),
}

fn resolve(op: &Operation) -> CliResult<Runner> {
    if let Some(e) = criteria::find(&op.id) {
        return Ok(Runner::Experiment(e));
    }
    if let Some(o) = ops::SuiteOp::parse(&op.id) {
        return Ok(Runner::Op(o));
    }
    let known: Vec<&str> = criteria::EXPERIMENTS
        .iter()
        .map(|e| e.id)
        .chain(ops::SuiteOp::IDS.iter().copied())
        .collect();
    Err(CliError::Config(format!(
        "unknown operation '{}' (known: {})",
        op.id,
        known.join(", ")
    )))
}

fn relative(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Runs every operation of `config`; relative paths resolve against `base_dir`.
pub fn run_suite(
    config: &ExperimentConfig,
    base_dir: &Path,
    opts: &SuiteOptions,
) -> CliResult<SuiteReport> {
    let runners = config
        .operations
        .iter()
        .map(resolve)
        .collect::<CliResult<Vec<_>>>()?;
    let pins_path = opts
        .pins
        .clone()
        .or_else(|| config.output.pins.as_ref().map(|p| relative(base_dir, p)));
    let pins = match (&pins_path, opts.write_pins) {
        (Some(p), false) => Some(Pins::load(p)?),
        _ => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let mut outcomes = pool.install(|| {
        config
            .operations
            .par_iter()
            .zip(runners.par_iter())
            .map(|(op, runner)| -> CliResult<Outcome> {
                match runner {
                    Runner::Experiment(e) => {
                        let ctx = Context {
                            seed: config.seed,
                            params: &op.params,
                            base_dir,
                        };
                        let mut out = (e.run)(&ctx)?;
                        out.title = e.title.to_string();
                        Ok(out)
                    }
                    Runner::Op(o) => o.run(config, &op.params),
                }
            })
            .collect::<CliResult<Vec<_>>>()
    })?;

    let mut warnings = Vec::new();
    let verdicts = if opts.write_pins {
        let fresh = Pins::from_outcomes(&outcomes);
        let path =
            pins_path.ok_or_else(|| CliError::Config("--write-pins needs a pins path".into()))?;
        write_file(&path, &fresh.to_toml())?;
        fresh.compare(&outcomes)
    } else {
        pins.as_ref().map_or_else(
            || Pins::default().compare(&outcomes),
            |p| p.compare(&outcomes),
        )
    };
    for v in &verdicts {
        let fails = match v.status {
            PinStatus::Regressed => true,
            PinStatus::Unpinned => pins.is_some(),
            PinStatus::Ok => false,
            PinStatus::Improved => {
                warnings.push(format!(
                    "{}: κ {} = {:.6} is more than 20% below its pin {:.6}; consider refreshing the pin",
                    v.experiment,
                    v.name,
                    v.measured,
                    v.pinned.unwrap_or(f64::NAN)
                ));
                false
            }
        };
        if v.status == PinStatus::Unpinned {
            warnings.push(format!(
                "{}: κ {} = {:.6} has no pin",
                v.experiment, v.name, v.measured
            ));
        }
        if fails {
            if let Some(o) = outcomes.iter_mut().find(|o| o.id == v.experiment) {
                o.passed = false;
                o.notes
                    .push(format!("pin {} is {:?}", v.name, v.status).to_lowercase());
            }
        }
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    let report = SuiteReport {
        schema_version: SCHEMA_VERSION,
        seed: config.seed,
        name: config.name.clone(),
        summary: Summary {
            experiments: outcomes.len(),
            passed,
            failed: outcomes.len() - passed,
            warnings,
            all_passed: passed == outcomes.len(),
        },
        experiments: outcomes,
        pins: verdicts,
        timestamp: opts.timestamp.clone(),
    };
    let value = serde_json::to_value(&report).expect("report serializes");
    validate_report(&value)?;
    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| config.output.dir.as_ref().map(|d| relative(base_dir, d)));
    if let Some(dir) = out_dir {
        write_outputs(&report, &dir)?;
    }
    Ok(report)
}

/// report.json, rows.csv with every long-form row, and one CSV per table.
pub fn write_outputs(report: &SuiteReport, dir: &Path) -> CliResult<()> {
    write_file(&dir.join("report.json"), &report.to_json())?;
    write_file(&dir.join("rows.csv"), &rows_to_csv(report.rows())?)?;
    for e in &report.experiments {
        for (name, t) in e.tables.iter().zip(&e.table_data) {
            write_file(&dir.join(name), &table_to_csv(t)?)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_operation_list_gives_empty_passing_report() {
        let cfg = ExperimentConfig::parse("schema_version = 1\nseed = 1\n").unwrap();
        let r = run_suite(
            &cfg,
            Path::new("."),
            &SuiteOptions {
                jobs: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.experiments.is_empty());
        assert!(r.summary.all_passed);
    }

    #[test]
    fn unknown_operation_is_rejected_before_running() {
        let cfg = ExperimentConfig::parse(
            "schema_version = 1\nseed = 1\n[[operations]]\nid = \"nope\"\n",
        )
        .unwrap();
        let err = run_suite(&cfg, Path::new("."), &SuiteOptions::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_pins_file_is_a_config_error() {
        let cfg = ExperimentConfig::parse(
            "schema_version = 1\nseed = 1\n[output]\npins = \"/nonexistent/pins.toml\"\n",
        )
        .unwrap();
        let err = run_suite(&cfg, Path::new("."), &SuiteOptions::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
