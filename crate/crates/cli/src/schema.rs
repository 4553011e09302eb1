//! Validation of reports against the shipped JSON schema.

use crate::error::{CliError, CliResult};

pub const REPORT_SCHEMA: &str = include_str!("../../../schema/report.schema.json");

pub fn validate_report(report: &serde_json::Value) -> CliResult<()> {
    let schema: serde_json::Value =
        serde_json::from_str(REPORT_SCHEMA).expect("shipped schema is valid JSON");
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("shipped schema compiles");
    if let Err(errors) = compiled.validate(report) {
        let msgs: Vec<String> = errors
            .map(|e| format!("{}: {e}", e.instance_path))
            .collect();
        return Err(CliError::Config(format!(
            "report does not match schema: {}",
            msgs.join("; ")
        )));
    }
    Ok(())
}
