//! End-to-end tests of the `dyadlab` binary.

use dyadlab_cli::schema::validate_report;
use serde_json::Value;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
schema_version = 1
seed = 7
name = "small"

[tree]
n = 1
depth = 5
measure = "random-balanced:bound=3,seed=2"

[[operations]]
id = "haar_validity"
params = { measures = 8 }

[[operations]]
id = "necessity"
params = { weights = 2, pairs_per_weight = 2 }

[[operations]]
id = "sparse_build"
"#;

fn dyadlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyadlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn suite(config: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["suite", "--config", config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    dyadlab(&args)
}

#[test]
fn repeated_runs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(suite(&cfg, &a, &[]).status.code(), Some(0));
    assert_eq!(suite(&cfg, &b, &["--jobs", "2"]).status.code(), Some(0));
    for f in ["report.json", "rows.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn report_validates_against_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = suite(
        &cfg,
        &dir.path().join("o"),
        &["--timestamp", "2024-01-01T00:00:00Z"],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    validate_report(&report).unwrap();
    assert_eq!(report["summary"]["experiments"], 3);
    assert_eq!(report["timestamp"], "2024-01-01T00:00:00Z");
}

#[test]
fn empty_operation_list_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "empty.toml",
        "schema_version = 1\nseed = 1\noperations = []\n",
    );
    let out = suite(&cfg, &dir.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["experiments"].as_array().unwrap().len(), 0);
    assert_eq!(report["summary"]["all_passed"], true);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.toml",
        "schema_version = 1\nseed = 1\nbogus = 3\n",
    );
    assert_eq!(
        suite(&bad, &dir.path().join("o"), &[]).status.code(),
        Some(2)
    );
    let op = write(
        dir.path(),
        "op.toml",
        "schema_version = 1\nseed = 1\n[[operations]]\nid = \"nope\"\n",
    );
    assert_eq!(
        suite(&op, &dir.path().join("o"), &[]).status.code(),
        Some(2)
    );
    assert_eq!(
        dyadlab(&["tree", "--measure", "nope"]).status.code(),
        Some(2)
    );
    assert_eq!(
        dyadlab(&["suite", "--config", "/nonexistent.toml"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn pin_regression_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let pins = dir.path().join("pins.toml");
    let p = pins.to_str().unwrap();
    let first = suite(&cfg, &dir.path().join("o"), &["--pins", p, "--write-pins"]);
    assert_eq!(first.status.code(), Some(0));
    assert_eq!(
        suite(&cfg, &dir.path().join("o"), &["--pins", p])
            .status
            .code(),
        Some(0)
    );

    let text = fs::read_to_string(&pins).unwrap();
    let tight: String = text
        .lines()
        .map(|l| {
            if l.starts_with("necessity") {
                "necessity = 1e-6".to_string()
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(&pins, tight).unwrap();
    let out = suite(&cfg, &dir.path().join("o"), &["--pins", p]);
    assert_eq!(out.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let pin = report["pins"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["name"] == "necessity")
        .unwrap();
    assert_eq!(pin["status"], "regressed");
}

#[test]
fn haar_check_and_csv_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dyadlab(&[
        "haar",
        "check",
        "--dim",
        "2",
        "--depth",
        "3",
        "--format",
        "csv",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("experiment,instance,characteristic,value\n"));
    assert!(text.contains("haar_check,0,gram_deviation,"));
    assert_eq!(
        fs::read_to_string(dir.path().join("haar_check.csv")).unwrap(),
        text
    );
}

#[test]
fn l1_check_fails_below_the_achieved_bound() {
    let ok = dyadlab(&[
        "shift",
        "check-l1",
        "--depth",
        "4",
        "--l1-normalize",
        "1",
        "--c",
        "1",
    ]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = dyadlab(&[
        "shift",
        "check-l1",
        "--depth",
        "4",
        "--l1-normalize",
        "1",
        "--c",
        "0.5",
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn subcommands_emit_json() {
    let dir = tempfile::tempdir().unwrap();
    let gens = write(
        dir.path(),
        "g.json",
        r#"{"d":2,"generators":[[1,0],[0,1],[1,1]]}"#,
    );
    let cases: Vec<Vec<&str>> = vec![
        vec!["tree", "--depth", "3"],
        vec!["shift", "apply", "--depth", "4"],
        vec!["shift", "weak11", "--depth", "4", "--trials", "3"],
        vec![
            "body",
            "member",
            "--generators",
            &gens,
            "--point",
            "0.5,-0.5",
        ],
        vec!["body", "john", "--generators", &gens],
        vec!["sparse", "build", "--regime", "multiplier", "--depth", "4"],
        vec!["weights", "ap", "--depth", "3"],
        vec!["weights", "apn", "--depth", "3", "--big-n", "2"],
        vec!["weights", "apb", "--depth", "3"],
        vec!["weights", "apinf", "--depth", "3", "--dirs", "8"],
        vec!["weights", "opnorm", "--depth", "3"],
        vec!["weights", "necessity", "--depth", "3", "--pairs", "2"],
        vec!["carleson", "verify", "--depth", "3", "--density", "0.3"],
        vec!["orlicz", "bp", "--phi", "power:r=1.2"],
        vec![
            "orlicz",
            "sweep",
            "--phi",
            "power:r=1.2",
            "--depths",
            "3,4",
            "--trials",
            "4",
        ],
        vec![
            "orlicz",
            "bump",
            "--depth",
            "3",
            "--phi",
            "power:r=2",
            "--psi",
            "power:r=2",
        ],
    ];
    for args in cases {
        let out = dyadlab(&args);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        serde_json::from_slice::<Value>(&out.stdout).unwrap_or_else(|e| panic!("{args:?}: {e}"));
    }
}
