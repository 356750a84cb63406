use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use morse_cells_cli::config;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_morsecell"))
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg(cmd).arg("--config").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn diagnostics(out: &Path) -> Value {
    read_json(&out.join("diagnostics.json"))
}

#[test]
fn shipped_configs_parse() {
    let mut n = 0;
    for entry in std::fs::read_dir(workspace().join("configs")).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "json") && p.file_name().unwrap() != "schema.json" {
            config::parse(&std::fs::read_to_string(&p).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
}

#[test]
fn schema_lists_every_section() {
    let schema = read_json(&workspace().join("configs/schema.json"));
    assert_eq!(schema["additionalProperties"], Value::Bool(false));
    let keys: BTreeSet<&str> = schema["properties"].as_object().unwrap().keys().map(String::as_str).collect();
    let expected: BTreeSet<&str> =
        ["system", "seeds", "critical", "manifold", "transversality", "cellmap", "counterexample", "juxt", "output", "tolerances"].into();
    assert_eq!(keys, expected);
    for (name, sec) in schema["properties"].as_object().unwrap() {
        if sec["type"] == "object" {
            assert_eq!(sec["additionalProperties"], Value::Bool(false), "{name}");
        }
    }
}

#[test]
fn analyze_noncell_reports_the_four_indices() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run("analyze", &workspace().join("configs/appendixA.json"), &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("critical.json"));
    let table: Vec<(f64, u64)> = report["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| (p["location"][2].as_f64().unwrap(), p["index"].as_u64().unwrap()))
        .collect();
    let zs: Vec<f64> = table.iter().map(|t| t.0).collect();
    let idx: Vec<u64> = table.iter().map(|t| t.1).collect();
    assert_eq!(idx, vec![1, 0, 3, 2]);
    for (z, want) in zs.iter().zip([-3.0, -1.0, 1.0, 3.0]) {
        assert!((z - want).abs() < 1e-8);
    }
    let csv = std::fs::read_to_string(out.join("critical.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "id,x1,x2,x3,index,rate,r_max,f");
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn manifold_on_quad_saddle_matches_the_parabola() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run("manifold", &workspace().join("configs/quad_saddle.json"), &out, &["--format", "csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("manifold.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let (ix, iy) = (header.iter().position(|h| *h == "x1").unwrap(), header.iter().position(|h| *h == "x2").unwrap());
    let mut worst = 0.0f64;
    let mut rows = 0;
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        worst = worst.max((v[iy] - v[ix] * v[ix] / 3.0).abs());
        rows += 1;
    }
    assert_eq!(rows, 65);
    assert!(worst < 1e-4, "{worst}");
    assert!(out.join("trace.csv").exists());
    assert!(!out.join("manifold.json").exists());
}

#[test]
fn empty_section_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{ "system": "builtin:square4", "critical": {} }"#);
    let out = tmp.path().join("out");
    let o = run("analyze", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let d = diagnostics(&out);
    assert_eq!(d["kind"], "validation");
    assert_eq!(d["exit_code"], 2);
    assert!(d["message"].as_str().unwrap().contains("empty"));
}

#[test]
fn missing_section_and_unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), r#"{ "system": "builtin:square4" }"#);
    assert_eq!(run("cellmap", &cfg, &out, &[]).status.code(), Some(2));
    assert!(diagnostics(&out)["message"].as_str().unwrap().contains("cellmap"));

    let cfg = write_config(tmp.path(), r#"{ "system": "builtin:square4", "critical": { "connection_samples": 2, "bogus": 1 } }"#);
    assert_eq!(run("analyze", &cfg, &out, &[]).status.code(), Some(2));
    assert!(diagnostics(&out)["message"].as_str().unwrap().contains("bogus"));

    let cfg = write_config(tmp.path(), r#"{ "system": "builtin:square4", "extra": true }"#);
    assert_eq!(run("analyze", &cfg, &out, &[]).status.code(), Some(2));

    let cfg = write_config(tmp.path(), r#"{ "system": "builtin:nowhere", "critical": { "connection_samples": 2 } }"#);
    assert_eq!(run("analyze", &cfg, &out, &[]).status.code(), Some(2));

    let cfg = write_config(tmp.path(), r#"{ "system": { "dimension": 2, "field": ["x", "y +"] }, "seeds": [[0, 0]], "critical": { "connection_samples": 2 } }"#);
    assert_eq!(run("analyze", &cfg, &out, &[]).status.code(), Some(2));
    assert!(diagnostics(&out)["message"].as_str().unwrap().contains("system.field"));

    let cfg = write_config(tmp.path(), r#"{ "system": "builtin:square4", "critical": { "connection_samples": 2 } }"#);
    assert_eq!(run("analyze", &cfg, &out, &["--format", "csv,pdf"]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_three_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        r#"{ "system": { "dimension": 2, "field": ["1", "1 + x^2"] }, "seeds": [[0, 0], [1, 1]], "critical": { "connection_samples": 2 } }"#,
    );
    let o = run("analyze", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    let d = diagnostics(&out);
    assert_eq!(d["kind"], "numerical");
    assert_eq!(d["command"], "analyze");
    assert_eq!(d["details"]["failed_seeds"], serde_json::json!([0, 1]));
}

#[test]
fn cellmap_needs_analytic_charts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), r#"{ "system": "builtin:quad_saddle", "cellmap": { "point": [0, 0] } }"#);
    assert_eq!(run("cellmap", &cfg, &out, &[]).status.code(), Some(2));
}

#[test]
fn infinite_times_are_encoded_as_strings() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), r#"{ "system": "builtin:square4", "juxt": { "point": [0, 0], "samples": 5 } }"#);
    let o = run("juxt", &cfg, &out, &["--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let j = read_json(&out.join("juxt.json"));
    assert_eq!(j["tau_at_center"], "inf");
    assert_eq!(j["seed"], 3);
    assert!(j["max_residual"].as_f64().unwrap() < 1e-5);
    let csv = std::fs::read_to_string(out.join("group_law.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn cellmap_writes_every_format() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), r#"{ "system": "builtin:square4", "cellmap": { "point": [0, 0], "n_r": 4, "n_theta": 24 } }"#);
    let o = run("cellmap", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["cellmap.csv", "cellmap.mesh", "cellmap.svg", "cellmap.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let listed = String::from_utf8(o.stdout).unwrap();
    assert_eq!(listed.lines().count(), 4);
    let j = read_json(&out.join("cellmap.json"));
    assert_eq!(j["samples"], 1 + 4 * 24);
    assert_eq!(j["continuity"]["failures"], 0);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{ "system": "builtin:square4", "juxt": { "point": [0, 0], "samples": 8 } }"#);
    let read = |dir: &Path| (std::fs::read(dir.join("juxt.json")).unwrap(), std::fs::read(dir.join("group_law.csv")).unwrap());
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for (dir, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        assert!(run("juxt", &cfg, dir, &["--seed", seed]).status.success());
    }
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a).1, read(&c).1);
}
