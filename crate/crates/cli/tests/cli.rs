use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets")
}

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convo-bench"))
        .args(args)
        .env_remove("CONVOBENCH_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn batch_into(out: &Path, runs: &str) -> Output {
    let config = assets().join("loan_batch.json");
    bench(&["run", "--config", config.to_str().unwrap(), "--runs", runs, "--out", out.to_str().unwrap()])
}

#[test]
fn run_populates_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = batch_into(&out, "2");
    assert!(o.status.success(), "{}", stderr(&o));
    let runs = fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "jsonl"))
        .count();
    assert_eq!(runs, 8);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 4);
    assert!(fs::read_to_string(out.join("summary.md")).unwrap().contains("| adaptive | standard | 2 |"));
}

#[test]
fn missing_config_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = bench(&["run", "--config", "missing.json", "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stdout(&o).is_empty());
    assert!(!out.exists());
}

#[test]
fn llm_backend_without_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = assets().join("loan_batch.json");
    let o = bench(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--backend",
        "llm",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("CONVOBENCH_API_KEY"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn report_formats_agree() {
    let dir = tempfile::tempdir().unwrap();
    assert!(batch_into(dir.path(), "3").status.success());
    let path = dir.path().to_str().unwrap();

    let md = bench(&["report", "--in", path, "--format", "md"]);
    assert!(md.status.success());
    let md = stdout(&md);
    assert!(md.contains("| adaptive | standard | 3 | 100.0 (0.000) |"), "{md}");

    let csv = stdout(&bench(&["report", "--in", path, "--format", "csv"]));
    let json: Value = serde_json::from_str(&stdout(&bench(&["report", "--in", path, "--format", "json"]))).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("mode,profile,metric,mean,var,n"));
    let mut checked = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f[2].starts_with("field_level:") {
            continue;
        }
        let cell = json
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["cell"]["mode"] == f[0] && c["cell"]["profile"] == f[1])
            .unwrap();
        let m = &cell[f[2]];
        let mean = m.get("mean").or_else(|| m.get("rate")).unwrap().as_f64().unwrap();
        assert_eq!(mean, f[3].parse::<f64>().unwrap(), "{line}");
        assert_eq!(m["var"].as_f64().unwrap(), f[4].parse::<f64>().unwrap(), "{line}");
        checked += 1;
    }
    assert_eq!(checked, 16);
}

#[test]
fn report_rerenders_identically() {
    let dir = tempfile::tempdir().unwrap();
    assert!(batch_into(dir.path(), "2").status.success());
    let path = dir.path().to_str().unwrap();
    let first = stdout(&bench(&["report", "--in", path, "--format", "json"]));
    fs::remove_file(dir.path().join("report.json")).unwrap();
    assert_eq!(first, stdout(&bench(&["report", "--in", path, "--format", "json"])));
}

#[test]
fn report_on_empty_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = bench(&["report", "--in", dir.path().to_str().unwrap(), "--format", "md"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no run files"));
}

#[test]
fn report_on_corrupt_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("x-0000.jsonl"), "{not json\n").unwrap();
    let o = bench(&["report", "--in", dir.path().to_str().unwrap(), "--format", "csv"]);
    assert!(!o.status.success());
}

#[test]
fn validate_shipped_pairs() {
    let schema = assets().join("loan_schema.json");
    for gt in ["loan_standard.json", "loan_ambiguous.json"] {
        let o = bench(&[
            "validate",
            "--schema",
            schema.to_str().unwrap(),
            "--ground-truth",
            assets().join(gt).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stdout(&o).lines().last(), Some("20 leaves, OK"));
    }
}

fn validate_edited(edit: impl FnOnce(&mut Value)) -> Output {
    let dir = tempfile::tempdir().unwrap();
    let mut gt: Value = serde_json::from_str(&fs::read_to_string(assets().join("loan_ambiguous.json")).unwrap()).unwrap();
    edit(&mut gt);
    let path = dir.path().join("gt.json");
    fs::write(&path, gt.to_string()).unwrap();
    bench(&[
        "validate",
        "--schema",
        assets().join("loan_schema.json").to_str().unwrap(),
        "--ground-truth",
        path.to_str().unwrap(),
    ])
}

#[test]
fn validate_names_missing_leaf() {
    let o = validate_edited(|gt| {
        gt["values"].as_object_mut().unwrap().remove("email");
    });
    assert!(!o.status.success());
    assert!(stderr(&o).contains("email"), "{}", stderr(&o));
}

#[test]
fn validate_rejects_unknown_script_leaf() {
    let o = validate_edited(|gt| {
        gt["ambiguity_script"]["shoe_size"] = serde_json::json!({"vague": "big", "clarified": "44"});
    });
    assert!(!o.status.success());
    assert!(stderr(&o).contains("shoe_size"), "{}", stderr(&o));
}
