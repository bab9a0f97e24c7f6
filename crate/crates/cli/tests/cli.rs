use std::path::Path;
use std::process::{Command, Output};

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_causal-bench")).current_dir(dir).args(args).output().expect("spawn cli")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen(dir: &Path) {
    let o = cli(
        dir,
        &["gen", "--preset", "reflux-like", "--seed", "3", "--out-rct", "rct.csv", "--out-nrs", "nrs.csv", "--schema", "schema.json"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn missing_config_is_reported_with_its_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &["benchmark", "--config", "nope.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("code:CONFIG_NOT_FOUND"), "{}", stderr(&o));
}

#[test]
fn bad_arguments_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &["estimate", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("code:USAGE"));
    assert!(cli(dir.path(), &["--help"]).status.success());
}

#[test]
fn benchmark_report_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d);
    let before = std::fs::read(d.join("nrs.csv")).unwrap();
    std::fs::write(
        d.join("config.json"),
        r#"{"methods": [{"method": "regadj"}, {"method": "ipw"}, {"method": "aipw"}], "outcomes": ["y_quality_of_life"], "bootstrap": {"reps": 100}, "seed": 5}"#,
    )
    .unwrap();
    let o = cli(
        d,
        &["benchmark", "--config", "config.json", "--rct", "rct.csv", "--nrs", "nrs.csv", "--schema", "schema.json", "--out", "out/results.json"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(d.join("nrs.csv")).unwrap(), before);

    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("out/run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "benchmark");
    assert_eq!(meta["inputs"].as_object().unwrap().len(), 4);

    let o = cli(d, &["report", "--in", "out/results.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let md = String::from_utf8(o.stdout).unwrap();
    let body: Vec<&str> = md.lines().filter(|l| l.starts_with('|')).skip(2).collect();
    assert_eq!(body.len(), 3, "{md}");
    assert!(body.iter().all(|l| l.contains("y_quality_of_life")));

    let o = cli(d, &["report", "--in", "out/results.json", "--format", "csv", "--layout", "mse"]);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().next(), Some("method_id,y_quality_of_life"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn output_may_not_overwrite_an_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d);
    let o = cli(d, &["balance", "--data", "nrs.csv", "--schema", "schema.json", "--out", "nrs.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("code:USAGE"), "{}", stderr(&o));
}

#[test]
fn estimate_writes_a_single_effect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d);
    let o = cli(
        d,
        &["estimate", "--data", "nrs.csv", "--schema", "schema.json", "--method", "ipw", "--outcome", "y_health_status", "--out", "est.json"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let est: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("est.json")).unwrap()).unwrap();
    let est = &est["estimate"];
    let tau = est["tau"].as_f64().unwrap();
    assert!(est["ci"]["lo"].as_f64().unwrap() <= tau && tau <= est["ci"]["hi"].as_f64().unwrap());
}
