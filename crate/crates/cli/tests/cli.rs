use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tslab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const PERTURBED: &str = r#"{
  "d": 2, "r": 3, "m": 20,
  "teacher": { "random": { "delta_min": 0.5, "w_min": 0.5, "w_max": 1.5, "seed": 4 } },
  "init": { "perturbed_teacher": { "scale": 0.03, "seed": 5 } },
  "train": { "eta": { "auto": { "c": 0.1 } }, "max_steps": 200000, "target_loss": 1e-6, "seed": 0 }
}"#;

fn row_value(out: &str, name: &str) -> f64 {
    out.lines()
        .find(|l| l.split_whitespace().next() == Some(name))
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap_or_else(|| panic!("no row {name} in\n{out}"))
        .parse()
        .unwrap()
}

#[test]
fn kernel_table_for_orthogonal_and_equal_vectors() {
    let o = tslab(&["kernel", "--u", "1,0", "--v", "0,1"]);
    assert!(o.status.success());
    assert!((row_value(&stdout(&o), "K") - std::f64::consts::FRAC_2_PI).abs() < 5e-7);

    let o = tslab(&["kernel", "--u", "1,0", "--v", "1,0"]);
    assert!(o.status.success());
    assert_eq!(row_value(&stdout(&o), "K"), 1.0);
}

#[test]
fn kernel_dimension_mismatch_exits_one() {
    let o = tslab(&["kernel", "--u", "1,0", "--v", "1,0,0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dimension mismatch"));
}

#[test]
fn kernel_sampled_column_agrees() {
    let o = tslab(&["kernel", "--u", "0.3,-1.2,0.5", "--v", "1,0.4,-0.2", "--mc", "1000000", "--seed", "11"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let z_col: Vec<f64> = out
        .lines()
        .skip(1)
        .take_while(|l| !l.starts_with("Scov"))
        .map(|l| l.split_whitespace().last().unwrap().parse().unwrap())
        .collect();
    assert_eq!(z_col.len(), 7);
    assert!(z_col.iter().all(|z| *z <= 4.0), "{out}");
}

#[test]
fn train_reaches_target_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", PERTURBED);
    let traj = dir.path().join("traj.csv");
    let svg = dir.path().join("plot.svg");
    let o = tslab(&[
        "train",
        "--config",
        &cfg,
        "--out-traj",
        traj.to_str().unwrap(),
        "--svg",
        svg.to_str().unwrap(),
        "--threads",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let csv = fs::read_to_string(&traj).unwrap();
    let last = csv.lines().last().unwrap();
    let loss: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!(loss <= 1e-6);

    let net: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("traj.json")).unwrap()).unwrap();
    assert_eq!(net["d"], 2);
    assert_eq!(net["neurons"].as_array().unwrap().len(), 20);

    let picture = fs::read_to_string(&svg).unwrap();
    assert_eq!(picture.matches("<line").count(), 3);
    assert_eq!(picture.matches("<polyline").count(), 20);
    assert_eq!(picture.matches("<circle").count(), 20);
}

#[test]
fn train_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", PERTURBED);
    let mut outputs = Vec::new();
    for k in 0..2 {
        let traj = dir.path().join(format!("t{k}.csv"));
        let o = tslab(&["train", "--config", &cfg, "--out-traj", traj.to_str().unwrap(), "--threads", "1"]);
        assert!(o.status.success());
        outputs.push((
            fs::read(&traj).unwrap(),
            fs::read(dir.path().join(format!("t{k}.json"))).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn train_exit_codes_for_cap_and_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let capped = PERTURBED.replace("\"max_steps\": 200000", "\"max_steps\": 10");
    let cfg = write_config(dir.path(), "cap.json", &capped);
    let traj = dir.path().join("cap.csv");
    let o = tslab(&["train", "--config", &cfg, "--out-traj", traj.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let wild = PERTURBED.replace("{ \"auto\": { \"c\": 0.1 } }", "{ \"fixed\": 1000.0 }");
    let cfg = write_config(dir.path(), "wild.json", &wild);
    let traj = dir.path().join("wild.csv");
    let o = tslab(&["train", "--config", &cfg, "--out-traj", traj.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
}

#[test]
fn malformed_config_reports_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = PERTURBED.replace("\"target_loss\"", "\"target_los\"");
    let cfg = write_config(dir.path(), "bad.json", &bad);
    let traj = dir.path().join("x.csv");
    let o = tslab(&["train", "--config", &cfg, "--out-traj", traj.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train"), "{}", stderr(&o));
    assert!(!traj.exists());

    let wrong_type = PERTURBED.replace("\"m\": 20", "\"m\": \"twenty\"");
    let cfg = write_config(dir.path(), "type.json", &wrong_type);
    let o = tslab(&["train", "--config", &cfg, "--out-traj", traj.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at `m`"), "{}", stderr(&o));

    let short = PERTURBED.replace("\"m\": 20", "\"m\": 20, \"teacher_rows\": 1");
    let cfg = write_config(dir.path(), "extra.json", &short);
    let o = tslab(&["train", "--config", &cfg, "--out-traj", traj.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_unknown_suite_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let o = tslab(&["verify", "--suite", "everything", "--report", report.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown suite"));
}

#[test]
fn verify_init_report_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for k in 0..2 {
        let report = dir.path().join(format!("r{k}.json"));
        let o = tslab(&["verify", "--suite", "init", "--report", report.to_str().unwrap(), "--seed", "3"]);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
        reports.push(fs::read_to_string(&report).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let v: Value = serde_json::from_str(&reports[0]).unwrap();
    assert_eq!(v["suite"], "init");
    assert_eq!(v["seed"], 3);
    let names: Vec<&str> = v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["random_init", "subspace_init", "nnls_oracle"]);
    assert!(v["checks"][0]["measured"]["within_tolerance"].is_number());
}

#[test]
fn verify_exit_code_follows_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "v.json", r#"{ "mc_samples": 100000 }"#);
    let report = dir.path().join("claims.json");
    let o = tslab(&["verify", "--suite", "claims", "--report", report.to_str().unwrap(), "--config", &cfg]);
    let v: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let failed = v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["status"] == "fail")
        .count();
    assert_eq!(o.status.code(), Some(if failed == 0 { 0 } else { 1 }));
    assert_eq!(v["checks"][0]["name"], "warmup_cubic");
    assert_eq!(v["checks"][0]["status"], "pass");

    let bad = write_config(dir.path(), "bad.json", r#"{ "mc_sample": 10 }"#);
    let o = tslab(&["verify", "--suite", "claims", "--report", report.to_str().unwrap(), "--config", &bad]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn init_writes_network() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", PERTURBED);
    for algo in ["random", "subspace"] {
        let out = dir.path().join(format!("{algo}.json"));
        let o = tslab(&[
            "init", "--algo", algo, "--m", "12", "--config", &cfg, "--out", out.to_str().unwrap(), "--n", "20000",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(v["neurons"].as_array().unwrap().len(), 12);
    }
}
