use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn nonprob(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nonprob")).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn error_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stderr)))
}

fn workdir() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("b.csv"), "unit_id,y,x\n3,2,0\n1,4,1\n7,3,0\n").unwrap();
    fs::write(dir.path().join("margins.csv"), "x,N_x\n0,6\n1,4\n").unwrap();
    dir
}

#[test]
fn expansion_total_of_three_row_example() {
    let dir = workdir();
    let o = nonprob(dir.path(), &["estimate", "--b", "b.csv", "--population-size", "10", "--method", "expansion"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let row = out.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[0], "expansion");
    assert_eq!(fields[1], "total");
    assert_eq!(fields[2].parse::<f64>().unwrap(), 30.0);
}

#[test]
fn estimates_written_with_manifest() {
    let dir = workdir();
    let o = nonprob(
        dir.path(),
        &["estimate", "--b", "b.csv", "--margins", "margins.csv", "--method", "post_stratified,calibration,ipw", "--out", "out"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let est = fs::read_to_string(dir.path().join("out/estimates.csv")).unwrap();
    let values: Vec<f64> = est.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    // cell 0: 6 * (2 + 3) / 2, cell 1: 4 * 4
    assert_eq!(values.len(), 3);
    for v in values {
        assert!((v - 31.0).abs() < 1e-9, "{v}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "estimate");
    assert_eq!(manifest["artifacts"][0]["path"], "estimates.csv");
    assert_eq!(manifest["config"]["margins"], "margins.csv");
}

#[test]
fn constant_propensity_checks_pass_with_caveat() {
    let dir = workdir();
    let o = nonprob(dir.path(), &["diagnose", "--b", "b.csv", "--population-size", "10", "--checks", "propensity", "--out", "d"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let checks = fs::read_to_string(dir.path().join("d/checks.csv")).unwrap();
    let rows: Vec<Vec<String>> = checks.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!(r[2].parse::<f64>().unwrap().abs() < 1e-12, "{r:?}");
        assert_eq!(r[4], "true");
    }
    let report = fs::read_to_string(dir.path().join("d/report.txt")).unwrap();
    assert!(report.contains("not evidence that the propensity model is valid"), "{report}");
}

#[test]
fn zero_inclusion_probability_rejected_with_line() {
    let dir = workdir();
    fs::write(dir.path().join("s.csv"), "unit_id,pi,y\n2,0.5,1\n4,0,2\n").unwrap();
    let o = nonprob(dir.path(), &["estimate", "--b", "b.csv", "--s", "s.csv", "--population-size", "10", "--method", "hajek"]);
    assert_eq!(o.status.code(), Some(3));
    let e = error_json(&o);
    assert_eq!(e["category"], "data");
    assert!(e["message"].as_str().unwrap().contains("s.csv:3"), "{e}");
}

#[test]
fn duplicate_margins_label_rejected() {
    let dir = workdir();
    fs::write(dir.path().join("m.csv"), "x,N_x\n0,6\n1,2\n0,2\n").unwrap();
    let o = nonprob(dir.path(), &["estimate", "--b", "b.csv", "--margins", "m.csv", "--method", "post_stratified"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(error_json(&o)["message"].as_str().unwrap().contains("duplicate label 0"));
}

#[test]
fn duplicate_unit_id_rejected() {
    let dir = workdir();
    fs::write(dir.path().join("b2.csv"), "unit_id,y,x\n1,2,0\n1,4,1\n").unwrap();
    let o = nonprob(dir.path(), &["estimate", "--b", "b2.csv", "--population-size", "10"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(error_json(&o)["message"].as_str().unwrap().contains("b2.csv:3"));
}

#[test]
fn overlap_rejected_on_complement_frame() {
    let dir = workdir();
    fs::write(dir.path().join("s.csv"), "unit_id,pi,y\n2,0.5,1\n7,0.5,2\n").unwrap();
    let args = ["estimate", "--b", "b.csv", "--s", "s.csv", "--population-size", "10", "--method", "split_population"];
    let full = nonprob(dir.path(), &args);
    // on the full frame the overlap only fails the split estimator itself
    assert_eq!(full.status.code(), Some(3));
    assert_eq!(error_json(&full)["kind"], "frame_violation");
    let mut with_frame = args.to_vec();
    with_frame.extend(["--frame", "complement"]);
    let o = nonprob(dir.path(), &with_frame);
    assert_eq!(o.status.code(), Some(3));
    let e = error_json(&o);
    assert_eq!(e["kind"], "frame_violation");
    assert!(e["message"].as_str().unwrap().contains("s.csv:3"), "{e}");
}

#[test]
fn exit_codes_by_category() {
    let dir = workdir();
    let o = nonprob(dir.path(), &["estimate", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["category"], "config");

    let o = nonprob(dir.path(), &["estimate", "--b", "b.csv", "--method", "nope"]);
    assert_eq!(o.status.code(), Some(2));

    let o = nonprob(dir.path(), &["estimate", "--b", "missing.csv", "--population-size", "10"]);
    assert_eq!(o.status.code(), Some(3));

    // cell 1 has N_x = 4 but the margins declare a third, empty cell
    fs::write(dir.path().join("m3.csv"), "x,N_x\n0,6\n1,4\n2,5\n").unwrap();
    let o = nonprob(dir.path(), &["estimate", "--b", "b.csv", "--margins", "m3.csv", "--method", "post_stratified"]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(error_json(&o)["category"], "estimation");
}

#[test]
fn failed_run_leaves_no_output() {
    let dir = workdir();
    let o = nonprob(dir.path(), &["estimate", "--b", "b.csv", "--method", "expansion", "--out", "out"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn config_file_with_flag_override() {
    let dir = workdir();
    fs::write(dir.path().join("run.json"), r#"{"b": "b.csv", "population_size": 20, "methods": ["expansion"]}"#).unwrap();
    let o = nonprob(dir.path(), &["estimate", "--config", "run.json"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("expansion,total,60,"));
    let o = nonprob(dir.path(), &["estimate", "--config", "run.json", "--population-size", "10"]);
    assert!(stdout(&o).contains("expansion,total,30,"));

    fs::write(dir.path().join("bad.json"), r#"{"bee": "b.csv"}"#).unwrap();
    assert_eq!(nonprob(dir.path(), &["estimate", "--config", "bad.json"]).status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str| {
        let o = nonprob(dir.path(), &["simulate", "--preset", "qr_flat", "--seed", "7", "--replicates", "40", "--out", out]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("a");
    run("b");
    for f in ["summary.csv", "long.csv", "metrics.csv", "errors.csv", "scenario.json", "manifest.json"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let summary = fs::read_to_string(dir.path().join("a/summary.csv")).unwrap();
    assert!(summary.starts_with("scenario,estimator,N,R,bias,mc_se,rmse,var_hat_mean,coverage,fail_rate\n"));
    let scenario: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/scenario.json")).unwrap()).unwrap();
    assert_eq!(scenario["root_seed"], 7);
    assert_eq!(scenario["replicates"], 40);
}

#[test]
fn simulate_from_printed_preset_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = nonprob(dir.path(), &["presets", "--preset", "sm_basic"]);
    assert_eq!(o.status.code(), Some(0));
    let mut sc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    sc["replicates"] = 5.into();
    sc["n_grid"] = serde_json::json!([500]);
    fs::write(dir.path().join("cfg.json"), serde_json::json!({ "scenario": sc, "threads": 2 }).to_string()).unwrap();
    let o = nonprob(dir.path(), &["simulate", "--config", "cfg.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn generated_files_feed_estimate_and_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let o = nonprob(dir.path(), &["generate", "--preset", "sm_basic", "--population-size", "1500", "--seed", "3", "--out", "g"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = nonprob(
        dir.path(),
        &[
            "estimate", "--b", "g/b.csv", "--s", "g/s.csv", "--margins", "g/margins.csv", "--method",
            "expansion,post_stratified,calibration,ipw,reference_ipw,sm,two_phase_sm,hajek",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 9);
    let o = nonprob(
        dir.path(),
        &[
            "diagnose", "--b", "g/b.csv", "--s", "g/s.csv", "--population", "g/population.csv", "--checks",
            "propensity,npa,z,match", "--permutations", "49", "--out", "d",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stats = fs::read_to_string(dir.path().join("d/statistics.csv")).unwrap();
    for key in ["npa,cov,", "npa,band,", "z,null_band,", "match,max_distance,"] {
        assert!(stats.contains(key), "{key} missing from {stats}");
    }
}

#[test]
fn generate_needs_out() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nonprob(dir.path(), &["generate", "--preset", "qr_flat"]).status.code(), Some(2));
    assert_eq!(nonprob(dir.path(), &["simulate", "--preset", "nope"]).status.code(), Some(2));
}
