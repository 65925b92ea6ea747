use std::path::Path;
use std::process::{Command, Output};

fn lvgm(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_lvgm")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "lvgm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

const COMPARE: &str = r#"{
  "id": "cli_compare",
  "kind": "baseline_compare",
  "model": { "p": 12, "h": 1 },
  "grid": { "n": [60, 240], "h": [0, 1] },
  "trials": 3,
  "base_seed": 4,
  "reg_rule": { "rule": "theory_scaled", "c": 2.0, "gamma": 0.3 }
}"#;

#[test]
fn csv_is_byte_identical_across_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), COMPARE);
    let mut outputs = Vec::new();
    for jobs in ["1", "2", "4"] {
        let out = dir.path().join(format!("r{jobs}.csv"));
        lvgm(&["compare", "--config", &cfg, "--jobs", jobs, "--out", out.to_str().unwrap()]);
        outputs.push(std::fs::read(out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert!(text.starts_with(
        "experiment,p,h,n,d,s_min,delta,trial,seed,method,lambda,gamma,exact_signed_support,support_precision,\
         support_recall,sign_errors,rank_recovered,effective_rank,op_norm_error,frob_error_S,frob_error_L,iterations,wall_ms\n"
    ));
    // 2 n × 2 h × 3 trials × 3 methods
    assert_eq!(text.lines().count(), 1 + 36);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), COMPARE);
    let a = lvgm(&["compare", "--config", &cfg, "--jobs", "1"]).stdout;
    let b = lvgm(&["compare", "--config", &cfg, "--jobs", "1", "--seed", "4"]).stdout;
    let c = lvgm(&["compare", "--config", &cfg, "--jobs", "1", "--seed", "5"]).stdout;
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn json_format_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), COMPARE);
    let json = lvgm(&["compare", "--config", &cfg, "--jobs", "2", "--format", "json"]).stdout;
    let rows: serde_json::Value = serde_json::from_slice(&json).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 36);

    let csv = dir.path().join("r.csv");
    lvgm(&["compare", "--config", &cfg, "--out", csv.to_str().unwrap()]);
    let md = dir.path().join("report.md");
    lvgm(&["report", "--input", csv.to_str().unwrap(), "--out", md.to_str().unwrap()]);
    let text = std::fs::read_to_string(md).unwrap();
    assert!(text.contains("| cli_compare | neighborhood | 12 | 0 | 60 |"));
    assert!(text.contains("Error scaling in n"));
}

#[test]
fn mismatched_kind_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), COMPARE);
    let out = Command::new(env!("CARGO_BIN_EXE_lvgm"))
        .args(["scaling", "--config", &cfg])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("BaselineCompare"));
}

#[test]
fn generate_then_solve() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("truth");
    let t = truth.to_str().unwrap();
    lvgm(&["generate", "--out", t, "--p", "10", "--h", "1", "--seed", "3", "--samples", "400"]);
    for f in ["K_full.txt", "S_star.txt", "L_star.txt", "Sigma.txt", "manifest.json", "Sigma_hat.txt"] {
        assert!(truth.join(f).exists(), "{f}");
    }
    let fit = dir.path().join("fit");
    lvgm(&[
        "solve",
        "--input",
        truth.join("Sigma_hat.txt").to_str().unwrap(),
        "--lambda",
        "0.3",
        "--gamma",
        "0.2",
        "--out",
        fit.to_str().unwrap(),
        "--truth",
        t,
    ]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(fit.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["status"], "Converged");
    assert!(report["recovery"]["op_norm_error"].as_f64().unwrap().is_finite());
    for f in ["S_hat.txt", "L_hat.txt", "R_hat.txt"] {
        assert!(fit.join(f).exists(), "{f}");
    }
}

#[test]
fn population_perturbation_runs_from_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
  "kind": "perturbation",
  "model": { "p": 10, "h": 1 },
  "grid": { "delta": [0.0, 0.1] },
  "trials": 2,
  "population": true,
  "reg_rule": { "rule": "fixed", "lambda": 0.001, "gamma": 0.2 },
  "solver": { "penalize_diagonal": false }
}"#,
    );
    let out = lvgm(&["perturb", "--config", &cfg, "--jobs", "2"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"kind\":\"perturbation\""));
}
