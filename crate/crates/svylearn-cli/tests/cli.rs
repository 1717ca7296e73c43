//! End-to-end tests of the external interfaces: every subcommand driven
//! through real files in a temp directory.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_svylearn"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn binary");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_population(path: &Path, rows: usize) {
    let mut csv = String::from("f_0,f_1,label\n");
    for i in 0..rows {
        let x = i as f64 / rows as f64 * 6.0 - 3.0;
        let y = ((i * 7) % 11) as f64 - 5.0;
        let label = if x + 0.1 * y > 0.0 { 1 } else { -1 };
        csv.push_str(&format!("{x},{y},{label}\n"));
    }
    std::fs::write(path, csv).unwrap();
}

#[test]
fn sample_solve_train_estimate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    write_population(&d.join("pop.csv"), 40);

    // Rejective design over the 40 units, size 12.
    let p = vec![12.0 / 40.0; 40];
    let design = serde_json::json!({"kind": "rejective", "p": p, "n": 12});
    std::fs::write(d.join("design.json"), design.to_string()).unwrap();

    run_ok(bin()
        .args(["sample", "--design"])
        .arg(d.join("design.json"))
        .args(["--seed", "3", "--out"])
        .arg(d.join("sample.csv")));
    let sample = std::fs::read_to_string(d.join("sample.csv")).unwrap();
    assert!(sample.starts_with("index,epsilon"));
    let ones = sample.lines().filter(|l| l.ends_with(",1")).count();
    assert_eq!(ones, 12);

    // Solve canonical parameters for a nontrivial target.
    let mut pi_csv = String::from("index,pi\n");
    for i in 0..8 {
        pi_csv.push_str(&format!("{i},{}\n", [0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.5, 0.5][i]));
    }
    std::fs::write(d.join("pi.csv"), pi_csv).unwrap();
    run_ok(bin()
        .args(["solve-pi", "--pi"])
        .arg(d.join("pi.csv"))
        .arg("--out")
        .arg(d.join("p.csv")));
    let p_csv = std::fs::read_to_string(d.join("p.csv")).unwrap();
    assert!(p_csv.starts_with("index,p"));
    let total: f64 = p_csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 4.0).abs() < 1e-6, "canonical p sums to n");

    // Train both learners on the drawn sample.
    let mut sample_pi = String::from("index,pi\n");
    let mut sample_p = String::from("index,p\n");
    for i in 0..40 {
        sample_pi.push_str(&format!("{i},0.3\n"));
        sample_p.push_str(&format!("{i},0.3\n"));
    }
    std::fs::write(d.join("sample_pi.csv"), sample_pi).unwrap();
    std::fs::write(d.join("sample_p.csv"), sample_p).unwrap();
    run_ok(bin()
        .args(["train", "--population"])
        .arg(d.join("pop.csv"))
        .arg("--sample")
        .arg(d.join("sample.csv"))
        .arg("--pi")
        .arg(d.join("sample_pi.csv"))
        .args(["--learner", "svm", "--degree", "1", "--epochs", "400", "--lambda", "0.001"])
        .arg("--out")
        .arg(d.join("svm.json")));
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("svm.json")).unwrap()).unwrap();
    assert!(model.get("theta").is_some());
    assert!(model.get("b").is_some());
    assert!(model.get("degree").is_some());

    run_ok(bin()
        .args(["train", "--population"])
        .arg(d.join("pop.csv"))
        .arg("--sample")
        .arg(d.join("sample.csv"))
        .args(["--learner", "tree", "--max-depth", "4"])
        .arg("--out")
        .arg(d.join("tree.json")));
    let tree: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("tree.json")).unwrap()).unwrap();
    assert!(tree.get("root").is_some());

    // Estimate empirical + HT + biased HT risks.
    run_ok(bin()
        .args(["estimate", "--population"])
        .arg(d.join("pop.csv"))
        .arg("--model")
        .arg(d.join("svm.json"))
        .arg("--sample")
        .arg(d.join("sample.csv"))
        .arg("--pi")
        .arg(d.join("sample_pi.csv"))
        .arg("--p")
        .arg(d.join("sample_p.csv"))
        .arg("--out")
        .arg(d.join("risks.json")));
    let risks: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("risks.json")).unwrap()).unwrap();
    let kinds: Vec<&str> = risks["risks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["kind"].as_str().unwrap())
        .collect();
    assert_eq!(kinds, vec!["empirical", "ht", "biased_ht"]);
    assert!(risks["poisson_cond_variance"].is_number());

    // Monte-Carlo design expectation carries a standard error.
    run_ok(bin()
        .args(["estimate", "--population"])
        .arg(d.join("pop.csv"))
        .arg("--model")
        .arg(d.join("svm.json"))
        .arg("--design")
        .arg(d.join("design.json"))
        .arg("--pi")
        .arg(d.join("sample_pi.csv"))
        .args(["--reps", "100", "--seed", "4", "--out"])
        .arg(d.join("mc.json")));
    let mc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("mc.json")).unwrap()).unwrap();
    let entries = mc["risks"].as_array().unwrap();
    let with_se = entries
        .iter()
        .find(|r| r.get("std_error").is_some_and(|v| v.is_number()))
        .expect("one Monte-Carlo entry with a standard error");
    assert_eq!(with_se["kind"], "ht");
}

#[test]
fn enumerate_export_has_bitmask_schema() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let design = serde_json::json!({"kind": "srswor", "n_pop": 5, "n": 2});
    std::fs::write(d.join("design.json"), design.to_string()).unwrap();
    run_ok(bin()
        .args(["sample", "--design"])
        .arg(d.join("design.json"))
        .args(["--seed", "1", "--out"])
        .arg(d.join("s.csv"))
        .arg("--enumerate")
        .arg(d.join("enum.csv")));
    let text = std::fs::read_to_string(d.join("enum.csv")).unwrap();
    assert!(text.starts_with("subset_bitmask,probability"));
    assert_eq!(text.lines().count(), 1 + 10, "C(5,2) = 10 support rows");
}

#[test]
fn bound_report_and_validation_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let inputs = serde_json::json!({
        "n_pop": 10, "n": 4, "vc_dim": 1, "delta": 0.05, "kappa": 1.3
    });
    std::fs::write(d.join("inputs.json"), inputs.to_string()).unwrap();
    run_ok(bin()
        .args(["bound", "--inputs"])
        .arg(d.join("inputs.json"))
        .args(["--validate", "--seed", "9", "--out"])
        .arg(d.join("report.json")));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["inputs"]["n_pop"], 10);
    assert!(report["vc_deviation"].as_f64().unwrap() > 0.0);
    assert!(report["coupling"]["total"].as_f64().unwrap() > 0.0);
    let empirical = report["empirical"].as_array().unwrap();
    assert!(!empirical.is_empty());
    assert!(empirical.iter().all(|e| e["valid"].as_bool().unwrap()));
}

#[test]
fn validate_exits_zero_on_passing_suites() {
    let out = bin()
        .args(["validate", "--max-n", "6", "--instances", "10", "--seed", "5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("unbiasedness: PASS"));
    assert!(stdout.contains("coupling_assembly: PASS"));
}

#[test]
fn unknown_learner_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_population(&d.join("pop.csv"), 10);
    std::fs::write(d.join("s.csv"), "index,epsilon\n0,1\n1,0\n2,1\n3,0\n4,0\n5,0\n6,0\n7,0\n8,0\n9,0\n").unwrap();
    let out = bin()
        .args(["train", "--population"])
        .arg(d.join("pop.csv"))
        .arg("--sample")
        .arg(d.join("s.csv"))
        .args(["--learner", "forest", "--out"])
        .arg(d.join("m.json"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown learner"));
}
