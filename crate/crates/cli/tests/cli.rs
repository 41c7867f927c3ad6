use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mest")).args(args).env_remove("MEST_THREADS").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fit_median_with_intercept_only() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "y.csv", "y\n3\n1\n4\n1\n5\n9\n2\n");
    let out = dir.path().join("fit.json");
    let o = mest(&["fit", "--data", &data, "--loss", "lad", "--intercept", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json_file(&out);
    assert!((v["beta_hat"][0].as_f64().unwrap() - 3.0).abs() < 1e-6);
    assert_eq!(v["names"][0], "intercept");
    assert_eq!(v["n0"], 1);
    assert!((v["d_n"].as_f64().unwrap() - 1.0 / 7.0).abs() < 1e-12);
}

#[test]
fn fit_least_squares_matches_normal_equations() {
    let dir = tempfile::tempdir().unwrap();
    // y = 1 + 2x + noise; normal equations solved by hand below
    let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
    let ys = [1.1, 2.9, 5.2, 6.8, 9.1];
    let text: String = xs.iter().zip(ys).map(|(x, y)| format!("{x},{y}\n")).collect();
    let data = write(dir.path(), "d.csv", &text);
    let o = mest(&["fit", "--data", &data, "--loss", r#"{"kind":"power","q":2}"#, "--intercept"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let (n, sx, sy) = (5.0, xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let icept = (sy - slope * sx) / n;
    assert!((v["beta_hat"][0].as_f64().unwrap() - icept).abs() < 1e-9);
    assert!((v["beta_hat"][1].as_f64().unwrap() - slope).abs() < 1e-9);
    assert_eq!(v["names"][1], "x1");
}

#[test]
fn fit_rejects_rank_deficient_design() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "1,2,3\n2,4,5\n3,6,8\n4,8,9\n");
    let o = mest(&["fit", "--data", &data, "--loss", "lad"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("singular Gram"), "{}", stderr(&o));
}

#[test]
fn fit_reports_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "a,b\n1,2\n3,x\n");
    let o = mest(&["fit", "--data", &data, "--loss", "lad"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn fit_not_converged_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let text: String = (0..40).map(|i| format!("{},{}\n", i as f64 * 0.1, ((i * 7) % 11) as f64)).collect();
    let data = write(dir.path(), "d.csv", &text);
    let opts = write(dir.path(), "opts.json", r#"{"max_iter": 1}"#);
    let o = mest(&["fit", "--data", &data, "--loss", "lad", "--intercept", "--config", &opts]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn check_conditions_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(
        dir.path(),
        "ok.json",
        r#"{"loss":{"kind":"huber","c":1.345},"dist":{"kind":"gaussian","sigma":1.0}}"#,
    );
    let o = mest(&["check-conditions", "--config", &ok]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["c1"].as_f64().unwrap() - 0.8212).abs() / 0.8212 < 0.02);

    let bad = write(dir.path(), "bad.json", r#"{"loss":{"kind":"power","q":2},"dist":{"kind":"cauchy","scale":1.0}}"#);
    let o = mest(&["check-conditions", "--config", &bad]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("diverges"));

    let malformed = write(dir.path(), "m.json", r#"{"loss":{"kind":"huber"}}"#);
    assert_eq!(code(&mest(&["check-conditions", "--config", &malformed])), 1);
}

#[test]
fn check_design_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let blocks = write(
        dir.path(),
        "b.json",
        r#"{"design":{"kind":"orthogonal_blocks","p":2},"n_grid":[100,1000,10000,100000]}"#,
    );
    let o = mest(&["check-design", "--config", &blocks]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["decay"]["verdict"], "theorem1");
    assert!((v["decay"]["delta_hat"].as_f64().unwrap() - 1.0).abs() < 1e-9);

    let adv = write(
        dir.path(),
        "a.json",
        r#"{"design":{"kind":"adversarial_leverage","p":2},"n_grid":[100,1000,10000,100000]}"#,
    );
    let o = mest(&["check-design", "--config", &adv, "--format", "csv"]);
    assert_eq!(code(&o), 3);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("n,d_n,n0,leverage_constant,c5"));
}

#[test]
fn check_design_from_csv_prefixes() {
    let dir = tempfile::tempdir().unwrap();
    let text: String = (0..400).map(|i| format!("{}\n", if i % 2 == 0 { 1.0 } else { -1.0 })).collect();
    let data = write(dir.path(), "x.csv", &text);
    let o = mest(&["check-design", "--data", &data, "--intercept"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn sim_config(dir: &Path, design: &str, n_grid: &str, reps: usize) -> String {
    let text = format!(
        r#"{{"loss":{{"kind":"huber","c":1.345}},"dist":{{"kind":"cauchy","scale":1.0}},
            "design":{design},"n_grid":{n_grid},"reps":{reps},"seed":5,"label":"t"}}"#
    );
    write(dir, "sim.json", &text)
}

#[test]
fn simulate_single_record_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sim_config(dir.path(), r#"{"kind":"orthogonal_blocks","p":2}"#, "[100]", 1);
    let out = dir.path().join("r.csv");
    let o = mest(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,rep,error_norm,d_n,converged,wall_ms");
    assert_eq!(lines.len(), 2);
    assert!(dir.path().join("r.csv.summary.json").exists());
    assert!(!dir.path().join("r.csv.tmp").exists());

    let cfg = sim_config(dir.path(), r#"{"kind":"orthogonal_blocks","p":2}"#, "[50,200]", 8);
    let a = mest(&["simulate", "--config", &cfg, "--threads", "1"]);
    let b = mest(&["simulate", "--config", &cfg, "--threads", "4"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let c = mest(&["simulate", "--config", &cfg, "--seed", "6"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn simulate_flags_adversarial_design() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sim_config(dir.path(), r#"{"kind":"adversarial_leverage","p":2}"#, "[100,1000]", 4);
    let summary = dir.path().join("s.json");
    let o = mest(&["simulate", "--config", &cfg, "--summary", summary.to_str().unwrap(), "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = json_file(&summary);
    assert_eq!(s["hypotheses"]["violated"], true);
    assert_eq!(s["conditions"]["passed"], true);
    let records: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(records.as_array().unwrap().len(), 8);
}

#[test]
fn bound_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "b.json", r#"{"kind":"bennett_bound","eps":[2,10],"b":1,"bsq":4}"#);
    let o = mest(&["bound", "--config", &f, "--format", "csv"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("eps,bound\n2.0,1.0\n10.0,0.0562"), "{text}");

    let slln = write(
        dir.path(),
        "s.json",
        r#"{"kind":"slln","dist":{"kind":"gaussian","sigma":1},"loss":{"kind":"power","q":2},
            "weights":{"kind":"power","exponent":0.5},"n_grid":[100,1000,10000],"seeds":3}"#,
    );
    let o = mest(&["bound", "--config", &slln]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("O(1/n)"));
}

#[test]
fn dn_trace_runs() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(
        dir.path(),
        "d.json",
        r#"{"loss":{"kind":"power","q":2},"dist":{"kind":"gaussian","sigma":1},
            "design":{"kind":"orthogonal_blocks","p":2},"n":2000,"directions":20,"seed":3}"#,
    );
    let o = mest(&["dn-trace", "--config", &f]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["traces"].as_array().unwrap().len(), 20);
    assert!(v["report"]["max_split_residual"].as_f64().unwrap() < 1e-8);
    let first = v["traces"][0]["total"].as_f64().unwrap();
    assert!(first >= v["report"]["min_total"].as_f64().unwrap());
}

#[test]
fn contrast_reports_all_regimes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sim_config(dir.path(), r#"{"kind":"orthogonal_blocks","p":2}"#, "[100,400]", 4);
    let o = mest(&["contrast", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let names: Vec<&str> = v["regimes"].as_array().unwrap().iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["decay_1", "decay_0.75", "decay_0.5", "adversarial_leverage"]);
    assert!(v["moment_audits"].as_array().unwrap().iter().all(|a| a["audit"]["finite"] == true));
}

#[test]
fn usage_errors() {
    assert_ne!(code(&mest(&["frobnicate"])), 0);
    let o = mest(&["simulate"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--config"));
}
