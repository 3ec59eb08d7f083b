use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn magail(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magail")).args(args).output().expect("spawn magail")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const COMM: &str = r#"{
  "schema_version": 1,
  "game": "coop_comm",
  "seed": 4,
  "expert": {"method": "team_vi"},
  "demos": {"episodes": 20, "horizon": 30},
  "imitation": {"method": "magail_c", "magail": {"iterations": 10}},
  "evaluation": {"episodes": 2000, "horizon": 200}
}"#;

/// Solves the expert and collects demos into `dir`.
fn prepare(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let cfg = write_config(dir, "comm.json", COMM);
    let out = dir.join("run");
    let r = magail(&["make-expert", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let expert = out.join("expert.policy");
    let r = magail(&["collect-demos", "--config", s(&cfg), "--expert", s(&expert), "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    (cfg, expert, out.join("demos.txt"))
}

fn read_eval(path: &Path) -> Vec<(f64, f64, f64)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("agent,mean,std,exact"));
    lines
        .map(|l| {
            let f: Vec<f64> = l.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
            (f[0], f[1], f[2])
        })
        .collect()
}

#[test]
fn team_expert_passes_its_certificate() {
    let dir = TempDir::new().unwrap();
    let (_, expert, demos) = prepare(dir.path());
    assert!(expert.exists() && demos.exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(expert.with_file_name("expert_report.json")).unwrap()).unwrap();
    assert_eq!(report["is_nash"], true);
    assert!(report["max_violation"].as_f64().unwrap() <= report["nash_tolerance"].as_f64().unwrap());
}

#[test]
fn mismatched_methods_are_refused() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"schema_version": 1, "game": "coop_comm", "seed": 0, "expert": {"method": "zerosum_shapley"}}"#,
    );
    let r = magail(&["make-expert", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("expert.method"), "{}", stderr(&r));

    let (_, _, demos) = prepare(dir.path());
    let zs = write_config(
        dir.path(),
        "zs.json",
        &COMM.replace(r#""method": "magail_c""#, r#""method": "magail_zs""#),
    );
    let r = magail(&["train", "--config", s(&zs), "--demos", s(&demos), "--out", s(&out)]);
    assert_eq!(code(&r), 1, "{}", stderr(&r));
    assert!(!out.join("policy.txt").exists());
}

#[test]
fn config_errors_name_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "typo.json",
        r#"{"schema_version": 1, "game": "coop_comm", "seed": 0, "demos": {"episods": 3}}"#,
    );
    let r = magail(&["make-expert", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("demos"), "{}", stderr(&r));
    let r = magail(&["make-expert", "--config", s(&dir.path().join("missing.json")), "--out", s(dir.path())]);
    assert_eq!(code(&r), 1);
    let r = magail(&["frobnicate"]);
    assert_eq!(code(&r), 1);
}

#[test]
fn zero_episodes_are_refused() {
    let dir = TempDir::new().unwrap();
    let (_, expert, _) = prepare(dir.path());
    let cfg = write_config(dir.path(), "m0.json", &COMM.replace(r#""episodes": 20"#, r#""episodes": 0"#));
    let out = dir.path().join("m0");
    let r = magail(&["collect-demos", "--config", s(&cfg), "--expert", s(&expert), "--out", s(&out)]);
    assert_eq!(code(&r), 1);
    assert!(!out.join("demos.txt").exists());
}

#[test]
fn demos_and_training_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let (cfg, expert, demos) = prepare(dir.path());
    let again = dir.path().join("again");
    let r = magail(&["collect-demos", "--config", s(&cfg), "--expert", s(&expert), "--out", s(&again)]);
    assert_eq!(code(&r), 0);
    assert_eq!(std::fs::read(&demos).unwrap(), std::fs::read(again.join("demos.txt")).unwrap());

    let other = dir.path().join("other");
    let r = magail(&["collect-demos", "--config", s(&cfg), "--expert", s(&expert), "--out", s(&other), "--seed", "5"]);
    assert_eq!(code(&r), 0);
    assert_ne!(std::fs::read(&demos).unwrap(), std::fs::read(other.join("demos.txt")).unwrap());

    let mut logs = Vec::new();
    for name in ["t1", "t2"] {
        let out = dir.path().join(name);
        let r = magail(&["train", "--config", s(&cfg), "--demos", s(&demos), "--out", s(&out)]);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
        assert!(out.join("config.json").exists());
        logs.push((std::fs::read(out.join("train_log.csv")).unwrap(), std::fs::read(out.join("policy.txt")).unwrap()));
    }
    assert_eq!(logs[0], logs[1]);
    assert!(String::from_utf8_lossy(&logs[0].0).lines().count() > 1);
}

#[test]
fn training_log_carries_no_true_returns() {
    let dir = TempDir::new().unwrap();
    let (cfg, _, demos) = prepare(dir.path());
    let out = dir.path().join("t");
    let r = magail(&["train", "--config", s(&cfg), "--demos", s(&demos), "--out", s(&out)]);
    assert_eq!(code(&r), 0);
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    for line in log.lines().skip(1) {
        assert!(line.ends_with(",,"), "{line}");
    }
}

#[test]
fn behavior_cloning_stays_below_the_team_optimum() {
    let dir = TempDir::new().unwrap();
    let (cfg, expert, demos) = prepare(dir.path());
    let bc = write_config(dir.path(), "bc.json", &COMM.replace(r#""method": "magail_c""#, r#""method": "bc""#));
    let out = dir.path().join("bc");
    let r = magail(&["train", "--config", s(&bc), "--demos", s(&demos), "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let r = magail(&["evaluate", "--config", s(&cfg), "--policy", s(&out.join("policy.txt")), "--out", s(&out)]);
    assert_eq!(code(&r), 0);
    let learned = read_eval(&out.join("evaluation.csv"));
    let r = magail(&["evaluate", "--config", s(&cfg), "--policy", s(&expert), "--out", s(dir.path())]);
    assert_eq!(code(&r), 0);
    let reference = read_eval(&dir.path().join("evaluation.csv"));
    assert!(learned[0].2 <= reference[0].2 + 1e-9, "{learned:?} vs {reference:?}");
}

#[test]
fn evaluation_matches_the_exact_value() {
    let dir = TempDir::new().unwrap();
    let (cfg, expert, _) = prepare(dir.path());
    let r = magail(&["evaluate", "--config", s(&cfg), "--policy", s(&expert), "--out", s(dir.path())]);
    assert_eq!(code(&r), 0);
    let expert_eval = read_eval(&dir.path().join("evaluation.csv"));
    for &(mean, std, exact) in &expert_eval {
        let se = std / 2000f64.sqrt();
        assert!((mean - exact).abs() <= 3.0 * se + 1e-6, "{mean} {exact} {se}");
    }

    // a uniform policy file of the same shape
    let text = std::fs::read_to_string(&expert).unwrap();
    let mut uniform = String::new();
    let mut width = 0;
    for line in text.lines() {
        let head = line.split_whitespace().next().unwrap_or("");
        if head == "agent" {
            width = line.split_whitespace().nth(3).unwrap().parse::<usize>().unwrap();
            uniform.push_str(line);
        } else if head == "policy" || head == "map" {
            uniform.push_str(line);
        } else {
            uniform.push_str(&vec![format!("{:.17e}", 1.0 / width as f64); width].join(" "));
        }
        uniform.push('\n');
    }
    let upath = dir.path().join("uniform.policy");
    std::fs::write(&upath, uniform).unwrap();
    let out = dir.path().join("u");
    let r = magail(&["evaluate", "--config", s(&cfg), "--policy", s(&upath), "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let uniform_eval = read_eval(&out.join("evaluation.csv"));
    assert!(uniform_eval[0].2 < expert_eval[0].2);
}

#[test]
fn missing_inputs_are_runtime_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "comm.json", COMM);
    let r = magail(&["evaluate", "--config", s(&cfg), "--policy", s(&dir.path().join("nope")), "--out", s(dir.path())]);
    assert_eq!(code(&r), 2);
    let garbage = write_config(dir.path(), "garbage.policy", "policy 1 2\nagent 0 2 2\n");
    let r = magail(&["evaluate", "--config", s(&cfg), "--policy", s(&garbage), "--out", s(dir.path())]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("line"), "{}", stderr(&r));
}

#[test]
fn theory_sweep_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("th");
    let r = magail(&["verify-theory", "--out", s(&out), "--budget", "10"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stdout));
    let csv = std::fs::read_to_string(out.join("theory.csv")).unwrap();
    assert!(csv.starts_with("check_name,instance_id,value,bound,pass\n"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));

    let r = magail(&["verify-theory", "--out", s(&out), "--budget", "10", "--corrupt"]);
    assert_eq!(code(&r), 3);
    let csv = std::fs::read_to_string(out.join("theory.csv")).unwrap();
    assert!(csv.lines().any(|l| l.ends_with(",false")));

    let r = magail(&["verify-theory", "--out", s(&out), "--budget", "0"]);
    assert_eq!(code(&r), 1);
}
