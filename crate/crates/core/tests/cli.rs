//! The `evolgym` binary end to end: artifacts, exit codes and `serve`.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use evolgym::dataset::InstructionSet;
use evolgym::trajectory::Split;

const SMALL: &str = r#"{
  "environments": [
    {"name": "maze", "total": 40, "bc": 10, "eval": 10},
    {"name": "wordle", "total": 40, "bc": 10, "eval": 10}
  ],
  "training": {"iterations": 2}
}"#;

fn evolgym(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evolgym"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = evolgym(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("config.json");
    fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn gen_instructions_writes_the_standard_splits() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(a.path(), &["gen-instructions"]);
    ok(b.path(), &["gen-instructions"]);
    for env in ["craft", "maze", "wordle"] {
        let file = format!("instructions/{env}.jsonl");
        let text = fs::read_to_string(a.path().join(&file)).unwrap();
        assert_eq!(text, fs::read_to_string(b.path().join(&file)).unwrap(), "{env}");
        let set = InstructionSet::read_jsonl(&a.path().join(&file)).unwrap();
        assert_eq!(set.len(), 240);
        assert_eq!(set.split(Split::Eval).len(), 25);
        assert_eq!(set.split(Split::Bc).len(), 55);
        let eval: BTreeSet<u64> = set.split(Split::Eval).iter().map(|i| i.seed).collect();
        assert_eq!(eval.len(), 25);
        assert!(set.evolve_pool().iter().all(|i| !eval.contains(&i.seed)));
    }
    let c = tempfile::tempdir().unwrap();
    ok(c.path(), &["gen-instructions", "--seed", "1"]);
    assert_ne!(
        fs::read_to_string(a.path().join("instructions/maze.jsonl")).unwrap(),
        fs::read_to_string(c.path().join("instructions/maze.jsonl")).unwrap()
    );
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let c = cfg.as_str();
    ok(d, &["gen-instructions", "--config", c]);
    let collected = ok(d, &["collect", "--config", c]);
    assert!(collected.contains("maze"), "{collected}");
    ok(d, &["train-bc", "--config", c]);
    let base_eval = ok(d, &["eval", "--config", c]);
    assert!(base_eval.contains("maze"));
    ok(d, &["evolve", "--config", c]);
    ok(d, &["eval", "--config", c]);
    let table = ok(d, &["report", "--config", c]);
    for f in [
        "d_s.jsonl",
        "run/collect.json",
        "run/base.json",
        "run/base_record.json",
        "run/iter_1.json",
        "run/iter_2.json",
        "run/explored_1.jsonl",
        "run/explored_2.jsonl",
        "run/final.json",
        "run/manifest.json",
        "run/eval.json",
        "run/eval_trajectories.jsonl",
        "run/report.csv",
        "run/report.txt",
    ] {
        assert!(d.join(f).exists(), "missing {f}");
    }
    let csv = fs::read_to_string(d.join("run/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
    assert!(csv.starts_with("iteration,maze,wordle,overall"));
    assert!(table.contains("BC_base") && table.contains("iter 2"), "{table}");
    let eval = fs::read_to_string(d.join("run/eval_trajectories.jsonl")).unwrap();
    assert_eq!(eval.lines().count(), 20);

    // An explicit snapshot is evaluated instead of the latest.
    ok(
        d,
        &[
            "eval",
            "--config",
            c,
            "--policy",
            d.join("run/iter_1.json").to_str().unwrap(),
        ],
    );
}

#[test]
fn user_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);

    let out = evolgym(d, &["train-bc", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());

    let out = evolgym(d, &["evolve", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));

    let bad = d.join("bad.json");
    fs::write(&bad, SMALL.replace("\"training\"", "\"trainng\"")).unwrap();
    let out = evolgym(d, &["gen-instructions", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trainng"));

    fs::write(&bad, SMALL.replace("\"iterations\": 2", "\"iterations\": 2, \"lr\": 1")).unwrap();
    assert_eq!(
        evolgym(d, &["gen-instructions", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );

    fs::write(&bad, SMALL.replace("\"bc\": 10", "\"bc\": 35")).unwrap();
    assert_eq!(
        evolgym(d, &["gen-instructions", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );

    let missing = d.join("nope.json");
    assert_eq!(
        evolgym(d, &["collect", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(evolgym(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(evolgym(d, &["serve", "--port", "maze"]).status.code(), Some(1));
}

#[test]
fn serve_announces_each_environment_and_answers() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_evolgym"))
        .args(["serve", "--out"])
        .arg(dir.path())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let mut urls = Vec::new();
    for _ in 0..3 {
        let line = lines.next().unwrap().unwrap();
        let parts: Vec<&str> = line.split(' ').collect();
        assert_eq!(parts[0], "READY", "{line}");
        urls.push((parts[1].to_string(), parts[2].to_string()));
    }
    let names: Vec<&str> = urls.iter().map(|u| u.0.as_str()).collect();
    assert_eq!(names, ["craft", "maze", "wordle"]);
    let http = reqwest::blocking::Client::new();
    for (env, url) in &urls {
        let resp = http
            .post(format!("{url}/createEnv"))
            .json(&serde_json::json!({"env": env, "seed": 7}))
            .send()
            .unwrap();
        assert_eq!(resp.status().as_u16(), 200, "{env}");
        let wrong = if env == "maze" { "wordle" } else { "maze" };
        let resp = http
            .post(format!("{url}/createEnv"))
            .json(&serde_json::json!({"env": wrong, "seed": 7}))
            .send()
            .unwrap();
        assert_eq!(resp.status().as_u16(), 404, "{env} serves only itself");
    }
    child.kill().unwrap();
    child.wait().unwrap();
}

#[test]
fn serve_fails_fast_on_an_occupied_port() {
    let dir = tempfile::tempdir().unwrap();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port();
    let out = evolgym(dir.path(), &["serve", "--port", &format!("maze={port}")]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("maze") && err.contains(&port.to_string()), "{err}");

    let out = evolgym(dir.path(), &["serve", "--port", "chess=0"]);
    assert_eq!(out.status.code(), Some(1));
}
