use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TOY: &str = "stratum,arm,y\n1,1,3\n1,1,5\n1,2,1\n1,2,1\n";

fn stratfact(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stratfact"))
        .args(args)
        .env("STRATFACT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr holds one JSON object")
}

#[test]
fn analyze_toy_unadj() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "toy.csv", TOY);
    let out = dir.path().join("r.json");
    let o = stratfact(&[
        "analyze",
        "--data",
        s(&data),
        "--k",
        "1",
        "--method",
        "unadj",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out);
    assert_eq!(r["results"][0]["tau_hat"], serde_json::json!([3.0]));
    assert_eq!(r["results"][0]["method"], "unadj");
    assert_eq!(r["config"]["K"], 1);
    assert_eq!(r["config"]["alpha"], 0.05);
}

#[test]
fn simulate_records_reps() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("m.json");
    let draws = dir.path().join("d.csv");
    let o = stratfact(&[
        "simulate",
        "--case",
        "1",
        "--reps",
        "10",
        "--seed",
        "5",
        "--out",
        s(&out),
        "--emit-draws",
        s(&draws),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out);
    assert_eq!(m["metrics"]["reps"], 10);
    assert_eq!(m["config"]["reps"], 10);
    assert_eq!(m["config"]["seed"], 5);
    let inter = m["metrics"]["methods"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["method"] == "inter")
        .expect("inter reported");
    assert_eq!(inter["available"], false);
    let lines = fs::read_to_string(&draws).unwrap().lines().count();
    assert_eq!(lines, 1 + 10 * 3);
}

#[test]
fn inter_guard_exits_two() {
    let dir = TempDir::new().unwrap();
    let mut body = String::from("stratum,arm,y,x1,x2,x3\n");
    for i in 0..3 {
        body += &format!("1,1,{i},{i},{},{}\n", i * i, 2 - i);
    }
    for i in 0..6 {
        body += &format!("1,2,{},{i},{},{}\n", i + 1, (i * 7) % 5, i % 2);
    }
    let data = write(&dir, "d.csv", &body);
    let o = stratfact(&[
        "analyze",
        "--data",
        s(&data),
        "--k",
        "1",
        "--method",
        "inter",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["error"]["kind"], "precondition");
    assert!(e["error"]["message"]
        .as_str()
        .unwrap()
        .contains("inter requires n_[m]q ≥ p+2"));
}

#[test]
fn singular_gram_exits_three() {
    let dir = TempDir::new().unwrap();
    let data = write(
        &dir,
        "d.csv",
        "stratum,arm,y,x\n1,1,1,0\n1,1,3,0\n1,2,0,0\n1,2,4,0\n",
    );
    let o = stratfact(&["analyze", "--data", s(&data), "--k", "1", "--method", "adj"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"]["kind"], "singular");
}

#[test]
fn bad_input_exits_two() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", "stratum,arm,y\n1,1,3\n1,1,x\n1,2,1\n1,2,1\n");
    let o = stratfact(&["analyze", "--data", s(&data), "--k", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"]["kind"], "parse");
    let o = stratfact(&["analyze", "--data", s(&data), "--k", "1", "--alpha", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_file_exits_one() {
    let o = stratfact(&["analyze", "--data", "/nonexistent/data.csv", "--k", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"]["kind"], "io");
}

/// A case-1 sample exported by `simulate` and analyzed with every method.
fn exported_sample(dir: &TempDir) -> PathBuf {
    let sample = dir.path().join("sample.csv");
    let o = stratfact(&[
        "simulate",
        "--case",
        "1",
        "--reps",
        "1",
        "--seed",
        "11",
        "--emit-sample",
        s(&sample),
        "--out",
        s(&dir.path().join("m.json")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    sample
}

#[test]
fn unadj_block_is_independent_of_other_methods() {
    let dir = TempDir::new().unwrap();
    let sample = exported_sample(&dir);
    let alone = dir.path().join("alone.json");
    let all = dir.path().join("all.json");
    let run = |methods: &str, out: &Path| {
        let o = stratfact(&[
            "analyze",
            "--data",
            s(&sample),
            "--k",
            "2",
            "--method",
            methods,
            "--out",
            s(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("unadj", &alone);
    run("unadj,adj,cond", &all);
    let a = json(&alone);
    let b = json(&all);
    assert_eq!(a["results"][0], b["results"][0]);
    assert_eq!(b["results"].as_array().unwrap().len(), 3);
    for r in b["results"].as_array().unwrap() {
        assert_eq!(r["F"], 3);
        assert_eq!(r["region"]["effects"], serde_json::json!([1, 2, 3]));
    }
}

#[test]
fn outputs_are_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let sample = exported_sample(&dir);
    let sample_again = dir.path().join("again.csv");
    let o = stratfact(&[
        "simulate",
        "--case",
        "1",
        "--reps",
        "1",
        "--seed",
        "11",
        "--emit-sample",
        s(&sample_again),
        "--out",
        s(&dir.path().join("m2.json")),
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read(&sample).unwrap(), fs::read(&sample_again).unwrap());

    let read_run = |args: &[&str], name: &str, threads: &str| {
        let out = dir.path().join(name);
        let mut full: Vec<&str> = args.to_vec();
        full.extend(["--out", s(&out)]);
        let o = Command::new(env!("CARGO_BIN_EXE_stratfact"))
            .args(&full)
            .env("STRATFACT_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out).unwrap()
    };
    let sim = ["simulate", "--case", "4", "--reps", "40", "--seed", "2"];
    assert_eq!(
        read_run(&sim, "s1.json", "1"),
        read_run(&sim, "s2.json", "3")
    );
    let ana = [
        "analyze",
        "--data",
        s(&sample),
        "--k",
        "2",
        "--method",
        "unadj,adj,cond",
    ];
    assert_eq!(
        read_run(&ana, "a1.json", "1"),
        read_run(&ana, "a2.json", "0")
    );
}

#[test]
fn assign_is_seed_deterministic() {
    let dir = TempDir::new().unwrap();
    let plan = write(
        &dir,
        "plan.csv",
        "stratum_id,n,n_arm1,n_arm2,n_arm3,n_arm4\nA,8,2,2,2,2\nB,5,2,1,1,1\n",
    );
    let a = stratfact(&["assign", "--strata", s(&plan), "--seed", "42"]);
    let b = stratfact(&["assign", "--strata", s(&plan), "--seed", "42"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("unit_id,stratum_id,arm"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 13);
    let count = |id: &str, arm: &str| rows.iter().filter(|r| r[1] == id && r[2] == arm).count();
    assert_eq!(
        [
            count("A", "1"),
            count("A", "4"),
            count("B", "1"),
            count("B", "2")
        ],
        [2, 2, 2, 1]
    );
}

#[test]
fn region_reports_membership() {
    let dir = TempDir::new().unwrap();
    let sample = exported_sample(&dir);
    let out = dir.path().join("r.json");
    let o = stratfact(&[
        "region",
        "--data",
        s(&sample),
        "--k",
        "2",
        "--method",
        "adj",
        "--effects",
        "1,2",
        "--point",
        "0,0",
        "--point",
        "-50,50",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out);
    assert_eq!(r["region"]["effects"], serde_json::json!([1, 2]));
    assert!(r["region"]["area"].as_f64().unwrap() > 0.0);
    let center: Vec<f64> = serde_json::from_value(r["region"]["center"].clone()).unwrap();
    assert_eq!(r["points"][1]["contains"], false);
    assert_eq!(r["labels"], serde_json::json!(["f1", "f2"]));
    assert_eq!(center.len(), 2);
}
