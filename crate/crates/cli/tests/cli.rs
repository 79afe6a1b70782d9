use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use tflow_core::dataio::load_binary;

fn tflow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tflow"))
        .args(args)
        .current_dir(dir)
        .env_remove("TFLOW_THREADS")
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = tflow(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn error_code(out: &Output) -> String {
    assert_eq!(out.status.code(), Some(1));
    let body: Value = serde_json::from_slice(&out.stderr).expect("error JSON on stderr");
    body["error"].as_str().unwrap().to_owned()
}

fn synth(dir: &Path, name: &str, seed: &str) {
    ok(
        &[
            "synth", "--classes", "3", "--dim", "4", "--per-class", "40", "--sep", "3", "--seed",
            seed, "--out", name,
        ],
        dir,
    );
}

fn all_numbers_finite(v: &Value) -> bool {
    match v {
        Value::Number(n) => n.as_f64().is_some_and(f64::is_finite),
        Value::Array(a) => a.iter().all(all_numbers_finite),
        Value::Object(o) => o.values().all(all_numbers_finite),
        Value::Null => true,
        _ => true,
    }
}

#[test]
fn flow_report_has_contract_fields() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "d.csv", "1");
    ok(
        &[
            "flow", "--reps", "d.csv", "--labels", "labels", "--kernel", "gaussian",
            "--replicates", "10", "--seed", "0", "--out", "rep.json",
        ],
        dir.path(),
    );
    let r = json(dir.path().join("rep.json"));
    let per_bw = r["per_bandwidth"].as_object().unwrap();
    assert_eq!(per_bw.len(), 5);
    let sum: f64 = per_bw.values().map(|v| v.as_f64().unwrap()).sum();
    assert!((sum - r["total"].as_f64().unwrap()).abs() <= 1e-12);
    let bws: Vec<f64> = per_bw.keys().map(|k| k.parse().unwrap()).collect();
    assert!(bws.windows(2).all(|w| w[0] < w[1]));
    let base = r["kernel"]["base_h"].as_f64().unwrap();
    assert_eq!(bws[2], base);

    assert_eq!(r["bootstrap"]["replicates"], 10);
    assert_eq!(r["bootstrap"]["samples"].as_array().unwrap().len(), 10);
    assert_eq!(r["m"], 120);
    assert_eq!(r["classes"], 3);
    assert_eq!(r["kernel"]["family"], "gaussian");
    assert_eq!(r["warnings"].as_array().unwrap().len(), 0);
    assert_eq!(r["class_pairs"].as_array().unwrap().len(), 6);
    assert_eq!(r["config"]["replicates"], 10);
    assert_eq!(r["config"]["bandwidth_base"], "auto");
    assert!(r["metadata"]["timestamp"].as_u64().is_some());
    assert!(all_numbers_finite(&r));
}

#[test]
fn identical_runs_give_identical_report_bodies() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "d.csv", "2");
    let run = |out: &str, threads: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_tflow"))
            .args(["flow", "--reps", "d.csv", "--labels", "label", "--out", out])
            .current_dir(dir.path())
            .env("TFLOW_THREADS", threads)
            .env("SOURCE_DATE_EPOCH", "1700000000")
            .status()
            .unwrap();
        assert!(status.success());
        fs::read(dir.path().join(out)).unwrap()
    };
    let a = run("a.json", "1");
    let b = run("b.json", "1");
    let c = run("c.json", "3");
    assert_eq!(a, b);
    assert_eq!(a, c);

    // Without a pinned clock only the metadata may differ.
    ok(&["flow", "--reps", "d.csv", "--labels", "label", "--out", "d.json"], dir.path());
    let mut x = json(dir.path().join("a.json"));
    let mut y = json(dir.path().join("d.json"));
    x.as_object_mut().unwrap().remove("metadata");
    y.as_object_mut().unwrap().remove("metadata");
    assert_eq!(x, y);
}

#[test]
fn hand_case_through_the_cli() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("h.csv"), "label,f0\na,0\na,0\nb,1\nb,1\n").unwrap();
    let out = ok(
        &[
            "flow", "--reps", "h.csv", "--labels", "label", "--bandwidths", "1",
            "--bandwidth-base", "1", "--replicates", "0",
        ],
        dir.path(),
    );
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let expected = (2.0 / 3.0) * (2.0 - 2.0 * (-0.5f64).exp());
    assert!((r["total"].as_f64().unwrap() - expected).abs() < 1e-12);
    assert_eq!(r["bootstrap"], Value::Null);
    assert_eq!(r["class_pairs"][0]["c"], "a");
}

#[test]
fn labels_from_separate_file_and_pseudo_flow() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "d.csv", "3");
    ok(&["cluster", "--reps", "d.csv", "--method", "kmeans", "--k", "3", "--out", "l.csv"], dir.path());
    let labels = fs::read_to_string(dir.path().join("l.csv")).unwrap();
    assert!(labels.starts_with("index,cluster\n"));
    assert_eq!(labels.lines().count(), 121);

    ok(
        &["flow", "--reps", "d.csv", "--labels", "l.csv", "--replicates", "0", "--out", "a.json"],
        dir.path(),
    );
    ok(
        &[
            "pseudo-flow", "--reps", "d.csv", "--pseudo-labels", "l.csv", "--replicates", "0",
            "--out", "b.json",
        ],
        dir.path(),
    );
    let (a, b) = (json(dir.path().join("a.json")), json(dir.path().join("b.json")));
    assert_eq!(a["total"], b["total"]);
    assert_eq!(b["pseudo"]["provenance"], "external");

    for method in ["kmeans", "gmm", "agglo"] {
        ok(
            &[
                "flow", "--reps", "d.csv", "--labels", "label", "--pseudo-from", method,
                "--replicates", "0", "--out", "p.json",
            ],
            dir.path(),
        );
        let p = json(dir.path().join("p.json"));
        assert_eq!(p["pseudo"]["clusters"], 3);
        assert_eq!(p["config"]["clustering"]["k"], 3);
        assert!(p["pseudo"]["accuracy"].as_f64().unwrap() > 0.5);
    }
}

fn write_report(dir: &Path, name: &str, total: f64, std: f64, m: usize) {
    let body = serde_json::json!({
        "total": total,
        "m": m,
        "bootstrap": { "mean": total, "std": std, "replicates": 10 },
    });
    fs::write(dir.join(name), body.to_string()).unwrap();
}

#[test]
fn compare_recommendations() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let rec = |a: &str, b: &str| -> Value {
        serde_json::from_slice(&ok(&["compare", "--a", a, "--b", b], d).stdout).unwrap()
    };

    write_report(d, "sl.json", 1.21, 0.02, 500);
    write_report(d, "ssl.json", 0.96, 0.01, 500);
    assert_eq!(rec("sl.json", "ssl.json")["recommendation"], "supervised");

    write_report(d, "sl.json", 0.99, 0.02, 500);
    write_report(d, "ssl.json", 1.05, 0.03, 500);
    assert_eq!(rec("sl.json", "ssl.json")["recommendation"], "self_supervised");

    write_report(d, "ssl.json", 0.99, 0.03, 500);
    let r = rec("sl.json", "ssl.json");
    assert_eq!(r["recommendation"], "inconclusive");
    assert_eq!(r["inconclusive"], true);

    write_report(d, "ssl.json", 0.99, 0.03, 400);
    assert_eq!(
        error_code(&tflow(&["compare", "--a", "sl.json", "--b", "ssl.json"], d)),
        "MismatchedSampleCount"
    );
    fs::write(d.join("bad.json"), "{ not json").unwrap();
    assert_eq!(
        error_code(&tflow(&["compare", "--a", "sl.json", "--b", "bad.json"], d)),
        "MalformedReport"
    );
}

#[test]
fn split_plan_counts_and_pairings() {
    let dir = TempDir::new().unwrap();
    let mut tsv = String::new();
    for s in 0..30 {
        for c in 0..8 {
            tsv.push_str(&format!("super{s}\tsub{s}_{c}\n"));
        }
    }
    fs::write(dir.path().join("h.tsv"), tsv).unwrap();
    let args = [
        "split", "--hierarchy", "h.tsv", "--labeled-per-super", "6", "--unlabeled-per-super",
        "2", "--seed", "0", "--out", "plan.json",
    ];
    ok(&args, dir.path());
    let plan = json(dir.path().join("plan.json"));
    for (role, n) in [("l1", 90), ("l2", 90), ("l15", 90), ("u1", 30), ("u2", 30)] {
        assert_eq!(plan[role].as_array().unwrap().len(), n, "{role}");
    }
    let pairs = plan["pairings"].as_array().unwrap();
    assert_eq!(pairs.len(), 6);
    assert_eq!(pairs[0], serde_json::json!({"labeled": "l1", "unlabeled": "u1", "similarity": "high"}));
    assert_eq!(pairs[2]["similarity"], "medium");
    assert_eq!(pairs[5]["similarity"], "low");

    fs::write(dir.path().join("odd.tsv"), "a\tx\na\ty\na\tz\n").unwrap();
    let mut odd = args;
    odd[2] = "odd.tsv";
    odd[4] = "1";
    odd[6] = "1";
    assert_eq!(error_code(&tflow(&odd, dir.path())), "OddSuperclassCount");
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "a.csv", "7");
    synth(dir.path(), "b.csv", "7");
    synth(dir.path(), "c.csv", "8");
    let read = |n: &str| fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
    let text = String::from_utf8(read("a.csv")).unwrap();
    assert!(text.starts_with("label,f0,f1,f2,f3\n"));
}

#[test]
fn mix_boundaries_and_sinkhorn_source() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("gt.csv"), "index,label\n0,1\n1,0\n2,2\n").unwrap();
    fs::write(d.join("pl.csv"), "f0,f1,f2\n0.2,0.5,0.3\n0.1,0.1,0.8\n0.4,0.4,0.2\n").unwrap();

    ok(&["mix", "--gt", "gt.csv", "--pl", "pl.csv", "--alpha", "1", "--out", "t1.tfmx"], d);
    let t1 = load_binary(d.join("t1.tfmx")).unwrap();
    assert_eq!(t1.to_rows(), vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]);

    ok(&["mix", "--gt", "gt.csv", "--pl", "pl.csv", "--alpha", "0", "--out", "t0.tfmx"], d);
    let t0 = load_binary(d.join("t0.tfmx")).unwrap();
    assert_eq!(t0.row(1), &[0.1, 0.1, 0.8]);

    fs::write(d.join("logits.csv"), "f0,f1,f2\n1,0,0\n0,1,0\n0,0,1\n").unwrap();
    ok(
        &[
            "mix", "--gt", "gt.csv", "--pl-from-logits", "logits.csv", "--alpha", "0.25", "--out",
            "t.tfmx",
        ],
        d,
    );
    let t = load_binary(d.join("t.tfmx")).unwrap();
    for row in t.iter_rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    let out = tflow(&["mix", "--gt", "gt.csv", "--pl", "pl.csv", "--alpha", "1.5", "--out", "x.tfmx"], d);
    assert_eq!(error_code(&out), "AlphaOutOfRange");
}

#[test]
fn plot_data_appends_rows() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write_report(d, "r.json", 0.5, 0.01, 10);
    ok(&["plot-data", "--report", "r.json", "--accuracy", "0.88", "--out", "pts.csv"], d);
    ok(&["plot-data", "--report", "r.json", "--out", "pts.csv"], d);
    ok(&["plot-data", "--report", "r.json", "--tag", "x,y", "--out", "pts.csv"], d);
    let text = fs::read_to_string(d.join("pts.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines,
        vec![
            "tag,flow,flow_std,accuracy",
            "r,0.5,0.01,0.88",
            "r,0.5,0.01,",
            "\"x,y\",0.5,0.01,",
        ]
    );
}

#[test]
fn errors_and_usage() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let out = tflow(&["flow", "--no-such-flag"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(tflow(&["bogus"], d).status.code(), Some(2));

    fs::write(d.join("bad.csv"), "label,f0\n0,1\n0,abc\n").unwrap();
    assert_eq!(error_code(&tflow(&["flow", "--reps", "bad.csv", "--labels", "label"], d)), "ParseValue");

    fs::write(d.join("small.csv"), "label,f0\n0,1\n0,2\n1,3\n").unwrap();
    assert_eq!(
        error_code(&tflow(&["flow", "--reps", "small.csv", "--labels", "label"], d)),
        "ClassTooSmall"
    );
    assert_eq!(
        error_code(&tflow(&["flow", "--reps", "missing.csv", "--labels", "label"], d)),
        "IoFailure"
    );
    assert_eq!(
        error_code(&tflow(&["flow", "--reps", "small.csv", "--labels", "nope"], d)),
        "InvalidConfig"
    );
    fs::write(d.join("p.csv"), "label,f0,f1\n0,0.5,0.5\n0,0.7,0.2\n").unwrap();
    assert_eq!(
        error_code(&tflow(&["flow", "--reps", "p.csv", "--labels", "label", "--probabilities"], d)),
        "NotASimplexRow"
    );
}

#[test]
fn single_class_warns_and_reports_zero() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("one.csv"), "label,f0\n0,1\n0,2\n0,4\n").unwrap();
    let out = ok(
        &["flow", "--reps", "one.csv", "--labels", "label", "--replicates", "0"],
        dir.path(),
    );
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["total"], 0.0);
    assert_eq!(r["warnings"].as_array().unwrap().len(), 1);
}
