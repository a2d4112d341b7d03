use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tasb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tasb"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL: &str = r#"
[synthetic]
topics = 6
passages_per_topic = 24
train_queries_per_topic = 10
val_queries_per_topic = 2
test_queries_per_topic = 2

[baseline]
steps = 60

[cluster]
k = 3

[sampler]
batch_size = 8

[train]
max_steps = 40
eval_interval = 20

[validation]
sample_size = 12
top_k = 20
"#;

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn unknown_strategy_is_a_usage_error() {
    let out = tasb(&["train", "--strategy", "bogus"]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn unknown_teacher_is_a_usage_error() {
    let out = tasb(&["train", "--teacher", "colbert"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("colbert"));
}

#[test]
fn missing_config_fails_with_diagnostic() {
    let out = tasb(&["--config", "/nonexistent/tasb.toml", "config"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/tasb.toml"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[train]\nmax_stpes = 10\n").unwrap();
    let out = tasb(&["--config", path.to_str().unwrap(), "config"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("max_stpes"));
}

#[test]
fn printed_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = ok(&tasb(&["--seed", "9", "config"]));
    assert!(first.contains("seed = 9"));
    let path = dir.path().join("printed.toml");
    fs::write(&path, &first).unwrap();
    let second = ok(&tasb(&["--config", path.to_str().unwrap(), "config"]));
    assert_eq!(first, second);
}

#[test]
fn eval_matches_hand_computed_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run.txt");
    let qrels = dir.path().join("qrels.txt");
    // q1: only relevant passage (grade 3) at rank 2.
    // q2: grade 1 at rank 1, grade 2 at rank 2.
    fs::write(
        &run,
        "q1 Q0 a 1 3.0 t\nq1 Q0 b 2 2.0 t\nq1 Q0 c 3 1.0 t\nq2 Q0 x 1 3.0 t\nq2 Q0 y 2 2.0 t\n",
    )
    .unwrap();
    fs::write(&qrels, "q1 0 b 3\nq2 0 x 1\nq2 0 y 2\n").unwrap();
    let out_dir = dir.path().join("out");
    let stdout = ok(&tasb(&[
        "--out",
        out_dir.to_str().unwrap(),
        "eval",
        "--run",
        run.to_str().unwrap(),
        "--qrels",
        qrels.to_str().unwrap(),
    ]));

    let l = |r: f64| (r + 1.0).log2();
    let ndcg_q1 = 1.0 / l(2.0);
    let ndcg_q2 = (1.0 + 2.0 / l(2.0)) / (2.0 + 1.0 / l(2.0));
    let table = fs::read_to_string(out_dir.join("eval").join("ndcg_at_10.tsv")).unwrap();
    let values: Vec<(String, f64)> = table
        .lines()
        .skip(1)
        .map(|line| {
            let (q, v) = line.split_once('\t').unwrap();
            (q.to_owned(), v.parse().unwrap())
        })
        .collect();
    let expected = [("q1", ndcg_q1), ("q2", ndcg_q2), ("all", (ndcg_q1 + ndcg_q2) / 2.0)];
    assert_eq!(values.len(), expected.len());
    for ((q, v), (eq, ev)) in values.iter().zip(expected) {
        assert_eq!(q, eq);
        assert!((v - ev).abs() < 1e-6, "{q}: {v} vs {ev}");
    }
    let mrr = fs::read_to_string(out_dir.join("eval").join("mrr_at_10.tsv")).unwrap();
    assert!(mrr.contains("q2\t0.500000"), "{mrr}");
    assert!(stdout.contains("MRR@10\t0.5000"), "{stdout}");
}

#[test]
fn fuse_with_full_weight_keeps_first_run_order() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    let fused = dir.path().join("fused.txt");
    fs::write(&a, "q Q0 p1 1 9.0 a\nq Q0 p2 2 4.0 a\nq Q0 p3 3 1.0 a\n").unwrap();
    fs::write(&b, "q Q0 p3 1 5.0 b\nq Q0 p4 2 2.0 b\n").unwrap();
    ok(&tasb(&[
        "fuse",
        "--run-a",
        a.to_str().unwrap(),
        "--run-b",
        b.to_str().unwrap(),
        "--weight",
        "1",
        "--output",
        fused.to_str().unwrap(),
    ]));
    let order: Vec<String> = fs::read_to_string(&fused)
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().nth(2).unwrap().to_owned())
        .filter(|p| p != "p4")
        .collect();
    assert_eq!(order, ["p1", "p2", "p3"]);
}

#[test]
fn cluster_twice_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        ok(&tasb(&[
            "--config",
            &config,
            "--seed",
            "4",
            "--out",
            out.to_str().unwrap(),
            "cluster",
        ]));
        outputs.push((
            fs::read(out.join("clusters.bin")).unwrap(),
            fs::read(out.join("clusters.tsv")).unwrap(),
        ));
    }
    assert!(!outputs[0].0.is_empty());
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("out");
    let stdout = ok(&tasb(&[
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
        "train",
        "--strategy",
        "tas",
        "--teacher",
        "inbatch",
        "--steps",
        "30",
    ]));
    assert!(stdout.contains("best step"), "{stdout}");
    ok(&tasb(&["--config", &config, "--out", out.to_str().unwrap(), "index"]));
    let searched = ok(&tasb(&[
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
        "search",
        "--k",
        "10",
    ]));
    assert!(searched.contains("searched 12 queries"), "{searched}");
    let run = fs::read_to_string(out.join("run.txt")).unwrap();
    assert_eq!(run.lines().count(), 12 * 10);
    let evaluated = ok(&tasb(&["--config", &config, "--out", out.to_str().unwrap(), "eval"]));
    assert!(evaluated.contains("nDCG@10"), "{evaluated}");
    assert!(out.join("train").join("train_log.tsv").is_file());
}
