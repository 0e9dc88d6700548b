mod common;
#[path = "../../core/tests/support/mock_server.rs"]
mod mock_server;

use std::fs;

use common::*;
use mock_server::MockServer;
use serde_json::{json, Value};
use superfilter::scoring::read_scores;

#[test]
fn uniform_backend_scores_unit_ifd() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_dataset(d, "toy.json", 30, 1);
    let out = run_ok(d, &["score", "--dataset", "toy.json", "--backend", "uniform:50257", "-o", "s.jsonl"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("samples/s"), "{stdout}");

    let file = read_scores(&d.join("s.jsonl")).unwrap();
    assert_eq!(file.scores.len(), 30);
    assert_eq!(file.header.unwrap().backend, "uniform-50257");
    for s in &file.scores {
        assert!((s.ifd - 1.0).abs() < 1e-9);
        assert!((s.ppl_cond - 50257.0).abs() < 1e-9 * 50257.0);
    }
    let manifest = read_json(&d.join("s.jsonl.manifest.json"));
    assert_eq!(manifest["command"], "score");
    assert_eq!(manifest["config"]["backend"], "uniform:50257");
    assert_eq!(manifest["input_digests"]["toy.json"].as_str().unwrap().len(), 64);
    assert!(manifest["output_digests"]["s.jsonl"].is_string());
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_dataset(d, "toy.json", 10, 2);
    write_score_file(d, "s.jsonl", &random_ifds(10, 2), "m");
    fs::write(d.join("bad.jsonl"), "{\"id\": \"000000\", \"ifd\": \"x\"}\n").unwrap();
    fs::write(d.join("bad.toml"), "[select]\nratio = \"high\"\n").unwrap();

    let cases: &[(&[&str], i32)] = &[
        (&["score", "--backend", "uniform:10", "-o", "x.jsonl"], 2),
        (&["score", "--dataset", "toy.json", "--backend", "gpt2", "-o", "x.jsonl"], 2),
        (&["score", "--dataset", "toy.json", "--backend", "uniform:10", "--template", "nope", "-o", "x"], 2),
        (&["select", "--dataset", "toy.json", "--scores", "s.jsonl", "--ratio", "1.5", "-o", "x.json"], 2),
        (&["select", "--dataset", "toy.json", "--scores", "s.jsonl", "--ratio", "0.01", "-o", "x.json"], 2),
        (&["--config", "bad.toml", "select", "--dataset", "toy.json"], 2),
        (&["score", "--dataset", "missing.json", "--backend", "uniform:10", "-o", "x.jsonl"], 4),
        (&["select", "--dataset", "toy.json", "--scores", "bad.jsonl", "--ratio", "0.5", "-o", "x.json"], 4),
        (&["score", "--dataset", "toy.json", "--backend", "remote:http://127.0.0.1:9", "-o", "x.jsonl"], 3),
    ];
    for (args, code) in cases {
        let out = run(d, args);
        assert_eq!(out.status.code(), Some(*code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(!d.join("x.json").exists());
}

#[test]
fn full_ratio_without_cap_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = write_dataset(d, "toy.jsonl", 40, 3);
    write_score_file(d, "s.jsonl", &random_ifds(40, 3), "m");
    run_ok(d, &["select", "--dataset", "toy.jsonl", "--scores", "s.jsonl", "--ratio", "1.0", "--ifd-cap", "inf", "-o", "all.jsonl"]);
    assert_eq!(ids_of(&d.join("all.jsonl")), ids_of(&data));
    let manifest = read_json(&d.join("all.jsonl.manifest.json"));
    assert_eq!(manifest["config"]["ifd_cap"], "inf");
}

#[test]
fn nested_ratios_give_nested_subsets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_dataset(d, "toy.json", 300, 4);
    let ifds = random_ifds(300, 4);
    write_score_file(d, "s.jsonl", &ifds, "m");
    let mut previous = Default::default();
    for (i, ratio) in ["0.05", "0.10", "0.20", "0.50"].iter().enumerate() {
        let out = format!("sub{i}.json");
        run_ok(d, &["select", "--dataset", "toy.json", "--scores", "s.jsonl", "--ratio", ratio, "-o", &out]);
        let ids = ids_of(&d.join(&out));
        assert!(ids.is_superset(&previous));
        for id in &ids {
            assert!(ifds[id.parse::<usize>().unwrap()] < 1.0);
        }
        previous = ids;
    }
}

#[test]
fn select_writes_highest_ifd_first() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_dataset(d, "toy.json", 6, 5);
    write_score_file(d, "s.jsonl", &[0.3, 0.9, 1.2, 0.5, 0.9, 0.1], "m");
    run_ok(d, &["select", "--dataset", "toy.json", "--scores", "s.jsonl", "--ratio", "0.5", "-o", "sub.json"]);
    let subset = read_json(&d.join("sub.json"));
    let ids: Vec<&str> = subset.as_array().unwrap().iter().map(|r| r["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["000001", "000004", "000003"]);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_dataset(d, "toy.json", 100, 6);
    write_score_file(d, "s.jsonl", &random_ifds(100, 6), "m");
    fs::write(d.join("sf.toml"), "[select]\ndataset = \"toy.json\"\nscores = \"s.jsonl\"\nratio = 0.1\nifd_cap = inf\n").unwrap();
    run_ok(d, &["--config", "sf.toml", "select", "-o", "a.json"]);
    run_ok(d, &["--config", "sf.toml", "select", "--ratio", "0.2", "-o", "b.json"]);
    assert_eq!(read_json(&d.join("a.json.manifest.json"))["summary"]["budget"], 10);
    let b = read_json(&d.join("b.json.manifest.json"));
    assert_eq!(b["summary"]["budget"], 20);
    assert_eq!(b["config"]["ifd_cap"], "inf");
}

#[test]
fn compare_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_score_file(d, "s.jsonl", &random_ifds(200, 7), "m");
    let out = run_ok(d, &["compare", "--scores-a", "s.jsonl", "--scores-b", "s.jsonl"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["spearman_ppl"], 1.0);
    assert_eq!(report["spearman_ifd"], 1.0);
    assert_eq!(report["overlap"], json!({"0.05": 1.0, "0.10": 1.0, "0.15": 1.0}));
    assert_eq!(report["n_common"], 200);
}

#[test]
fn compare_hand_designed_inversions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // ranks b = [2, 1, 3, 5, 4]: sum d^2 = 4, rho = 1 - 6*4 / (5*24) = 0.8
    write_score_file(d, "a.jsonl", &[0.1, 0.2, 0.3, 0.4, 0.5], "a");
    write_score_file(d, "b.jsonl", &[0.2, 0.1, 0.3, 0.5, 0.4], "b");
    run_ok(d, &["compare", "--scores-a", "a.jsonl", "--scores-b", "b.jsonl", "--budgets", "0.2,0.4", "-o", "c.json", "--quantiles-csv", "q.csv"]);
    let report = read_json(&d.join("c.json"));
    assert!((report["spearman_ifd"].as_f64().unwrap() - 0.8).abs() < 1e-12);
    assert!((report["spearman_ppl"].as_f64().unwrap() - 0.8).abs() < 1e-12);
    // top-1: a picks 000004, b picks 000003; top-2: {3,4} both
    assert_eq!(report["overlap"], json!({"0.20": 0.0, "0.40": 1.0}));
    assert_eq!(report["scorer_a"], "a");
    let csv = fs::read_to_string(d.join("q.csv")).unwrap();
    assert!(csv.starts_with("percentile,a:ppl_cond,a:ifd,b:ppl_cond,b:ifd\n1,"), "{csv}");
    assert!(d.join("c.json.manifest.json").exists());
}

#[test]
fn compare_uniform_backends_reports_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_dataset(d, "toy.json", 20, 8);
    run_ok(d, &["score", "--dataset", "toy.json", "--backend", "uniform:100", "-o", "u100.jsonl"]);
    run_ok(d, &["score", "--dataset", "toy.json", "--backend", "uniform:50257", "-o", "u50k.jsonl"]);
    let out = run_ok(d, &["compare", "--scores-a", "u100.jsonl", "--scores-b", "u50k.jsonl"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["spearman_ifd"].is_null());
    let notes = report["notes"].as_array().unwrap();
    assert!(notes.iter().any(|n| n.as_str().unwrap().contains("ifd is degenerate")), "{notes:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate"));
}

#[test]
fn diversify_is_within_the_twenty_percent_selection() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_dataset(d, "toy.json", 500, 9);
    write_score_file(d, "s.jsonl", &random_ifds(500, 9), "m");
    run_ok(d, &["select", "--dataset", "toy.json", "--scores", "s.jsonl", "--ratio", "0.2", "-o", "sel.json"]);
    let args = ["diversify", "--dataset", "toy.json", "--scores", "s.jsonl", "--embedder", "hashed-bow:64"];
    run_ok(d, &[&args[..], &["-o", "div1.json", "--embeddings-cache", "emb.bin"]].concat());
    run_ok(d, &[&args[..], &["-o", "div2.json", "--embeddings-cache", "emb.bin"]].concat());
    run_ok(d, &[&args[..], &["-o", "div3.json"]].concat());

    let chosen = ids_of(&d.join("div1.json"));
    assert_eq!(chosen.len(), 10);
    assert!(chosen.is_subset(&ids_of(&d.join("sel.json"))));
    let first = fs::read(d.join("div1.json")).unwrap();
    assert_eq!(first, fs::read(d.join("div2.json")).unwrap());
    assert_eq!(first, fs::read(d.join("div3.json")).unwrap());
    let cached_run = read_json(&d.join("div2.json.manifest.json"));
    assert!(cached_run["input_digests"]["emb.bin"].is_string());
    assert_eq!(cached_run["summary"]["stage1_size"], 100);
}

#[test]
fn diversify_rejects_bad_embedder() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_dataset(d, "toy.json", 100, 10);
    write_score_file(d, "s.jsonl", &random_ifds(100, 10), "m");
    for spec in ["word2vec", "hashed-bow:0", "hashed-bow:x"] {
        let out = run(d, &["diversify", "--dataset", "toy.json", "--scores", "s.jsonl", "--embedder", spec, "-o", "o.json"]);
        assert_eq!(out.status.code(), Some(2), "{spec}");
    }
}

#[test]
fn report_on_uniform_scores_warns_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_dataset(d, "toy.json", 60, 11);
    run_ok(d, &["score", "--dataset", "toy.json", "--backend", "uniform:32000", "-o", "u.jsonl"]);
    let out = run_ok(d, &["report", "--dataset", "toy.json", "--scores", "u.jsonl", "--output-dir", "rep"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate"));
    let report = read_json(&d.join("rep/report.json"));
    assert_eq!(report["degenerate"], true);
    assert!(fs::read_to_string(d.join("rep/report.txt")).unwrap().contains("DEGENERATE"));
    for name in ["quantiles.csv", "verb_noun_top.csv", "verb_noun_bottom.csv", "manifest.json"] {
        assert!(d.join("rep").join(name).exists(), "{name}");
    }
}

#[test]
fn report_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let fixtures = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    fs::copy(fixtures.join("toy_corpus.json"), d.join("toy.json")).unwrap();
    fs::copy(fixtures.join("toy_scores.jsonl"), d.join("s.jsonl")).unwrap();
    run_ok(d, &["report", "--dataset", "toy.json", "--scores", "s.jsonl", "--output-dir", "rep", "--fraction", "0.25", "--top-k", "5"]);
    for name in ["report.json", "report.txt", "quantiles.csv", "verb_noun_top.csv", "verb_noun_bottom.csv"] {
        let got = fs::read_to_string(d.join("rep").join(name)).unwrap();
        let want = fs::read_to_string(fixtures.join("report_golden").join(name)).unwrap();
        assert_eq!(got, want, "{name} differs from golden");
    }
}

#[test]
fn remote_backend_scores_through_the_protocol() {
    let server = MockServer::start(|path, body| {
        let request: Value = serde_json::from_slice(body).unwrap();
        match path {
            "/v1/logprobs" => {
                let tokens: Vec<&str> = request["completion"].as_str().unwrap().split_whitespace().collect();
                let lp = if request["prompt"].as_str().unwrap().is_empty() { -3.0 } else { -2.0 };
                let body = json!({
                    "tokens": tokens,
                    "token_logprobs": vec![lp; tokens.len()],
                    "truncated": false,
                    "model": "mock",
                });
                (200, body.to_string())
            }
            _ => (404, "{}".into()),
        }
    });
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_dataset(d, "toy.json", 100, 12);
    let backend = format!("remote:{}", server.url);
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_superfilter"))
        .current_dir(d)
        .args(["score", "--dataset", "toy.json", "--backend", &backend, "--workers", "4", "-o", "r.jsonl"])
        .env("SUPERFILTER_REMOTE_TOKEN", "s3cret")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let file = read_scores(&d.join("r.jsonl")).unwrap();
    assert_eq!(file.scores.len(), 100);
    let expected = (-1.0f64).exp();
    for s in &file.scores {
        assert!(s.ifd.is_finite());
        assert!((s.ifd - expected).abs() < 1e-9);
    }
    let recorded = server.recorded();
    assert_eq!(recorded.len(), 200);
    assert!(recorded.iter().all(|r| r.header("authorization") == Some("Bearer s3cret")));
}
