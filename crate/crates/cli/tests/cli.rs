mod common;

use std::fs;

use compo_core::io::{write_matrix, CachedMatrix, MatrixKind};
use common::{compo, compo_ok, write_corpus, write_vocab};
use nalgebra::DMatrix;
use serde_json::Value;

fn json(path: &std::path::Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn perfect_mock_scores_one_on_synthetic_images() {
    let dir = tempfile::tempdir().unwrap();
    write_vocab(dir.path(), 12);
    let stdout = compo_ok(
        dir.path(),
        &["cis", "evaluate", "--vocab", "vocab.txt", "--k", "2", "--m", "4", "--n", "2", "--backend", "mock", "--out", "run"],
    );
    assert_eq!(stdout.trim(), "CIS_2 = 1.000");
    let summary = json(&dir.path().join("run/k2/summary.json"));
    assert_eq!(summary["cis"], 1.0);
    assert_eq!(summary["m"], 4);
    assert_eq!(summary["n"], 2);
    assert!(dir.path().join("run/run_manifest.json").exists());
}

#[test]
fn perfect_mock_scores_one_on_built_composites() {
    let dir = tempfile::tempdir().unwrap();
    write_vocab(dir.path(), 10);
    write_corpus(dir.path(), 10);
    compo_ok(dir.path(), &["prompts", "gen", "--vocab", "vocab.txt", "--k", "3", "--m", "4", "--out", "p"]);
    compo_ok(
        dir.path(),
        &[
            "mcid", "build", "--vocab", "vocab.txt", "--prompts", "p/prompts_k3.jsonl", "--corpus", "corpus",
            "--class-map", "classes.tsv", "--n", "2", "--out", "m",
        ],
    );
    let stdout = compo_ok(
        dir.path(),
        &["cis", "evaluate", "--vocab", "vocab.txt", "--prompts", "p/prompts_k3.jsonl", "--images", "m/manifest.jsonl", "--out", "e"],
    );
    assert_eq!(stdout.trim(), "CIS_3 = 1.000");
}

#[test]
fn shuffled_prompts_are_invariant_under_the_mock() {
    let dir = tempfile::tempdir().unwrap();
    let outputs = common::run_pipeline(dir.path(), 2);
    let analyze = &outputs[9];
    assert!(analyze.contains("verdict: fail to reject"), "{analyze}");
    let report = json(&dir.path().join("invariance/k4/invariance.json"));
    assert_eq!(report["result"]["statistic"], 0.0);
    assert_eq!(report["verdict"], "fail-to-reject");
    let csv = fs::read_to_string(dir.path().join("invariance/k4/invariance.csv")).unwrap();
    assert!(csv.starts_with("set,CIS_4\noriginal,"), "{csv}");
}

#[test]
fn table1_formats_fixture_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: Value| {
        let d = dir.path().join("runs").join(name);
        fs::create_dir_all(&d).unwrap();
        fs::write(d.join("metrics.json"), body.to_string()).unwrap();
    };
    let base = |k: usize| {
        serde_json::json!({"model": "Stable Diffusion", "k": k, "n_images": 10, "backend_id": "x", "vocab_hash": "v"})
    };
    let mut is = base(1);
    is["is_mean"] = 147.81.into();
    is["is_std"] = 2.94.into();
    write("is1", is);
    let mut fid = base(1);
    fid["fid"] = 21.03.into();
    write("fid1", fid);
    let stdout = compo_ok(dir.path(), &["report", "table1", "--runs", "runs", "--out", "t"]);
    let csv = fs::read_to_string(dir.path().join("t/table1.csv")).unwrap();
    assert_eq!(csv, "model,IS K=1,FID K=1\nStable Diffusion,147.81 ± 2.94,21.03\n");
    assert!(stdout.starts_with(&csv));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    write_vocab(dir.path(), 5);
    let out = compo(dir.path(), &["cis", "evaluate", "--vocab", "vocab.txt", "--m", "0", "--out", "r"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`m`"));

    fs::write(dir.path().join("bad.json"), r#"{"bogus_field": 1}"#).unwrap();
    let out = compo(dir.path(), &["--config", "bad.json", "prompts", "gen", "--vocab", "vocab.txt", "--out", "r"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_with_three_and_name_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    let out = compo(dir.path(), &["analyze", "bias", "--run", "nowhere", "--out", "b"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("compo cis evaluate"));
}

#[test]
fn non_finite_features_exit_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = DMatrix::from_fn(6, 3, |i, j| (i * 3 + j) as f64);
    m[(2, 1)] = f64::NAN;
    write_matrix(&dir.path().join("g.f32"), &CachedMatrix::from_dmatrix(&m, MatrixKind::Features, "t")).unwrap();
    let good = DMatrix::from_fn(6, 3, |i, j| ((i + 1) * (j + 2)) as f64 % 5.0);
    write_matrix(&dir.path().join("r.f32"), &CachedMatrix::from_dmatrix(&good, MatrixKind::Features, "t")).unwrap();
    let out = compo(
        dir.path(),
        &["metrics", "fid", "--generated-features", "g.f32", "--reference-features", "r.f32", "--k", "2", "--model", "x", "--out", "f"],
    );
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn cache_dir_from_environment_is_used() {
    let dir = tempfile::tempdir().unwrap();
    write_vocab(dir.path(), 8);
    let cache = dir.path().join("cache");
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_compo"))
        .current_dir(dir.path())
        .env("COMPO_CACHE_DIR", &cache)
        .args(["cis", "evaluate", "--vocab", "vocab.txt", "--k", "2", "--m", "3", "--n", "1", "--out", "r"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files: Vec<_> = walk(&cache);
    assert!(!files.is_empty(), "no cache files written");
}

fn walk(root: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    if let Ok(rd) = fs::read_dir(root) {
        for e in rd.flatten() {
            let p = e.path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
    }
    out
}

#[test]
fn run_manifest_records_hashes_without_timestamps() {
    let dir = tempfile::tempdir().unwrap();
    write_vocab(dir.path(), 8);
    compo_ok(dir.path(), &["prompts", "gen", "--vocab", "vocab.txt", "--k", "2", "--m", "3", "--out", "p"]);
    let m = json(&dir.path().join("p/run_manifest.json"));
    assert_eq!(m["command"], "prompts gen");
    assert!(m["inputs"].as_object().map_or(false, |o| !o.is_empty()) || m["inputs"].is_array());
    let text = fs::read_to_string(dir.path().join("p/run_manifest.json")).unwrap();
    assert!(!text.contains("time"));
}
