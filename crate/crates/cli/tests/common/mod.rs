#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage};

pub fn compo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_compo"))
        .current_dir(dir)
        .env_remove("COMPO_CACHE_DIR")
        .env("RUST_LOG", "error")
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn compo_ok(dir: &Path, args: &[&str]) -> String {
    let out = compo(dir, args);
    assert!(
        out.status.success(),
        "compo {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

pub fn names(p: usize) -> Vec<String> {
    (0..p).map(|i| format!("thing{i:03}")).collect()
}

pub fn write_vocab(dir: &Path, p: usize) -> PathBuf {
    let path = dir.join("vocab.txt");
    fs::write(&path, names(p).join("\n") + "\n").unwrap();
    path
}

/// Distinct, non-black colour per label.
pub fn colour(label: usize) -> Rgb<u8> {
    assert!(label < 255);
    Rgb([label as u8 + 1, 200, 255 - label as u8])
}

/// Two solid-colour images of different shapes per label, plus a class map.
pub fn write_corpus(dir: &Path, p: usize) {
    let mut map = String::new();
    for (i, name) in names(p).iter().enumerate() {
        let class = dir.join("corpus").join(format!("c{i:03}"));
        fs::create_dir_all(&class).unwrap();
        for j in 0..2u32 {
            RgbImage::from_pixel(30 + 17 * j + i as u32 % 5, 20 + 9 * (i as u32 % 7), colour(i))
                .save(class.join(format!("img{j}.png")))
                .unwrap();
        }
        map.push_str(&format!("c{i:03}\t{name}\n"));
    }
    fs::write(dir.join("classes.tsv"), map).unwrap();
}

pub const PIPELINE: &[&[&str]] = &[
    &["prompts", "gen", "--vocab", "vocab.txt", "--k", "2,4", "--m", "6", "--seed", "11", "--out", "prompts"],
    &["prompts", "shuffle", "--prompts", "prompts/prompts_k4.jsonl", "--seed", "5", "--out", "shuffled"],
    &[
        "mcid", "build", "--vocab", "vocab.txt", "--prompts", "prompts/prompts_k2.jsonl", "--corpus", "corpus",
        "--class-map", "classes.tsv", "--n", "2", "--row-height", "24", "--seed", "11", "--out", "mcid2",
    ],
    &[
        "cis", "evaluate", "--vocab", "vocab.txt", "--prompts", "prompts/prompts_k4.jsonl", "--n", "3",
        "--mock-default-detection", "0.6", "--mock-noise", "0.02", "--out", "eval_orig",
    ],
    &[
        "cis", "evaluate", "--vocab", "vocab.txt", "--prompts", "shuffled/prompts_k4.jsonl", "--n", "3",
        "--mock-default-detection", "0.6", "--mock-noise", "0.02", "--out", "eval_shuf",
    ],
    &[
        "cis", "evaluate", "--vocab", "vocab.txt", "--prompts", "prompts/prompts_k2.jsonl", "--images",
        "mcid2/manifest.jsonl", "--out", "eval_mcid",
    ],
    &["cis", "evaluate", "--vocab", "vocab.txt", "--k", "1,2", "--m", "5", "--n", "2", "--out", "eval_sweep"],
    &[
        "metrics", "is", "--vocab", "vocab.txt", "--images", "mcid2/manifest.jsonl", "--model", "gen", "--splits",
        "2", "--out", "is2",
    ],
    &[
        "metrics", "fid", "--vocab", "vocab.txt", "--generated", "mcid2/manifest.jsonl", "--reference-features",
        "is2/features.f32", "--model", "gen", "--out", "fid2",
    ],
    &["analyze", "shuffle", "--original", "eval_orig", "--shuffled", "eval_shuf", "--out", "invariance"],
    &["analyze", "bias", "--run", "eval_orig", "--out", "bias"],
    &["report", "summary", "--runs", ".", "--out", "summary"],
    &["report", "table1", "--runs", ".", "--out", "table"],
];

/// Runs every pipeline command in a fresh workspace under `dir`; returns
/// their standard outputs.
pub fn run_pipeline(dir: &Path, jobs: usize) -> Vec<String> {
    write_vocab(dir, 16);
    write_corpus(dir, 16);
    let jobs = jobs.to_string();
    PIPELINE
        .iter()
        .map(|args| {
            let mut full: Vec<&str> = vec!["--jobs", &jobs];
            full.extend_from_slice(args);
            compo_ok(dir, &full)
        })
        .collect()
}

/// Relative path and bytes of every file under `root`, sorted by path.
pub fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
