use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use compo_core::analysis::{bias_ratios, sequence_invariance_test, InvarianceReport};
use compo_core::io::{read_json, read_jsonl, read_prompts};
use compo_core::promptgen::PromptSpec;
use compo_core::report::{invariance_table, RunSummary};
use compo_core::scoring::ScoreRecord;
use compo_core::Error;
use serde::Serialize;

use super::{args_value, find_files, out_dir, require};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::Run;
use crate::{AnalyzeShuffleArgs, BiasArgs};

struct EvalRun {
    summary: RunSummary,
    prompts: Vec<PromptSpec>,
    records: Vec<ScoreRecord>,
    files: Vec<PathBuf>,
}

fn load_run(dir: &Path) -> CliResult<EvalRun> {
    let files: Vec<PathBuf> = ["summary.json", "prompts.jsonl", "records.jsonl"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    for f in &files {
        require(f, "cis evaluate")?;
    }
    Ok(EvalRun {
        summary: read_json(&files[0])?,
        prompts: read_prompts(&files[1], None)?,
        records: read_jsonl(&files[2])?,
        files,
    })
}

/// Evaluation runs under `root`, keyed by K.
fn runs_by_k(root: &Path) -> CliResult<BTreeMap<usize, EvalRun>> {
    let mut runs = BTreeMap::new();
    for summary in find_files(root, "summary.json", "cis evaluate")? {
        let run = load_run(summary.parent().expect("file has a parent"))?;
        let k = run.summary.k;
        if runs.insert(k, run).is_some() {
            return Err(Error::ProtocolError(format!("{} holds more than one run with K={k}", root.display())).into());
        }
    }
    Ok(runs)
}

#[derive(Serialize)]
struct InvarianceOutput<'a> {
    k: usize,
    cis_original: f64,
    cis_shuffled: f64,
    #[serde(flatten)]
    report: &'a InvarianceReport,
}

pub fn shuffle(mut cfg: RunConfig, a: &AnalyzeShuffleArgs) -> CliResult<()> {
    let out = out_dir(&mut cfg, &a.out)?;
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::Config("--alpha must lie in (0, 1)".into()));
    }
    let original = runs_by_k(&a.original)?;
    let shuffled = runs_by_k(&a.shuffled)?;
    let mut run = Run::new("analyze shuffle", &out, cfg.recorded(), args_value(a))?;
    let mut compared = 0;
    for (k, o) in &original {
        let Some(s) = shuffled.get(k) else { continue };
        if o.summary.vocab_hash != s.summary.vocab_hash {
            return Err(Error::ProtocolError(format!("K={k}: runs use different vocabularies")).into());
        }
        for f in o.files.iter().chain(&s.files) {
            run.input(f)?;
        }
        let report = sequence_invariance_test(&o.records, &o.prompts, &s.records, &s.prompts, a.alpha)?;
        run.write_json(
            &format!("k{k}/invariance.json"),
            &InvarianceOutput {
                k: *k,
                cis_original: o.summary.cis,
                cis_shuffled: s.summary.cis,
                report: &report,
            },
        )?;
        run.write_text(
            &format!("k{k}/invariance.csv"),
            &invariance_table(*k, o.summary.cis, s.summary.cis),
        )?;
        println!(
            "K={k}: chi2({}) = {:.4}, p = {:.4}, verdict: {}",
            report.result.df, report.result.statistic, report.result.p_value, report.verdict
        );
        compared += 1;
    }
    if compared == 0 {
        return Err(CliError::Config("the original and shuffled runs share no K".into()));
    }
    run.finish()
}

pub fn bias(mut cfg: RunConfig, a: &BiasArgs) -> CliResult<()> {
    let out = out_dir(&mut cfg, &a.out)?;
    let runs = runs_by_k(&a.run)?;
    let mut run = Run::new("analyze bias", &out, cfg.recorded(), args_value(a))?;
    for (k, r) in &runs {
        for f in &r.files {
            run.input(f)?;
        }
        let report = bias_ratios(&r.records, &r.prompts)?;
        run.write_text(&format!("k{k}/bias.csv"), &report.to_csv())?;
        run.write_json(&format!("k{k}/bias.json"), &report)?;
        match &report.quantiles {
            Some(q) => println!(
                "K={k}: {} components, detection ratio min {:.3}, median {:.3}, max {:.3}",
                report.components.len(),
                q.min,
                q.median,
                q.max
            ),
            None => println!("K={k}: no multi-component prompts"),
        }
    }
    run.finish()
}
