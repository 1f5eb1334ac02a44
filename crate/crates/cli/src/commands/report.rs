use compo_core::io::read_json;
use compo_core::report::{self as tables, MetricsSummary, RunSummary};

use super::{args_value, find_files, out_dir};
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::manifest::Run;
use crate::ReportArgs;

pub fn table1(mut cfg: RunConfig, a: &ReportArgs) -> CliResult<()> {
    let out = out_dir(&mut cfg, &a.out)?;
    let files = find_files(&a.runs, "metrics.json", "metrics is / metrics fid")?;
    let mut run = Run::new("report table1", &out, cfg.recorded(), args_value(a))?;
    let mut summaries: Vec<MetricsSummary> = Vec::with_capacity(files.len());
    for f in &files {
        run.input(f)?;
        summaries.push(read_json(f)?);
    }
    let table = tables::table1(&summaries)?;
    let csv = table.to_csv();
    let deltas = table.deltas_text();
    run.write_text("table1.csv", &csv)?;
    run.write_text("table1.json", &(table.to_json()? + "\n"))?;
    if !deltas.is_empty() {
        run.write_text("deltas.txt", &deltas)?;
    }
    print!("{csv}{deltas}");
    run.finish()
}

pub fn summary(mut cfg: RunConfig, a: &ReportArgs) -> CliResult<()> {
    let out = out_dir(&mut cfg, &a.out)?;
    let files = find_files(&a.runs, "summary.json", "cis evaluate")?;
    let mut run = Run::new("report summary", &out, cfg.recorded(), args_value(a))?;
    let mut runs: Vec<RunSummary> = Vec::with_capacity(files.len());
    for f in &files {
        run.input(f)?;
        runs.push(read_json(f)?);
    }
    let (csv, text) = tables::cis_summary(&runs)?;
    run.write_text("cis_summary.csv", &csv)?;
    run.write_text("cis_summary.txt", &text)?;
    print!("{text}");
    run.finish()
}
