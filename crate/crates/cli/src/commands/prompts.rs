use compo_core::io::read_prompts;
use compo_core::promptgen::{sample_prompts, shuffle_prompt, PromptRecord, PromptSpec};

use super::{apply_size, apply_vocab, args_value, grammar, load_optional_vocab, load_vocab, out_dir, require};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::Run;
use crate::{PromptGenArgs, ShuffleArgs};

fn records(prompts: &[PromptSpec]) -> Vec<PromptRecord> {
    prompts.iter().map(PromptSpec::to_record).collect()
}

pub fn generate(mut cfg: RunConfig, a: &PromptGenArgs) -> CliResult<()> {
    apply_vocab(&mut cfg, &a.vocab);
    apply_size(&mut cfg, &a.size);
    cfg.oxford_comma &= !a.no_oxford_comma;
    cfg.trailing_period |= a.trailing_period;
    let out = out_dir(&mut cfg, &a.out)?;
    cfg.validate()?;
    let (vocab_path, vocab) = load_vocab(&cfg, &a.vocab)?;
    let mut run = Run::new("prompts gen", &out, cfg.recorded(), args_value(a))?;
    run.input(&vocab_path)?;
    for &k in &cfg.k_values {
        let prompts = sample_prompts(&vocab, k, cfg.m, cfg.seed, grammar(&cfg))?;
        run.write_jsonl(&format!("prompts_k{k}.jsonl"), &records(&prompts))?;
        println!("K={k}: {} prompts", prompts.len());
    }
    run.finish()
}

pub fn shuffle(mut cfg: RunConfig, a: &ShuffleArgs) -> CliResult<()> {
    apply_vocab(&mut cfg, &a.vocab);
    let out = out_dir(&mut cfg, &a.out)?;
    cfg.validate()?;
    require(&a.prompts, "prompts gen")?;
    let vocab = load_optional_vocab(&cfg, &a.vocab)?;
    let mut run = Run::new("prompts shuffle", &out, cfg.recorded(), args_value(a))?;
    run.input(&a.prompts)?;
    if let Some((p, _)) = &vocab {
        run.input(p)?;
    }
    let prompts = read_prompts(&a.prompts, vocab.as_ref().map(|v| &v.1))?;
    let shuffled: Vec<PromptSpec> = prompts.iter().map(|p| shuffle_prompt(p, cfg.seed)).collect();
    let name = a
        .prompts
        .file_name()
        .ok_or_else(|| CliError::Config("--prompts must name a file".into()))?
        .to_string_lossy()
        .into_owned();
    run.write_jsonl(&name, &records(&shuffled))?;
    println!("shuffled {} prompts", shuffled.len());
    run.finish()
}
