use compo_core::io::read_prompts;
use compo_core::lookup::{EmptySubsetText, LookupOptions};
use compo_core::pipeline::{evaluate as run_eval, load_image_manifest, EvalOptions, ImageEntry};
use compo_core::promptgen::{sample_prompts, PromptRecord, PromptSpec};
use compo_core::report::RunSummary;
use compo_core::scoring::format_cis;
use compo_core::Error;

use super::{apply_backend, apply_size, apply_vocab, args_value, embedding_backend, grammar, load_vocab, open_cache, out_dir, require};
use crate::config::{BackendKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::Run;
use crate::CisArgs;

/// `n` planted images per prompt, each showing exactly the prompt's components.
fn synthetic_images(prompts: &[PromptSpec], n: usize) -> Vec<ImageEntry> {
    prompts
        .iter()
        .flat_map(|p| {
            (0..n).map(move |i| {
                ImageEntry::planted(p.prompt_id(), format!("p{:06}_{i:03}", p.prompt_id()), p.component_indices())
            })
        })
        .collect()
}

fn parse_empty_text(s: &str) -> CliResult<EmptySubsetText> {
    match s {
        "empty" => Ok(EmptySubsetText::Empty),
        "a-photo" => Ok(EmptySubsetText::APhoto),
        other => Err(CliError::Config(format!(
            "config field `empty_text`: expected `empty` or `a-photo`, got `{other}`"
        ))),
    }
}

pub fn evaluate(mut cfg: RunConfig, a: &CisArgs) -> CliResult<()> {
    apply_vocab(&mut cfg, &a.vocab);
    apply_size(&mut cfg, &a.size);
    apply_backend(&mut cfg, &a.backend);
    if let Some(s) = a.scale {
        cfg.scale = s;
    }
    if let Some(k) = a.k_max {
        cfg.k_max = k;
    }
    if let Some(t) = &a.empty_text {
        cfg.empty_text = parse_empty_text(t)?;
    }
    cfg.skip_broken |= a.skip_broken;
    cfg.oxford_comma &= !a.no_oxford_comma;
    cfg.trailing_period |= a.trailing_period;
    let out = out_dir(&mut cfg, &a.out)?;
    cfg.validate()?;
    if a.images.is_some() && a.prompts.is_none() {
        return Err(CliError::Config("--images needs the --prompts file the images were built from".into()));
    }
    if a.images.is_none() && cfg.backend == BackendKind::Onnx {
        return Err(CliError::Config("the onnx backend needs real images (--images)".into()));
    }

    let (vocab_path, vocab) = load_vocab(&cfg, &a.vocab)?;
    let backend = embedding_backend(&cfg, Some(&vocab))?;
    let cache = open_cache(&cfg, backend.backend_id())?;
    let mut run = Run::new("cis evaluate", &out, cfg.recorded(), args_value(a))?;
    run.input(&vocab_path)?;

    let sets: Vec<Vec<PromptSpec>> = match &a.prompts {
        Some(path) => {
            require(path, "prompts gen")?;
            run.input(path)?;
            vec![read_prompts(path, Some(&vocab))?]
        }
        None => cfg
            .k_values
            .iter()
            .map(|&k| sample_prompts(&vocab, k, cfg.m, cfg.seed, grammar(&cfg)))
            .collect::<Result<_, Error>>()?,
    };
    let manifest = match &a.images {
        Some(path) => {
            require(path, "mcid build")?;
            run.input(path)?;
            Some(load_image_manifest(path)?)
        }
        None => None,
    };

    let options = EvalOptions {
        scale: cfg.scale,
        lookup: LookupOptions {
            k_max: cfg.k_max,
            empty_text: cfg.empty_text,
        },
        skip_broken: cfg.skip_broken,
        images_per_prompt: if manifest.is_some() { a.size.n } else { Some(cfg.n) },
    };
    for prompts in &sets {
        let k = prompts
            .first()
            .map(PromptSpec::k)
            .ok_or_else(|| Error::InvalidParameter("prompt file is empty".into()))?;
        let images = match &manifest {
            Some(m) => m.clone(),
            None => synthetic_images(prompts, cfg.n),
        };
        let result = run_eval(prompts, &images, backend.as_ref(), &cache, &options)?;
        let summary = RunSummary {
            k,
            m: result.result.m,
            n: result.result.n,
            cis: result.result.cis,
            scale: cfg.scale,
            backend_id: backend.backend_id().to_string(),
            vocab_hash: vocab.content_hash(),
            seed: cfg.seed,
            model: a.model.clone(),
            records: result.result.records,
            skipped: result.skipped.len(),
        };
        let records: Vec<PromptRecord> = prompts.iter().map(PromptSpec::to_record).collect();
        run.write_jsonl(&format!("k{k}/prompts.jsonl"), &records)?;
        run.write_jsonl(&format!("k{k}/records.jsonl"), &result.records)?;
        run.write_jsonl(&format!("k{k}/skipped.jsonl"), &result.skipped)?;
        run.write_json(&format!("k{k}/summary.json"), &summary)?;
        println!("{}", format_cis(k, summary.cis));
    }
    cache.flush()?;
    run.finish()
}
