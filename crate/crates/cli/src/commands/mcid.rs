use compo_core::io::read_prompts;
use compo_core::mcid::{build_dataset, BuildOptions, CorpusIndex, MANIFEST_FILE};

use super::{apply_vocab, args_value, load_vocab, out_dir, require};
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::manifest::Run;
use crate::McidBuildArgs;

pub fn build(mut cfg: RunConfig, a: &McidBuildArgs) -> CliResult<()> {
    apply_vocab(&mut cfg, &a.vocab);
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(h) = a.row_height {
        cfg.row_height = h;
    }
    let out = out_dir(&mut cfg, &a.out)?;
    cfg.validate()?;
    require(&a.prompts, "prompts gen")?;
    let (vocab_path, vocab) = load_vocab(&cfg, &a.vocab)?;
    let prompts = read_prompts(&a.prompts, Some(&vocab))?;
    let corpus = CorpusIndex::scan(&a.corpus, &a.class_map, &vocab)?;
    let mut run = Run::new("mcid build", &out, cfg.recorded(), args_value(a))?;
    for input in [&vocab_path, &a.prompts, &a.class_map, &a.corpus] {
        run.input(input)?;
    }
    let options = BuildOptions {
        images_per_prompt: cfg.n,
        seed: cfg.seed,
        row_height: cfg.row_height,
    };
    let entries = build_dataset(&corpus, &prompts, options, run.dir())?;
    for e in &entries {
        run.output(&e.composite_path)?;
    }
    run.output(MANIFEST_FILE)?;
    println!("{} composites for {} prompts", entries.len(), prompts.len());
    run.finish()
}
