mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{BackendKind, RunConfig};
use crate::error::{CliError, CliResult};

/// Evaluate how many prompted components text-to-image outputs contain.
#[derive(Debug, Parser)]
#[command(name = "compo", version)]
struct Cli {
    /// JSON run config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Embedding cache directory.
    #[arg(long, global = true, env = "COMPO_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample and permute component prompts.
    #[command(subcommand)]
    Prompts(PromptsCmd),
    /// Build multi-component composite images.
    #[command(subcommand)]
    Mcid(McidCmd),
    /// Score images against their prompts.
    #[command(subcommand)]
    Cis(CisCmd),
    /// Inception Score and Fréchet distance.
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Order-invariance and per-component bias analyses.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Tables over finished runs.
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Debug, Subcommand)]
enum PromptsCmd {
    Gen(PromptGenArgs),
    Shuffle(ShuffleArgs),
}

#[derive(Debug, Subcommand)]
enum McidCmd {
    Build(McidBuildArgs),
}

#[derive(Debug, Subcommand)]
enum CisCmd {
    Evaluate(CisArgs),
}

#[derive(Debug, Subcommand)]
enum MetricsCmd {
    Is(IsArgs),
    Fid(FidArgs),
}

#[derive(Debug, Subcommand)]
enum AnalyzeCmd {
    Shuffle(AnalyzeShuffleArgs),
    Bias(BiasArgs),
}

#[derive(Debug, Subcommand)]
enum ReportCmd {
    Table1(ReportArgs),
    Summary(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum VocabFormatArg {
    Lines,
    Tsv,
}

#[derive(Debug, Args, Serialize)]
pub struct VocabArgs {
    /// Component vocabulary: one name per line, or `id<TAB>name` rows.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Defaults to tsv for `.tsv` files, lines otherwise.
    #[arg(long, value_enum)]
    pub vocab_format: Option<VocabFormatArg>,
}

#[derive(Debug, Args, Serialize)]
pub struct SizeArgs {
    /// Comma-separated component counts.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Prompts per K.
    #[arg(long)]
    pub m: Option<usize>,
    /// Images per prompt.
    #[arg(long)]
    pub n: Option<usize>,
    /// Use 10,000 prompts and 16 images per prompt unless set explicitly.
    #[arg(long)]
    pub full_scale: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Exported model bundle directory.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub mock_noise: Option<f64>,
    #[arg(long)]
    pub mock_default_detection: Option<f64>,
    /// Per-label visibility, `LABEL=P`; repeatable.
    #[arg(long, value_parser = parse_detection)]
    pub mock_detection: Vec<(usize, f64)>,
    #[arg(long)]
    pub mock_seed: Option<u64>,
}

fn parse_detection(s: &str) -> Result<(usize, f64), String> {
    let (l, p) = s.split_once('=').ok_or("expected LABEL=P")?;
    Ok((
        l.trim().parse().map_err(|e| format!("label: {e}"))?,
        p.trim().parse().map_err(|e| format!("probability: {e}"))?,
    ))
}

#[derive(Debug, Args, Serialize)]
pub struct OutArg {
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PromptGenArgs {
    #[command(flatten)]
    pub vocab: VocabArgs,
    #[command(flatten)]
    pub size: SizeArgs,
    #[arg(long)]
    pub no_oxford_comma: bool,
    #[arg(long)]
    pub trailing_period: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct ShuffleArgs {
    /// Prompt file written by `prompts gen`.
    #[arg(long)]
    pub prompts: PathBuf,
    #[command(flatten)]
    pub vocab: VocabArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct McidBuildArgs {
    #[arg(long)]
    pub prompts: PathBuf,
    /// Root of the single-label image corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// `class_dir<TAB>component name` rows.
    #[arg(long)]
    pub class_map: PathBuf,
    #[command(flatten)]
    pub vocab: VocabArgs,
    /// Composites per prompt.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub row_height: Option<u32>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct CisArgs {
    #[command(flatten)]
    pub vocab: VocabArgs,
    /// Prompt file; prompts are sampled per K when absent.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Image manifest (JSON lines); synthetic planted images when absent.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[command(flatten)]
    pub size: SizeArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Text for the empty subset: `empty` or `a-photo`.
    #[arg(long)]
    pub empty_text: Option<String>,
    /// Skip unreadable images instead of failing.
    #[arg(long)]
    pub skip_broken: bool,
    /// Generator name recorded in summaries.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub no_oxford_comma: bool,
    #[arg(long)]
    pub trailing_period: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct IsArgs {
    #[command(flatten)]
    pub vocab: VocabArgs,
    /// Image manifest to classify.
    #[arg(long, conflicts_with = "probs", required_unless_present = "probs")]
    pub images: Option<PathBuf>,
    /// Cached probability matrix instead of images.
    #[arg(long)]
    pub probs: Option<PathBuf>,
    #[arg(long)]
    pub splits: Option<usize>,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub model: String,
    /// Component count of the images; inferred from planted sets if absent.
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct FidArgs {
    #[command(flatten)]
    pub vocab: VocabArgs,
    #[arg(long, conflicts_with = "generated_features", required_unless_present = "generated_features")]
    pub generated: Option<PathBuf>,
    #[arg(long)]
    pub generated_features: Option<PathBuf>,
    #[arg(long, conflicts_with = "reference_features", required_unless_present = "reference_features")]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub reference_features: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeShuffleArgs {
    /// Run directory of the original-order evaluation.
    #[arg(long)]
    pub original: PathBuf,
    /// Run directory of the shuffled-order evaluation.
    #[arg(long)]
    pub shuffled: PathBuf,
    #[arg(long, default_value_t = compo_core::analysis::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct BiasArgs {
    /// Run directory of an evaluation.
    #[arg(long)]
    pub run: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Directory searched recursively for run summaries.
    #[arg(long)]
    pub runs: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = cli.cache_dir {
        cfg.cache_dir = Some(dir);
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size worker pool: {e}")))?;
    }
    match cli.command {
        Command::Prompts(PromptsCmd::Gen(a)) => commands::prompts::generate(cfg, &a),
        Command::Prompts(PromptsCmd::Shuffle(a)) => commands::prompts::shuffle(cfg, &a),
        Command::Mcid(McidCmd::Build(a)) => commands::mcid::build(cfg, &a),
        Command::Cis(CisCmd::Evaluate(a)) => commands::cis::evaluate(cfg, &a),
        Command::Metrics(MetricsCmd::Is(a)) => commands::metrics::inception(cfg, &a),
        Command::Metrics(MetricsCmd::Fid(a)) => commands::metrics::frechet(cfg, &a),
        Command::Analyze(AnalyzeCmd::Shuffle(a)) => commands::analyze::shuffle(cfg, &a),
        Command::Analyze(AnalyzeCmd::Bias(a)) => commands::analyze::bias(cfg, &a),
        Command::Report(ReportCmd::Table1(a)) => commands::report::table1(cfg, &a),
        Command::Report(ReportCmd::Summary(a)) => commands::report::summary(cfg, &a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
