mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nerdistill::harness::{GroupPreset, Layout};
use nerdistill::prompt::PromptMode;
use nerdistill::{Source, TagScheme};

use crate::config::Config;

#[derive(Parser)]
#[command(name = "nerdistill", version, about = "Annotate NER data with an LLM and blend it with gold data for training")]
struct Cli {
    /// JSON or TOML settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for sampling and manifest composition.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read a CoNLL file and write a seeded sample as a JSONL sidecar.
    Sample(SampleArgs),
    /// Label sentences with the model, or replay saved transcripts.
    Annotate(AnnotateArgs),
    /// Flatten annotation records into tags.
    Align(AlignArgs),
    /// Score predictions against gold.
    Evaluate(EvaluateArgs),
    /// Write blending curves as CSV and optionally SVG.
    Schedule(ScheduleArgs),
    /// Write per-epoch training manifests.
    Compose(ComposeArgs),
    /// Train and evaluate over several seeds.
    Run(RunArgs),
    /// Lay out run results as a comparison table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SampleArgs {
    /// CoNLL input.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<TagScheme>,
    /// Id prefix for the sentences read.
    #[arg(long, default_value = "conll-train", value_parser = parse_source)]
    source: Source,
    /// Sample size; all sentences when omitted.
    #[arg(long)]
    n: Option<usize>,
    /// Drop sentences shorter than this before sampling.
    #[arg(long, default_value_t = 0)]
    min_tokens: usize,
    /// Sidecar whose ids must not be sampled.
    #[arg(long)]
    exclude: Option<PathBuf>,
    /// JSONL sidecar output.
    #[arg(long)]
    out: PathBuf,
    /// Also write the sample as CoNLL.
    #[arg(long)]
    conll_out: Option<PathBuf>,
}

#[derive(Args)]
struct AnnotateArgs {
    /// JSONL sidecar of sentences to label.
    #[arg(long)]
    input: PathBuf,
    /// Annotation records output.
    #[arg(long)]
    out: PathBuf,
    /// Prompt template JSON; the built-in one for `--mode` otherwise.
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<PromptMode>,
    /// Response cache directory.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Fail on cache misses instead of calling the endpoint.
    #[arg(long, conflicts_with = "transcripts")]
    cache_only: bool,
    /// Build records from saved transcripts instead of calling the endpoint.
    #[arg(long)]
    transcripts: Option<PathBuf>,
    /// Save the raw transcripts alongside the records.
    #[arg(long)]
    transcripts_out: Option<PathBuf>,
}

#[derive(Args)]
struct AlignArgs {
    /// Sidecar holding the annotated sentences.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    records: PathBuf,
    /// Aligned-record JSONL output.
    #[arg(long)]
    out: PathBuf,
    /// Sidecar with the flattened model labels in `gold_tags`, ready for `run`.
    #[arg(long)]
    sidecar_out: Option<PathBuf>,
    /// CoNLL output with the flattened model labels.
    #[arg(long)]
    conll_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Gold sentences: a `.jsonl` sidecar or a CoNLL file.
    #[arg(long)]
    gold: PathBuf,
    /// Scheme of CoNLL inputs.
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<TagScheme>,
    /// Annotation records to score.
    #[arg(long, required_unless_present = "pred_conll", conflicts_with = "pred_conll")]
    pred: Option<PathBuf>,
    /// IOB2 CoNLL predictions, one sentence per gold sentence in order.
    #[arg(long)]
    pred_conll: Option<PathBuf>,
    #[command(flatten)]
    outputs: OutputArgs,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    md: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct KindArgs {
    /// pure_distilled, pure_original, simple_mix, sigmoid, cosine, power or all_blend.
    #[arg(long)]
    kind: Option<String>,
    /// Sigmoid steepness.
    #[arg(long)]
    k: Option<f64>,
    /// Power exponent.
    #[arg(long)]
    n: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct ScheduleArgs {
    #[command(flatten)]
    kind: KindArgs,
    /// Emit every blending strategy of the standard grid.
    #[arg(long, conflicts_with = "kind")]
    family: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Sidecar of model-labelled sentences.
    #[arg(long)]
    distilled: Option<PathBuf>,
    /// Extra model-labelled sentences joined to `--distilled` by groups C and E.
    #[arg(long)]
    extra_distilled: Option<PathBuf>,
    /// Sidecar of gold-labelled sentences.
    #[arg(long)]
    original: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LrChoice {
    NoDecay,
    Decay,
    Both,
}

#[derive(Args, Clone)]
struct PlanArgs {
    #[command(flatten)]
    kind: KindArgs,
    /// One of the groups A to E.
    #[arg(long, conflicts_with_all = ["kind", "grid"], value_parser = parse_preset)]
    preset: Option<GroupPreset>,
    /// Every group and blending strategy under both LR modes.
    #[arg(long, conflicts_with = "kind")]
    grid: bool,
    #[arg(long, value_enum)]
    lr: Option<LrChoice>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct ComposeArgs {
    #[command(flatten)]
    plan: PlanArgs,
    /// Runs to compose, with seeds counting up from `--seed`.
    #[arg(long)]
    iterations: Option<usize>,
    /// Manifest root directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainerChoice {
    Baseline,
    GoldEcho,
    External,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    plan: PlanArgs,
    /// Test sentences with gold tags.
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, value_enum)]
    trainer: Option<TrainerChoice>,
    /// External trainer program.
    #[arg(long)]
    program: Option<String>,
    /// External trainer argument (repeatable).
    #[arg(long = "arg", allow_hyphen_values = true)]
    args: Vec<String>,
    /// External trainer working directory.
    #[arg(long)]
    work_dir: Option<PathBuf>,
    /// Results JSON output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Results files written by `run`.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, default_value = "phase2", value_parser = parse_layout)]
    layout: Layout,
    #[command(flatten)]
    outputs: OutputArgs,
}

fn parse_scheme(s: &str) -> Result<TagScheme, String> {
    s.to_ascii_uppercase().parse().map_err(|e| format!("{e:?}"))
}

fn parse_source(s: &str) -> Result<Source, String> {
    s.parse().map_err(|e| format!("{e:?}"))
}

fn parse_mode(s: &str) -> Result<PromptMode, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_preset(s: &str) -> Result<GroupPreset, String> {
    s.parse().map_err(|e| format!("{e:?}"))
}

fn parse_layout(s: &str) -> Result<Layout, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = (|| {
        let config = match &cli.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        let ctx = commands::Ctx { seed: cli.seed.or(config.seed).unwrap_or(commands::DEFAULT_SEED), config };
        match cli.command {
            Command::Sample(a) => commands::sample(&ctx, a),
            Command::Annotate(a) => commands::annotate(&ctx, a),
            Command::Align(a) => commands::align(&ctx, a),
            Command::Evaluate(a) => commands::evaluate(&ctx, a),
            Command::Schedule(a) => commands::schedule(&ctx, a),
            Command::Compose(a) => commands::compose(&ctx, a),
            Command::Run(a) => commands::run(&ctx, a),
            Command::Report(a) => commands::report(&ctx, a),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        super::Cli::command().debug_assert();
    }
}
