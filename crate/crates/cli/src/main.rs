//! Operator CLI for the rubric reward-modeling pipeline.

mod commands;
mod runlog;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "rubric-rm",
    version,
    about = "Contrastive rubric synthesis, training-data emission, reward scoring, and selective judging"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub(crate) struct GlobalArgs {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    pub(crate) config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    pub(crate) seed: Option<u64>,

    /// Override pipeline-level concurrency.
    #[arg(long, global = true)]
    pub(crate) concurrency: Option<usize>,

    /// Override the generator endpoint base address.
    #[arg(long = "endpoint.generator", value_name = "ADDR", global = true)]
    pub(crate) endpoint_generator: Option<String>,

    /// Override the verifier endpoint base address.
    #[arg(long = "endpoint.verifier", value_name = "ADDR", global = true)]
    pub(crate) endpoint_verifier: Option<String>,

    /// Override the scorer endpoint base address.
    #[arg(long = "endpoint.scorer", value_name = "ADDR", global = true)]
    pub(crate) endpoint_scorer: Option<String>,

    /// Override the policy endpoint base address.
    #[arg(long = "endpoint.policy", value_name = "ADDR", global = true)]
    pub(crate) endpoint_policy: Option<String>,

    /// Accept inputs whose config digest does not match this run.
    #[arg(long, global = true)]
    pub(crate) force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub(crate) enum EmitKind {
    Dpo,
    Grpo,
    Sft,
    PrefPairs,
    Rejection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub(crate) enum JudgeMode {
    Selective,
    RubricFree,
    Vote,
    BestOfN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub(crate) enum JudgeChoice {
    Selective,
    RubricFree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub(crate) enum TemplateArg {
    RubricGeneration,
    RubricFree,
    RubricAugmented,
    QualityEval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub(crate) enum Metric {
    Pairwise,
    Consistent,
    MultiRejected,
    Mix,
    Delta,
    Quality,
    Latency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub(crate) enum OrderArg {
    Both,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub(crate) enum MixModeArg {
    Selective,
    FollowAlways,
}

#[derive(Debug, Subcommand)]
pub(crate) enum Command {
    /// Synthesize contrastive rubric pairs from preference examples.
    Synthesize {
        /// Preference examples (JSONL).
        #[arg(long)]
        input: PathBuf,
        /// Synthesis record output (JSONL).
        #[arg(long)]
        out: PathBuf,
        /// Skip examples already recorded in the progress sidecar.
        #[arg(long)]
        resume: bool,
        /// Rubric candidates per round.
        #[arg(long)]
        k: Option<u32>,
        /// Additional rounds after the first.
        #[arg(long)]
        retries: Option<u32>,
        /// Generator sampling temperature.
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Assemble training datasets from synthesis records.
    Emit {
        #[arg(long, value_enum)]
        kind: EmitKind,
        /// Examples (dpo/grpo/sft) or prompts (pref-pairs/rejection), JSONL.
        #[arg(long)]
        input: PathBuf,
        /// Synthesis records (dpo/grpo/sft only).
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Emit the no-negative-rubrics ablation variant.
        #[arg(long)]
        no_negative: bool,
        /// Candidates per prompt (pref-pairs/rejection).
        #[arg(long)]
        n: Option<u32>,
        /// Policy sampling temperature (pref-pairs/rejection).
        #[arg(long)]
        temperature: Option<f64>,
        /// Judge driving the tournament (pref-pairs/rejection).
        #[arg(long, value_enum, default_value = "selective")]
        judge: JudgeChoice,
    },
    /// Serve the reward scoring API.
    ServeReward {
        /// Bind address, e.g. 127.0.0.1:8080 (port 0 picks one).
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Maximum request body size in bytes.
        #[arg(long, default_value_t = 2 * 1024 * 1024)]
        max_body_bytes: usize,
        /// Default preset for requests naming neither weights nor preset,
        /// as METHOD:FAMILY (e.g. c2:qwen3, reasoning_rm:tulu3).
        #[arg(long = "weights-preset")]
        weights_preset: Option<String>,
    },
    /// Judge preference examples and write verdict records.
    Judge {
        #[arg(long, value_enum)]
        mode: JudgeMode,
        /// Preference examples, or candidate sets for best-of-n (JSONL).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Votes per example (vote mode).
        #[arg(long)]
        votes: Option<u32>,
        /// Sampling temperature for vote mode.
        #[arg(long)]
        temperature: Option<f64>,
        /// Judge driving best-of-n brackets.
        #[arg(long, value_enum, default_value = "selective")]
        judge: JudgeChoice,
        #[arg(long)]
        resume: bool,
    },
    /// Run evaluation metrics and write reports.
    Evaluate {
        #[arg(long, value_enum)]
        metric: Metric,
        /// Benchmark items / examples / pools, depending on the metric.
        #[arg(long)]
        input: PathBuf,
        /// Report output (JSON); outcome records land in <out>.outcomes.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Re-score recorded verdicts instead of judging (pairwise only).
        #[arg(long)]
        from_verdicts: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "selective")]
        judge: JudgeChoice,
        /// Presentation order policy (pairwise).
        #[arg(long, value_enum)]
        order: Option<OrderArg>,
        /// High:low rubric ratio, e.g. 9:1 (mix).
        #[arg(long)]
        mix: Option<String>,
        #[arg(long, value_enum, default_value = "selective")]
        mix_mode: MixModeArg,
        /// Items excluded from latency statistics.
        #[arg(long)]
        warmup: Option<u32>,
    },
    /// Print the machine-readable record schemas.
    Schema {
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a shipped prompt template.
    Template {
        #[arg(long, value_enum)]
        name: TemplateArg,
    },
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli.global, cli.command).await {
        Ok(commands::Outcome::Clean) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Partial { item_errors }) => {
            eprintln!("completed with {item_errors} per-item error(s); see the run log");
            ExitCode::from(1)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
