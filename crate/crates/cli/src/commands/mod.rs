//! Command implementations.

mod emit;
mod evaluate;
mod judge;
mod synthesize;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use rubric_rm::config::RunConfig;
use rubric_rm::digest::{stream_seed, text_digest};
use rubric_rm::gateway::Oracle;
use rubric_rm::inference::{judge_rubric_free, judge_selective, InferenceError};
use rubric_rm::records::RECORD_SCHEMAS_JSON;
use rubric_rm::tournament::{Judgment, PairwiseJudge};
use rubric_rm::types::{Assessment, Label};

use crate::{Command, GlobalArgs, JudgeChoice, TemplateArg};

/// How a command ended: cleanly, or with per-item errors recorded in the
/// run log (exit code 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Clean,
    Partial { item_errors: u32 },
}

impl Outcome {
    pub fn from_errors(item_errors: u32) -> Outcome {
        if item_errors == 0 {
            Outcome::Clean
        } else {
            Outcome::Partial { item_errors }
        }
    }
}

/// Shared command state: resolved config and its digest.
pub(crate) struct Context_ {
    pub config: RunConfig,
    pub digest: String,
    pub force: bool,
}

pub(crate) fn load_context(global: &GlobalArgs) -> anyhow::Result<Context_> {
    let path = global
        .config
        .as_ref()
        .context("--config is required for this command")?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(concurrency) = global.concurrency {
        config.concurrency = Some(concurrency);
    }
    for (role, addr) in [
        ("generator", &global.endpoint_generator),
        ("verifier", &global.endpoint_verifier),
        ("scorer", &global.endpoint_scorer),
        ("policy", &global.endpoint_policy),
    ] {
        if let Some(addr) = addr {
            config
                .endpoints
                .entry(role.to_string())
                .and_modify(|e| e.base_address = addr.clone())
                .or_insert_with(|| rubric_rm::gateway::OracleEndpoint {
                    base_address: addr.clone(),
                    model_id: String::new(),
                    credential_ref: None,
                    timeout_s: 60.0,
                    max_in_flight: 4,
                    supports_logprobs: false,
                    api_path: "/v1/chat/completions".into(),
                    top_logprobs_cap: 20,
                });
        }
    }
    let digest = config.core_digest();
    Ok(Context_ {
        config,
        digest,
        force: global.force,
    })
}

/// Owned pairwise judge over shared oracles, selectable at runtime.
pub(crate) enum AnyJudge {
    RubricFree {
        verifier: Arc<dyn Oracle>,
        temperature: f64,
        max_new_tokens: u32,
        seed: u64,
    },
    Selective {
        generator: Arc<dyn Oracle>,
        verifier: Arc<dyn Oracle>,
        rubric_temperature: f64,
        verifier_temperature: f64,
        max_new_tokens: u32,
        seed: u64,
    },
}

impl AnyJudge {
    pub fn build(ctx: &Context_, choice: JudgeChoice) -> anyhow::Result<AnyJudge> {
        let config = &ctx.config;
        match choice {
            JudgeChoice::RubricFree => Ok(AnyJudge::RubricFree {
                verifier: config.build_oracle("verifier")?,
                temperature: config.inference.verifier_temperature,
                max_new_tokens: config.inference.max_new_tokens,
                seed: config.seed,
            }),
            JudgeChoice::Selective => Ok(AnyJudge::Selective {
                generator: config.build_oracle("generator")?,
                verifier: config.build_oracle("verifier")?,
                rubric_temperature: config.inference.rubric_temperature,
                verifier_temperature: config.inference.verifier_temperature,
                max_new_tokens: config.inference.max_new_tokens,
                seed: config.seed,
            }),
        }
    }
}

#[async_trait]
impl PairwiseJudge for AnyJudge {
    async fn judge(
        &self,
        prompt: &str,
        response_a: &str,
        response_b: &str,
    ) -> Result<Judgment, InferenceError> {
        match self {
            AnyJudge::RubricFree {
                verifier,
                temperature,
                max_new_tokens,
                seed,
            } => {
                let call_seed = stream_seed(
                    *seed,
                    "judge.rubric_free",
                    &[
                        text_digest(prompt).as_bytes(),
                        text_digest(response_a).as_bytes(),
                        text_digest(response_b).as_bytes(),
                    ],
                );
                let (verdict, tokens) = judge_rubric_free(
                    prompt,
                    response_a,
                    response_b,
                    verifier.as_ref(),
                    *temperature,
                    *max_new_tokens,
                    Some(call_seed),
                )
                .await?;
                Ok(Judgment {
                    winner: verdict.answer,
                    tokens,
                })
            }
            AnyJudge::Selective {
                generator,
                verifier,
                rubric_temperature,
                verifier_temperature,
                max_new_tokens,
                seed,
            } => {
                let outcome = judge_selective(
                    prompt,
                    response_a,
                    response_b,
                    generator.as_ref(),
                    verifier.as_ref(),
                    *rubric_temperature,
                    *verifier_temperature,
                    *max_new_tokens,
                    *seed,
                )
                .await?;
                Ok(Judgment {
                    winner: outcome.final_answer,
                    tokens: outcome.total_tokens,
                })
            }
        }
    }
}

/// One judged example, as recorded by the `judge` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct VerdictRecord {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<Label>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assessment: Option<Assessment>,
    #[serde(default)]
    pub fallback_used: bool,
    #[serde(default)]
    pub verifier_calls: u32,
    #[serde(default)]
    pub generator_calls: u32,
    #[serde(default)]
    pub tokens: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tally_a: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tally_b: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tie_broken: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invalid_votes: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub winner_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl VerdictRecord {
    pub fn failed(id: String, error: String) -> VerdictRecord {
        VerdictRecord {
            id,
            final_answer: None,
            assessment: None,
            fallback_used: false,
            verifier_calls: 0,
            generator_calls: 0,
            tokens: 0,
            tally_a: None,
            tally_b: None,
            tie_broken: None,
            invalid_votes: None,
            winner_index: None,
            error: Some(error),
        }
    }
}

/// A bare prompt line for pref-pairs / rejection emission.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct PromptRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub prompt: String,
}

/// Candidate pool for best-of-n judging.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct CandidateSet {
    pub id: String,
    pub prompt: String,
    pub candidates: Vec<String>,
}

pub(crate) fn outcomes_path(report: &Path) -> PathBuf {
    let mut os = report.as_os_str().to_owned();
    os.push(".outcomes.jsonl");
    PathBuf::from(os)
}

pub(crate) fn write_json_report<T: Serialize>(path: &Path, report: &T) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let body = serde_json::to_string_pretty(report)?;
    std::fs::write(path, body + "\n")?;
    Ok(())
}

fn parse_preset(spec: &str) -> anyhow::Result<rubric_rm::reward::RewardWeights> {
    use rubric_rm::reward::{preset_weights, Method, ModelFamily};
    let (method, family) = spec.split_once(':').unwrap_or((spec, "tulu3"));
    let method = match method {
        "c2" => Method::C2,
        "reasoning_rm" => Method::ReasoningRm,
        other => bail!("unknown preset method `{other}` (expected c2 or reasoning_rm)"),
    };
    let family = match family {
        "tulu3" => ModelFamily::Tulu3,
        "qwen3" => ModelFamily::Qwen3,
        other => bail!("unknown model family `{other}` (expected tulu3 or qwen3)"),
    };
    Ok(preset_weights(method, family))
}

async fn serve_reward(
    bind: &str,
    max_body_bytes: usize,
    weights_preset: Option<&str>,
) -> anyhow::Result<Outcome> {
    let default_weights = weights_preset.map(parse_preset).transpose()?;
    let (addr, server) = rubric_rm::service::serve(bind, max_body_bytes, default_weights).await?;
    // Announce the bound address on stdout so harnesses can find a port-0
    // binding.
    println!("listening on http://{addr}");
    use std::io::Write;
    std::io::stdout().flush().ok();
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = server => {}
    }
    Ok(Outcome::Clean)
}

fn schema(out: Option<&Path>) -> anyhow::Result<Outcome> {
    match out {
        Some(path) => std::fs::write(path, RECORD_SCHEMAS_JSON)?,
        None => println!("{RECORD_SCHEMAS_JSON}"),
    }
    Ok(Outcome::Clean)
}

pub async fn dispatch(global: GlobalArgs, command: Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Synthesize {
            input,
            out,
            resume,
            k,
            retries,
            temperature,
        } => {
            let mut ctx = load_context(&global)?;
            if let Some(k) = k {
                ctx.config.synthesis.k = k;
            }
            if let Some(retries) = retries {
                ctx.config.synthesis.retry_cap = retries;
            }
            if let Some(t) = temperature {
                ctx.config.synthesis.temperature = t;
            }
            // Flag overrides change outcomes, so refresh the digest.
            ctx.digest = ctx.config.core_digest();
            synthesize::run(&ctx, &input, &out, resume).await
        }
        Command::Emit {
            kind,
            input,
            records,
            out,
            no_negative,
            n,
            temperature,
            judge,
        } => {
            let ctx = load_context(&global)?;
            emit::run(
                &ctx,
                kind,
                &input,
                records.as_deref(),
                &out,
                no_negative,
                n,
                temperature,
                judge,
            )
            .await
        }
        Command::ServeReward {
            bind,
            max_body_bytes,
            weights_preset,
        } => serve_reward(&bind, max_body_bytes, weights_preset.as_deref()).await,
        Command::Judge {
            mode,
            input,
            out,
            votes,
            temperature,
            judge: judge_choice,
            resume,
        } => {
            let ctx = load_context(&global)?;
            judge::run(&ctx, mode, &input, &out, votes, temperature, judge_choice, resume).await
        }
        Command::Evaluate {
            metric,
            input,
            out,
            from_verdicts,
            judge,
            order,
            mix,
            mix_mode,
            warmup,
        } => {
            let ctx = load_context(&global)?;
            evaluate::run(
                &ctx,
                metric,
                &input,
                &out,
                from_verdicts.as_deref(),
                judge,
                order,
                mix.as_deref(),
                mix_mode,
                warmup,
            )
            .await
        }
        Command::Schema { out } => schema(out.as_deref()),
        Command::Template { name } => {
            let name = match name {
                TemplateArg::RubricGeneration => rubric_rm::prompts::TemplateName::RubricGeneration,
                TemplateArg::RubricFree => rubric_rm::prompts::TemplateName::RubricFree,
                TemplateArg::RubricAugmented => rubric_rm::prompts::TemplateName::RubricAugmented,
                TemplateArg::QualityEval => rubric_rm::prompts::TemplateName::QualityEval,
            };
            println!("{}", rubric_rm::prompts::template(name).body);
            Ok(Outcome::Clean)
        }
    }
}

/// Read a whole JSONL input file, with a clear error for the common
/// mistakes.
pub(crate) fn read_input<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let records: Vec<T> = rubric_rm::records::read_records(path)
        .with_context(|| format!("reading {}", path.display()))?;
    if records.is_empty() {
        bail!("{} contains no records", path.display());
    }
    Ok(records)
}
