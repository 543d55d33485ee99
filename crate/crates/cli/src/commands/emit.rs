//! `emit`: assemble training datasets.

use std::path::Path;

use anyhow::Context;

use rubric_rm::datasets::{
    build_preference_pairs, emit_dpo, emit_generator_sft, emit_grpo, select_rejection_sampling,
    AblationVariant,
};
use rubric_rm::records::{check_config_digest, RecordWriter};
use rubric_rm::synthesis::{PreferenceExample, SynthesisRecord};

use super::{AnyJudge, Context_, Outcome, PromptRecord};
use crate::runlog::RunLog;
use crate::{EmitKind, JudgeChoice};

#[allow(clippy::too_many_arguments)]
pub async fn run(
    ctx: &Context_,
    kind: EmitKind,
    input: &Path,
    records: Option<&Path>,
    out: &Path,
    no_negative: bool,
    n: Option<u32>,
    temperature: Option<f64>,
    judge_choice: JudgeChoice,
) -> anyhow::Result<Outcome> {
    let log = RunLog::beside(out);
    match kind {
        EmitKind::Dpo | EmitKind::Grpo | EmitKind::Sft => {
            let records_path = records.context("--records is required for this emit kind")?;
            check_config_digest(records_path, &ctx.digest, ctx.force)?;
            let examples: Vec<PreferenceExample> = super::read_input(input)?;
            let synth: Vec<SynthesisRecord> = super::read_input(records_path)?;
            let mut writer = RecordWriter::create(out, &ctx.digest)?;

            let summary = match kind {
                EmitKind::Dpo => {
                    let counts = emit_dpo(&examples, &synth, &mut writer)?;
                    serde_json::json!({
                        "command": "emit",
                        "kind": "dpo",
                        "pairs": counts.pairs,
                        "skipped_identical": counts.skipped_identical,
                    })
                }
                EmitKind::Grpo => {
                    let variant = if no_negative {
                        AblationVariant::NoNegativeRubrics
                    } else {
                        AblationVariant::Full
                    };
                    let counts = emit_grpo(&examples, &synth, variant, &mut writer)?;
                    serde_json::json!({
                        "command": "emit",
                        "kind": "grpo",
                        "variant": variant,
                        "rubric_free": counts.rubric_free,
                        "rubric_augmented": counts.rubric_augmented,
                        "total": counts.total,
                    })
                }
                EmitKind::Sft => {
                    let written = emit_generator_sft(&examples, &synth, &mut writer)?;
                    serde_json::json!({
                        "command": "emit",
                        "kind": "sft",
                        "written": written,
                    })
                }
                _ => unreachable!(),
            };
            let written = writer.finish()?;
            log.event("emit.done", summary.clone());
            log.progress(&format!("wrote {written} record(s) to {}", out.display()));
            println!("{summary}");
            Ok(Outcome::Clean)
        }
        EmitKind::PrefPairs | EmitKind::Rejection => {
            let prompts: Vec<PromptRecord> = super::read_input(input)?;
            let prompt_texts: Vec<String> = prompts.into_iter().map(|p| p.prompt).collect();
            let policy = ctx.config.build_oracle("policy")?;
            let judge = AnyJudge::build(ctx, judge_choice)?;
            let n_candidates = n.unwrap_or(ctx.config.eval.n_candidates);
            let temperature = temperature.unwrap_or(1.0);
            let mut writer = RecordWriter::create(out, &ctx.digest)?;

            let summary = match kind {
                EmitKind::PrefPairs => {
                    let pairs = build_preference_pairs(
                        &prompt_texts,
                        policy.as_ref(),
                        &judge,
                        n_candidates,
                        temperature,
                        ctx.config.inference.max_new_tokens,
                        ctx.config.seed,
                        ctx.config.concurrency(),
                    )
                    .await?;
                    for pair in &pairs {
                        writer.write(pair)?;
                    }
                    serde_json::json!({
                        "command": "emit",
                        "kind": "pref_pairs",
                        "pairs": pairs.len(),
                        "n_candidates": n_candidates,
                    })
                }
                EmitKind::Rejection => {
                    let rows = select_rejection_sampling(
                        &prompt_texts,
                        policy.as_ref(),
                        &judge,
                        n_candidates,
                        temperature,
                        ctx.config.inference.max_new_tokens,
                        ctx.config.seed,
                        ctx.config.concurrency(),
                    )
                    .await?;
                    for row in &rows {
                        writer.write(row)?;
                    }
                    serde_json::json!({
                        "command": "emit",
                        "kind": "rejection",
                        "selected": rows.len(),
                        "n_candidates": n_candidates,
                    })
                }
                _ => unreachable!(),
            };
            let written = writer.finish()?;
            log.event("emit.done", summary.clone());
            log.progress(&format!("wrote {written} record(s) to {}", out.display()));
            println!("{summary}");
            Ok(Outcome::Clean)
        }
    }
}
