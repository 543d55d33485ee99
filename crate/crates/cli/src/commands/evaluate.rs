//! `evaluate`: metrics over benchmark files, pools, and recorded verdicts.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use serde::Serialize;

use rubric_rm::eval::{
    delta_distribution, eval_mix, eval_multi_rejected, eval_pairwise, eval_positional_consistent,
    measure_latency, quality_score_rubrics, render_table, stratify_quality, BenchmarkItem,
    DeltaParams, EvalReport, MixExample, MixJudgeMode, MixSpec, OrderPolicy, QualityInput,
};
use rubric_rm::records::{check_config_digest, RecordWriter};
use rubric_rm::synthesis::PreferenceExample;

use super::{outcomes_path, write_json_report, AnyJudge, Context_, Outcome, VerdictRecord};
use crate::runlog::RunLog;
use crate::{JudgeChoice, Metric, MixModeArg, OrderArg};

fn write_outcomes<T: Serialize>(out: &Path, digest: &str, outcomes: &[T]) -> anyhow::Result<u64> {
    let path = outcomes_path(out);
    let mut writer = RecordWriter::create(&path, digest)?;
    for outcome in outcomes {
        writer.write(outcome)?;
    }
    Ok(writer.finish()?)
}

fn finish_accuracy_report(
    label: &str,
    out: &Path,
    report: &EvalReport,
    log: &RunLog,
) -> anyhow::Result<Outcome> {
    write_json_report(out, report)?;
    let table = render_table(&[(label.to_string(), report.clone())]);
    let mut table_path = out.as_os_str().to_owned();
    table_path.push(".txt");
    std::fs::write(&table_path, &table)?;
    log.progress(&table);
    log.event("evaluate.done", serde_json::to_value(report)?);
    println!(
        "{}",
        serde_json::json!({
            "command": "evaluate",
            "metric": label,
            "accuracy": report.accuracy,
            "n_items": report.n_items,
            "errors": report.errors,
            "out": out.display().to_string(),
        })
    );
    Ok(Outcome::from_errors(report.errors))
}

/// Re-score recorded verdicts against gold labels; no network.
fn pairwise_from_verdicts(
    ctx: &Context_,
    verdicts_path: &Path,
    input: &Path,
    out: &Path,
    log: &RunLog,
) -> anyhow::Result<Outcome> {
    check_config_digest(verdicts_path, &ctx.digest, ctx.force)?;
    let examples: Vec<PreferenceExample> = super::read_input(input)?;
    let gold: BTreeMap<&str, rubric_rm::types::Label> =
        examples.iter().map(|e| (e.id.as_str(), e.gold)).collect();
    let verdicts: Vec<VerdictRecord> = super::read_input(verdicts_path)?;

    let mut correct = 0u64;
    let mut judged = 0u32;
    let mut errors = 0u32;
    let mut tokens = 0u64;
    for verdict in &verdicts {
        let (Some(answer), None) = (verdict.final_answer, &verdict.error) else {
            errors += 1;
            continue;
        };
        let Some(gold) = gold.get(verdict.id.as_str()) else {
            bail!("verdict for unknown example id `{}`", verdict.id);
        };
        judged += 1;
        tokens += verdict.tokens;
        correct += u64::from(answer == *gold);
    }
    let report = EvalReport {
        accuracy: if judged == 0 { 0.0 } else { correct as f64 / f64::from(judged) },
        n_items: judged,
        errors,
        per_order_accuracy: None,
        consistency_rate: None,
        mean_tokens: if judged == 0 { 0.0 } else { tokens as f64 / f64::from(judged) },
        latency_stats: None,
        config_digest: ctx.digest.clone(),
    };
    finish_accuracy_report("pairwise(from-verdicts)", out, &report, log)
}

#[allow(clippy::too_many_arguments)]
pub async fn run(
    ctx: &Context_,
    metric: Metric,
    input: &Path,
    out: &Path,
    from_verdicts: Option<&Path>,
    judge_choice: JudgeChoice,
    order: Option<OrderArg>,
    mix: Option<&str>,
    mix_mode: MixModeArg,
    warmup: Option<u32>,
) -> anyhow::Result<Outcome> {
    let log = RunLog::beside(out);
    let digest = ctx.digest.clone();
    let concurrency = ctx.config.concurrency();
    let seed = ctx.config.seed;

    match metric {
        Metric::Pairwise => {
            if let Some(verdicts_path) = from_verdicts {
                return pairwise_from_verdicts(ctx, verdicts_path, input, out, &log);
            }
            let items: Vec<BenchmarkItem> = super::read_input(input)?;
            let judge = AnyJudge::build(ctx, judge_choice)?;
            let policy = match order {
                Some(OrderArg::Both) => OrderPolicy::BothOrders,
                Some(OrderArg::Random) => OrderPolicy::RandomOrder,
                None => ctx.config.eval.order_policy,
            };
            let (report, outcomes) =
                eval_pairwise(&items, &judge, policy, seed, concurrency, &digest).await?;
            write_outcomes(out, &digest, &outcomes)?;
            finish_accuracy_report("pairwise", out, &report, &log)
        }
        Metric::Consistent => {
            let items: Vec<BenchmarkItem> = super::read_input(input)?;
            let judge = AnyJudge::build(ctx, judge_choice)?;
            let (report, outcomes) =
                eval_positional_consistent(&items, &judge, concurrency, &digest).await?;
            write_outcomes(out, &digest, &outcomes)?;
            finish_accuracy_report("positional-consistent", out, &report, &log)
        }
        Metric::MultiRejected => {
            let items: Vec<BenchmarkItem> = super::read_input(input)?;
            let judge = AnyJudge::build(ctx, judge_choice)?;
            let (report, outcomes) =
                eval_multi_rejected(&items, &judge, seed, concurrency, &digest).await?;
            write_outcomes(out, &digest, &outcomes)?;
            finish_accuracy_report("multi-rejected", out, &report, &log)
        }
        Metric::Mix => {
            let pool: Vec<MixExample> = super::read_input(input)?;
            let spec = MixSpec::parse(mix.context("--mix HIGH:LOW is required for this metric")?)?;
            let mode = match mix_mode {
                MixModeArg::Selective => MixJudgeMode::Selective,
                MixModeArg::FollowAlways => MixJudgeMode::FollowAlways,
            };
            let verifier = ctx.config.build_oracle("verifier")?;
            let (report, assignment, outcomes) = eval_mix(
                &pool,
                spec,
                mode,
                verifier.as_ref(),
                ctx.config.inference.verifier_temperature,
                ctx.config.inference.max_new_tokens,
                seed,
                concurrency,
                &digest,
            )
            .await?;
            write_outcomes(out, &digest, &outcomes)?;
            #[derive(Serialize)]
            struct MixReport<'r> {
                #[serde(flatten)]
                report: &'r EvalReport,
                spec: String,
                high_assigned: usize,
                low_assigned: usize,
                assignment: &'r rubric_rm::eval::MixAssignment,
            }
            write_json_report(
                out,
                &MixReport {
                    report: &report,
                    spec: spec.to_string(),
                    high_assigned: assignment.high_indices.len(),
                    low_assigned: assignment.low_indices.len(),
                    assignment: &assignment,
                },
            )?;
            log.event("evaluate.done", serde_json::to_value(&report)?);
            println!(
                "{}",
                serde_json::json!({
                    "command": "evaluate",
                    "metric": "mix",
                    "spec": spec.to_string(),
                    "accuracy": report.accuracy,
                    "high_assigned": assignment.high_indices.len(),
                    "low_assigned": assignment.low_indices.len(),
                    "out": out.display().to_string(),
                })
            );
            Ok(Outcome::from_errors(report.errors))
        }
        Metric::Delta => {
            let examples: Vec<PreferenceExample> = super::read_input(input)?;
            let generator = ctx.config.build_oracle("generator")?;
            let verifier = ctx.config.build_oracle("verifier")?;
            let params = DeltaParams {
                margin_method: ctx.config.synthesis.margin_method,
                mc_samples: ctx.config.synthesis.mc_samples,
                smoothing: ctx.config.synthesis.smoothing,
                rubric_temperature: ctx.config.inference.rubric_temperature,
                max_new_tokens: ctx.config.inference.max_new_tokens,
                seed,
                bin_width: ctx.config.eval.bin_width,
            };
            let (outcomes, histogram) =
                delta_distribution(&examples, generator.as_ref(), verifier.as_ref(), &params, concurrency)
                    .await;
            write_outcomes(out, &digest, &outcomes)?;
            let errors = outcomes.iter().filter(|o| o.error.is_some()).count() as u32;
            #[derive(Serialize)]
            struct DeltaReport {
                n_examples: usize,
                errors: u32,
                bin_width: f64,
                histogram: Vec<(f64, u64)>,
                config_digest: String,
            }
            write_json_report(
                out,
                &DeltaReport {
                    n_examples: outcomes.len(),
                    errors,
                    bin_width: histogram.bin_width,
                    histogram: histogram.bins.clone(),
                    config_digest: digest.clone(),
                },
            )?;
            log.event(
                "evaluate.done",
                serde_json::json!({ "metric": "delta", "n": outcomes.len(), "errors": errors }),
            );
            println!(
                "{}",
                serde_json::json!({
                    "command": "evaluate",
                    "metric": "delta",
                    "n_examples": outcomes.len(),
                    "errors": errors,
                    "out": out.display().to_string(),
                })
            );
            Ok(Outcome::from_errors(errors))
        }
        Metric::Quality => {
            let inputs: Vec<QualityInput> = super::read_input(input)?;
            let scorer = ctx.config.build_oracle("scorer")?;
            let (outcomes, stats) = quality_score_rubrics(
                &inputs,
                scorer.as_ref(),
                ctx.config.inference.verifier_temperature,
                ctx.config.inference.max_new_tokens,
                seed,
                concurrency,
            )
            .await;
            write_outcomes(out, &digest, &outcomes)?;
            let scores: Vec<u8> = outcomes.iter().filter_map(|o| o.score).collect();
            let strata = stratify_quality(&scores);
            #[derive(Serialize)]
            struct QualityReport {
                n_scored: u32,
                n_failed: u32,
                mean: f64,
                histogram: [u64; 5],
                high: usize,
                mid: usize,
                low: usize,
                config_digest: String,
            }
            write_json_report(
                out,
                &QualityReport {
                    n_scored: stats.n_scored,
                    n_failed: stats.n_failed,
                    mean: stats.mean,
                    histogram: stats.histogram,
                    high: strata.high.len(),
                    mid: strata.mid.len(),
                    low: strata.low.len(),
                    config_digest: digest.clone(),
                },
            )?;
            log.event(
                "evaluate.done",
                serde_json::json!({ "metric": "quality", "mean": stats.mean, "failed": stats.n_failed }),
            );
            println!(
                "{}",
                serde_json::json!({
                    "command": "evaluate",
                    "metric": "quality",
                    "mean": stats.mean,
                    "n_scored": stats.n_scored,
                    "n_failed": stats.n_failed,
                    "out": out.display().to_string(),
                })
            );
            Ok(Outcome::from_errors(stats.n_failed))
        }
        Metric::Latency => {
            let items: Vec<BenchmarkItem> = super::read_input(input)?;
            let judge = AnyJudge::build(ctx, judge_choice)?;
            let warmup = warmup.unwrap_or(ctx.config.eval.warmup) as usize;
            let (stats, tokens, errors) = measure_latency(&items, &judge, warmup, seed).await;
            #[derive(Serialize)]
            struct LatencyReport {
                mean_ms: f64,
                std_ms: f64,
                measured_items: usize,
                warmup: usize,
                total_tokens: u64,
                errors: u32,
                config_digest: String,
            }
            write_json_report(
                out,
                &LatencyReport {
                    mean_ms: stats.mean_ms,
                    std_ms: stats.std_ms,
                    measured_items: items.len().saturating_sub(warmup),
                    warmup,
                    total_tokens: tokens,
                    errors,
                    config_digest: digest.clone(),
                },
            )?;
            log.event(
                "evaluate.done",
                serde_json::json!({ "metric": "latency", "mean_ms": stats.mean_ms, "std_ms": stats.std_ms }),
            );
            println!(
                "{}",
                serde_json::json!({
                    "command": "evaluate",
                    "metric": "latency",
                    "mean_ms": stats.mean_ms,
                    "std_ms": stats.std_ms,
                    "total_tokens": tokens,
                    "out": out.display().to_string(),
                })
            );
            Ok(Outcome::from_errors(errors))
        }
    }
}
