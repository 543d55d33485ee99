//! Benchmark evaluation and analysis: pairwise accuracy, positional
//! consistency, multi-rejected scoring, rubric-quality scoring and
//! stratification, high/low rubric mixing, confidence-shift distributions,
//! and latency measurement.
//!
//! Judging fans out per item under the caller's concurrency cap; every
//! metric is a pure fold over collected outcomes, so recorded outcome files
//! can be re-scored without touching the network.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::stream_rng;
use crate::exec::map_concurrent;
use crate::gateway::{label_distribution, DistributionMethod, Oracle};
use crate::inference::{call_once, judge_selective_with_rubric};
use crate::margin::confidence_shift;
use crate::prompts::{render_quality_eval, render_rubric_augmented, render_rubric_free, render_rubric_generation};
use crate::synthesis::PreferenceExample;
use crate::tagparse::{extract_answer, parse_quality, parse_verdict};
use crate::tournament::PairwiseJudge;
use crate::types::{Label, TaskKind};

/// One benchmark comparison: a prompt, the preferred response, and one to
/// three rejected responses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: Vec<String>,
    #[serde(default)]
    pub subset_tag: String,
}

impl BenchmarkItem {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.rejected.is_empty() || self.rejected.len() > 3 {
            return Err(EvalError::InvalidItem(format!(
                "item `{}` must carry 1..=3 rejected responses",
                self.id
            )));
        }
        if self.rejected.iter().any(|r| r == &self.chosen) {
            return Err(EvalError::InvalidItem(format!(
                "item `{}` lists its chosen response as rejected",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("pool of {pool} examples is not divisible by {parts} mix parts")]
    IndivisiblePool { pool: usize, parts: u32 },
    #[error("invalid benchmark item: {0}")]
    InvalidItem(String),
    #[error("bad mix spec `{0}`, expected HIGH:LOW with positive integers")]
    BadMixSpec(String),
}

/// How items are presented for plain pairwise accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    /// Judge each item twice, chosen first in position A then in position B.
    BothOrders,
    /// One seeded presentation per item.
    RandomOrder,
}

/// Which underlying text a judgment picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum PickedText {
    Chosen,
    Rejected(usize),
}

/// One judgment over one presentation of an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderOutcome {
    /// Position the chosen text occupied.
    pub chosen_position: Label,
    /// Index of the rejected text it was paired against.
    pub rejected_index: usize,
    pub winner: Label,
    pub picked: PickedText,
    pub tokens: u64,
}

impl OrderOutcome {
    pub fn picked_chosen(&self) -> bool {
        self.picked == PickedText::Chosen
    }
}

/// All judgments collected for one item, or the error that excluded it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub item_id: String,
    pub judgments: Vec<OrderOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Wall-clock statistics in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// A rendered evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub n_items: u32,
    pub errors: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_order_accuracy: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency_rate: Option<f64>,
    pub mean_tokens: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_stats: Option<LatencyStats>,
    pub config_digest: String,
}

/// How item outcomes fold into an accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoringRule {
    /// Accuracy over individual judgments.
    PerJudgment,
    /// An item counts only when every one of its judgments picked the
    /// chosen text.
    AllJudgmentsCorrect,
}

/// Position of the chosen text for (item, slot), drawn from the seeded
/// stream. Shared by random-order pairwise and multi-rejected evaluation so
/// that the two agree on single-rejected items.
pub fn presentation(seed: u64, item_id: &str, slot: u32) -> Label {
    let mut rng = stream_rng(
        seed,
        "eval.presentation",
        &[item_id.as_bytes(), &slot.to_le_bytes()],
    );
    if rng.random_range(0..2u8) == 0 {
        Label::A
    } else {
        Label::B
    }
}

use rand::Rng;

async fn judge_presentation(
    judge: &dyn PairwiseJudge,
    item: &BenchmarkItem,
    rejected_index: usize,
    chosen_position: Label,
) -> Result<OrderOutcome, String> {
    let rejected = &item.rejected[rejected_index];
    let (pos_a, pos_b) = match chosen_position {
        Label::A => (item.chosen.as_str(), rejected.as_str()),
        Label::B => (rejected.as_str(), item.chosen.as_str()),
    };
    let judgment = judge
        .judge(&item.prompt, pos_a, pos_b)
        .await
        .map_err(|e| e.to_string())?;
    let picked = if judgment.winner == chosen_position {
        PickedText::Chosen
    } else {
        PickedText::Rejected(rejected_index)
    };
    Ok(OrderOutcome {
        chosen_position,
        rejected_index,
        winner: judgment.winner,
        picked,
        tokens: judgment.tokens,
    })
}

/// Fold outcomes into a report. Pure: re-scoring recorded outcomes never
/// touches the network.
pub fn score_outcomes(outcomes: &[ItemOutcome], rule: ScoringRule, config_digest: &str) -> EvalReport {
    let mut judged_items = 0u32;
    let mut errors = 0u32;
    let mut total_tokens = 0u64;
    let mut judgment_correct = 0u64;
    let mut judgment_total = 0u64;
    let mut item_score_sum = 0u64;
    let mut order_a = (0u64, 0u64);
    let mut order_b = (0u64, 0u64);
    let mut two_sided = true;
    let mut consistent = 0u64;

    for outcome in outcomes {
        if outcome.error.is_some() || outcome.judgments.is_empty() {
            errors += 1;
            continue;
        }
        judged_items += 1;
        let mut all_correct = true;
        for j in &outcome.judgments {
            judgment_total += 1;
            total_tokens += j.tokens;
            let correct = j.picked_chosen();
            judgment_correct += u64::from(correct);
            all_correct &= correct;
            match j.chosen_position {
                Label::A => {
                    order_a.0 += u64::from(correct);
                    order_a.1 += 1;
                }
                Label::B => {
                    order_b.0 += u64::from(correct);
                    order_b.1 += 1;
                }
            }
        }
        item_score_sum += u64::from(all_correct);
        if outcome.judgments.len() == 2 {
            consistent += u64::from(outcome.judgments[0].picked == outcome.judgments[1].picked);
        } else {
            two_sided = false;
        }
    }

    let accuracy = match rule {
        ScoringRule::PerJudgment => {
            if judgment_total == 0 {
                0.0
            } else {
                judgment_correct as f64 / judgment_total as f64
            }
        }
        ScoringRule::AllJudgmentsCorrect => {
            if judged_items == 0 {
                0.0
            } else {
                item_score_sum as f64 / f64::from(judged_items)
            }
        }
    };
    let per_order_accuracy = (two_sided && judged_items > 0 && order_a.1 > 0 && order_b.1 > 0)
        .then(|| (order_a.0 as f64 / order_a.1 as f64, order_b.0 as f64 / order_b.1 as f64));
    let consistency_rate =
        (two_sided && judged_items > 0).then(|| consistent as f64 / f64::from(judged_items));

    EvalReport {
        accuracy,
        n_items: judged_items,
        errors,
        per_order_accuracy,
        consistency_rate,
        mean_tokens: if judged_items == 0 {
            0.0
        } else {
            total_tokens as f64 / f64::from(judged_items)
        },
        latency_stats: None,
        config_digest: config_digest.to_string(),
    }
}

/// Plain pairwise accuracy over single-rejected items.
pub async fn eval_pairwise(
    items: &[BenchmarkItem],
    judge: &dyn PairwiseJudge,
    order_policy: OrderPolicy,
    seed: u64,
    concurrency: usize,
    config_digest: &str,
) -> Result<(EvalReport, Vec<ItemOutcome>), EvalError> {
    for item in items {
        item.validate()?;
        if item.rejected.len() != 1 {
            return Err(EvalError::InvalidItem(format!(
                "pairwise evaluation expects exactly 1 rejected response (item `{}`)",
                item.id
            )));
        }
    }
    let outcomes = map_concurrent(items.to_vec(), concurrency, |item| async move {
        let positions: Vec<Label> = match order_policy {
            OrderPolicy::BothOrders => vec![Label::A, Label::B],
            OrderPolicy::RandomOrder => vec![presentation(seed, &item.id, 0)],
        };
        let mut judgments = Vec::with_capacity(positions.len());
        for position in positions {
            match judge_presentation(judge, &item, 0, position).await {
                Ok(outcome) => judgments.push(outcome),
                Err(error) => {
                    return ItemOutcome {
                        item_id: item.id.clone(),
                        judgments: vec![],
                        error: Some(error),
                    }
                }
            }
        }
        ItemOutcome {
            item_id: item.id.clone(),
            judgments,
            error: None,
        }
    })
    .await;
    let report = score_outcomes(&outcomes, ScoringRule::PerJudgment, config_digest);
    Ok((report, outcomes))
}

/// Positional-consistent accuracy: an item scores only when the judge picks
/// the chosen text under both presentation orders. `consistency_rate` is the
/// fraction of items whose two verdicts named the same underlying text.
pub async fn eval_positional_consistent(
    items: &[BenchmarkItem],
    judge: &dyn PairwiseJudge,
    concurrency: usize,
    config_digest: &str,
) -> Result<(EvalReport, Vec<ItemOutcome>), EvalError> {
    for item in items {
        item.validate()?;
        if item.rejected.len() != 1 {
            return Err(EvalError::InvalidItem(format!(
                "positional-consistent evaluation expects exactly 1 rejected response (item `{}`)",
                item.id
            )));
        }
    }
    let outcomes = map_concurrent(items.to_vec(), concurrency, |item| async move {
        let mut judgments = Vec::with_capacity(2);
        for position in [Label::A, Label::B] {
            match judge_presentation(judge, &item, 0, position).await {
                Ok(outcome) => judgments.push(outcome),
                Err(error) => {
                    return ItemOutcome {
                        item_id: item.id.clone(),
                        judgments: vec![],
                        error: Some(error),
                    }
                }
            }
        }
        ItemOutcome {
            item_id: item.id.clone(),
            judgments,
            error: None,
        }
    })
    .await;
    let report = score_outcomes(&outcomes, ScoringRule::AllJudgmentsCorrect, config_digest);
    Ok((report, outcomes))
}

/// Multi-rejected scoring: the chosen text must beat every rejected text in
/// independent pairwise judgments, one seeded presentation each. With a
/// single rejected response this reduces exactly to
/// [`eval_pairwise`] under [`OrderPolicy::RandomOrder`] and the same seed.
pub async fn eval_multi_rejected(
    items: &[BenchmarkItem],
    judge: &dyn PairwiseJudge,
    seed: u64,
    concurrency: usize,
    config_digest: &str,
) -> Result<(EvalReport, Vec<ItemOutcome>), EvalError> {
    for item in items {
        item.validate()?;
    }
    let outcomes = map_concurrent(items.to_vec(), concurrency, |item| async move {
        let mut judgments = Vec::with_capacity(item.rejected.len());
        for rejected_index in 0..item.rejected.len() {
            let position = presentation(seed, &item.id, rejected_index as u32);
            match judge_presentation(judge, &item, rejected_index, position).await {
                Ok(outcome) => judgments.push(outcome),
                Err(error) => {
                    return ItemOutcome {
                        item_id: item.id.clone(),
                        judgments: vec![],
                        error: Some(error),
                    }
                }
            }
        }
        ItemOutcome {
            item_id: item.id.clone(),
            judgments,
            error: None,
        }
    })
    .await;
    let report = score_outcomes(&outcomes, ScoringRule::AllJudgmentsCorrect, config_digest);
    Ok((report, outcomes))
}

/// Quality stratum of a 1-5 rubric score: 4-5 high, 3 mid, 1-2 low.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    High,
    Mid,
    Low,
}

pub fn stratum_for(score: u8) -> Stratum {
    match score {
        4 | 5 => Stratum::High,
        3 => Stratum::Mid,
        _ => Stratum::Low,
    }
}

/// Indices of scored rubrics grouped by stratum.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrataMap {
    pub high: Vec<usize>,
    pub mid: Vec<usize>,
    pub low: Vec<usize>,
}

pub fn stratify_quality(scores: &[u8]) -> StrataMap {
    let mut map = StrataMap::default();
    for (idx, score) in scores.iter().enumerate() {
        match stratum_for(*score) {
            Stratum::High => map.high.push(idx),
            Stratum::Mid => map.mid.push(idx),
            Stratum::Low => map.low.push(idx),
        }
    }
    map
}

/// Input for rubric-quality scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityInput {
    pub id: String,
    pub question: String,
    pub response_a: String,
    pub response_b: String,
    pub rubric: String,
}

/// Per-rubric scoring result; `error` is set when the scorer's output did
/// not parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityOutcome {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub justification: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityStats {
    pub n_scored: u32,
    pub n_failed: u32,
    pub mean: f64,
    /// Counts for scores 1 through 5.
    pub histogram: [u64; 5],
}

/// Score each rubric on the 1-5 scale via the quality-evaluation prompt.
pub async fn quality_score_rubrics(
    inputs: &[QualityInput],
    scorer: &dyn Oracle,
    temperature: f64,
    max_new_tokens: u32,
    seed: u64,
    concurrency: usize,
) -> (Vec<QualityOutcome>, QualityStats) {
    let outcomes = map_concurrent(inputs.to_vec(), concurrency, |input| async move {
        let rendered = match render_quality_eval(
            &input.question,
            &input.response_a,
            &input.response_b,
            &input.rubric,
        ) {
            Ok(r) => r,
            Err(e) => {
                return QualityOutcome {
                    id: input.id,
                    score: None,
                    justification: None,
                    error: Some(e.to_string()),
                }
            }
        };
        let call_seed =
            crate::digest::stream_seed(seed, "quality.score", &[rendered.input_digest.as_bytes()]);
        let result = call_once(scorer, rendered, temperature, max_new_tokens, Some(call_seed)).await;
        match result {
            Ok(result) => match parse_quality(&result.text) {
                Ok(quality) => QualityOutcome {
                    id: input.id,
                    score: Some(quality.score),
                    justification: Some(quality.justification),
                    error: None,
                },
                Err(e) => QualityOutcome {
                    id: input.id,
                    score: None,
                    justification: None,
                    error: Some(e.to_string()),
                },
            },
            Err(e) => QualityOutcome {
                id: input.id,
                score: None,
                justification: None,
                error: Some(e.to_string()),
            },
        }
    })
    .await;

    let mut histogram = [0u64; 5];
    let mut sum = 0u64;
    let mut n_scored = 0u32;
    let mut n_failed = 0u32;
    for outcome in &outcomes {
        match outcome.score {
            Some(score) => {
                histogram[usize::from(score) - 1] += 1;
                sum += u64::from(score);
                n_scored += 1;
            }
            None => n_failed += 1,
        }
    }
    let stats = QualityStats {
        n_scored,
        n_failed,
        mean: if n_scored == 0 { 0.0 } else { sum as f64 / f64::from(n_scored) },
        histogram,
    };
    (outcomes, stats)
}

/// High:low mixing ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixSpec {
    pub high_parts: u32,
    pub low_parts: u32,
}

impl MixSpec {
    pub fn parse(spec: &str) -> Result<MixSpec, EvalError> {
        let bad = || EvalError::BadMixSpec(spec.to_string());
        let (high, low) = spec.split_once(':').ok_or_else(bad)?;
        let high_parts: u32 = high.trim().parse().map_err(|_| bad())?;
        let low_parts: u32 = low.trim().parse().map_err(|_| bad())?;
        if high_parts == 0 && low_parts == 0 {
            return Err(bad());
        }
        Ok(MixSpec { high_parts, low_parts })
    }
}

impl std::fmt::Display for MixSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.high_parts, self.low_parts)
    }
}

/// Which pool indices receive their high-quality rubric vs their low-quality
/// one. Both lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixAssignment {
    pub spec: MixSpec,
    pub high_indices: Vec<usize>,
    pub low_indices: Vec<usize>,
}

/// Seeded exact split of `pool_size` examples into high/low rubric
/// assignments in the ratio `spec`.
pub fn mix_ratios(pool_size: usize, spec: MixSpec, seed: u64) -> Result<MixAssignment, EvalError> {
    let parts = spec.high_parts + spec.low_parts;
    if parts == 0 || !pool_size.is_multiple_of(parts as usize) {
        return Err(EvalError::IndivisiblePool { pool: pool_size, parts });
    }
    let n_high = pool_size / parts as usize * spec.high_parts as usize;
    let mut indices: Vec<usize> = (0..pool_size).collect();
    let mut rng = stream_rng(
        seed,
        "eval.mix",
        &[
            &spec.high_parts.to_le_bytes(),
            &spec.low_parts.to_le_bytes(),
            &(pool_size as u64).to_le_bytes(),
        ],
    );
    indices.shuffle(&mut rng);
    let mut high_indices: Vec<usize> = indices[..n_high].to_vec();
    let mut low_indices: Vec<usize> = indices[n_high..].to_vec();
    high_indices.sort_unstable();
    low_indices.sort_unstable();
    Ok(MixAssignment {
        spec,
        high_indices,
        low_indices,
    })
}

/// One robustness-pool example: a judged pair plus one high-quality and one
/// low-quality rubric for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixExample {
    pub id: String,
    pub prompt: String,
    pub response_a: String,
    pub response_b: String,
    pub gold: Label,
    pub high_rubric: String,
    pub low_rubric: String,
}

/// How injected rubrics are consumed in the robustness evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixJudgeMode {
    /// Full protocol: follow the rubric only when assessed helpful,
    /// otherwise fall back to rubric-free judging.
    Selective,
    /// Follow every rubric's verdict (no assessment gate).
    FollowAlways,
}

/// Per-example outcome of the robustness evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixOutcome {
    pub id: String,
    pub assigned: Stratum,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<Label>,
    pub correct: bool,
    pub fallback_used: bool,
    pub tokens: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Judge a pool under mixed rubric quality.
#[allow(clippy::too_many_arguments)]
pub async fn eval_mix(
    pool: &[MixExample],
    spec: MixSpec,
    mode: MixJudgeMode,
    verifier: &dyn Oracle,
    verifier_temperature: f64,
    max_new_tokens: u32,
    seed: u64,
    concurrency: usize,
    config_digest: &str,
) -> Result<(EvalReport, MixAssignment, Vec<MixOutcome>), EvalError> {
    let assignment = mix_ratios(pool.len(), spec, seed)?;
    let tasks: Vec<(usize, MixExample)> = pool.iter().cloned().enumerate().collect();
    let high_set: std::collections::BTreeSet<usize> =
        assignment.high_indices.iter().copied().collect();

    let outcomes = map_concurrent(tasks, concurrency, |(index, example)| {
        let high = high_set.contains(&index);
        async move {
            let rubric = if high { &example.high_rubric } else { &example.low_rubric };
            let assigned = if high { Stratum::High } else { Stratum::Low };
            match mode {
                MixJudgeMode::Selective => {
                    match judge_selective_with_rubric(
                        &example.prompt,
                        &example.response_a,
                        &example.response_b,
                        rubric,
                        verifier,
                        verifier_temperature,
                        max_new_tokens,
                        seed,
                    )
                    .await
                    {
                        Ok(outcome) => MixOutcome {
                            id: example.id,
                            assigned,
                            answer: Some(outcome.final_answer),
                            correct: outcome.final_answer == example.gold,
                            fallback_used: outcome.fallback_used,
                            tokens: outcome.total_tokens,
                            error: None,
                        },
                        Err(e) => MixOutcome {
                            id: example.id,
                            assigned,
                            answer: None,
                            correct: false,
                            fallback_used: false,
                            tokens: 0,
                            error: Some(e.to_string()),
                        },
                    }
                }
                MixJudgeMode::FollowAlways => {
                    let outcome = async {
                        let rendered = render_rubric_augmented(
                            &example.prompt,
                            &example.response_a,
                            &example.response_b,
                            rubric,
                        )?;
                        let call_seed = crate::digest::stream_seed(
                            seed,
                            "mix.follow_always",
                            &[rendered.input_digest.as_bytes()],
                        );
                        let result = call_once(
                            verifier,
                            rendered,
                            verifier_temperature,
                            max_new_tokens,
                            Some(call_seed),
                        )
                        .await?;
                        // Keep any recoverable answer: this arm deliberately
                        // has no quality gate to hide behind.
                        let answer = parse_verdict(&result.text, TaskKind::RubricAugmented)
                            .map(|v| v.answer)
                            .ok()
                            .or_else(|| extract_answer(&result.text));
                        Ok::<_, crate::inference::InferenceError>((answer, result.completion_tokens))
                    }
                    .await;
                    match outcome {
                        Ok((Some(answer), tokens)) => MixOutcome {
                            id: example.id,
                            assigned,
                            answer: Some(answer),
                            correct: answer == example.gold,
                            fallback_used: false,
                            tokens,
                            error: None,
                        },
                        Ok((None, tokens)) => MixOutcome {
                            id: example.id,
                            assigned,
                            answer: None,
                            correct: false,
                            fallback_used: false,
                            tokens,
                            error: Some("no recoverable answer".into()),
                        },
                        Err(e) => MixOutcome {
                            id: example.id,
                            assigned,
                            answer: None,
                            correct: false,
                            fallback_used: false,
                            tokens: 0,
                            error: Some(e.to_string()),
                        },
                    }
                }
            }
        }
    })
    .await;

    let judged: Vec<&MixOutcome> = outcomes.iter().filter(|o| o.error.is_none()).collect();
    let errors = (outcomes.len() - judged.len()) as u32;
    let correct = judged.iter().filter(|o| o.correct).count();
    let tokens: u64 = judged.iter().map(|o| o.tokens).sum();
    let report = EvalReport {
        accuracy: if judged.is_empty() { 0.0 } else { correct as f64 / judged.len() as f64 },
        n_items: judged.len() as u32,
        errors,
        per_order_accuracy: None,
        consistency_rate: None,
        mean_tokens: if judged.is_empty() { 0.0 } else { tokens as f64 / judged.len() as f64 },
        latency_stats: None,
        config_digest: config_digest.to_string(),
    };
    Ok((report, assignment, outcomes))
}

/// Per-example confidence shift from one sampled rubric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaOutcome {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Histogram over [-1, 1] as (bin_left, count) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub bins: Vec<(f64, u64)>,
}

impl Histogram {
    pub fn of_deltas(deltas: &[f64], bin_width: f64) -> Histogram {
        let bin_width = if bin_width > 0.0 { bin_width } else { 0.1 };
        let n_bins = (2.0 / bin_width).ceil().max(1.0) as usize;
        let mut counts = vec![0u64; n_bins];
        for &delta in deltas {
            let idx = (((delta + 1.0) / bin_width).floor() as isize)
                .clamp(0, n_bins as isize - 1) as usize;
            counts[idx] += 1;
        }
        Histogram {
            bin_width,
            bins: counts
                .into_iter()
                .enumerate()
                .map(|(i, c)| (-1.0 + i as f64 * bin_width, c))
                .collect(),
        }
    }

    pub fn total_mass(&self) -> u64 {
        self.bins.iter().map(|(_, c)| c).sum()
    }
}

/// Settings for the confidence-shift experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaParams {
    pub margin_method: DistributionMethod,
    pub mc_samples: u32,
    pub smoothing: f64,
    pub rubric_temperature: f64,
    pub max_new_tokens: u32,
    pub seed: u64,
    pub bin_width: f64,
}

/// For each example: sample one rubric from the generator, query the
/// verifier's label distribution with and without it, and record the shift
/// in probability assigned to the gold label.
pub async fn delta_distribution(
    examples: &[PreferenceExample],
    generator: &dyn Oracle,
    verifier: &dyn Oracle,
    params: &DeltaParams,
    concurrency: usize,
) -> (Vec<DeltaOutcome>, Histogram) {
    let outcomes = map_concurrent(examples.to_vec(), concurrency, |example| async move {
        let result = async {
            let gen_prompt = render_rubric_generation(
                &example.prompt,
                &example.response_a,
                &example.response_b,
            )?;
            let rubric_seed = crate::digest::stream_seed(
                params.seed,
                "delta.rubric",
                &[example.id.as_bytes()],
            );
            let rubric = call_once(
                generator,
                gen_prompt,
                params.rubric_temperature,
                params.max_new_tokens,
                Some(rubric_seed),
            )
            .await?;

            let free_prompt = render_rubric_free(
                &example.prompt,
                &example.response_a,
                &example.response_b,
            )?;
            let aug_prompt = render_rubric_augmented(
                &example.prompt,
                &example.response_a,
                &example.response_b,
                &rubric.text,
            )?;
            let without = label_distribution(
                verifier,
                &free_prompt,
                params.margin_method,
                params.mc_samples,
                params.smoothing,
                Some(crate::digest::stream_seed(params.seed, "delta.without", &[example.id.as_bytes()])),
                params.max_new_tokens,
            )
            .await?;
            let with = label_distribution(
                verifier,
                &aug_prompt,
                params.margin_method,
                params.mc_samples,
                params.smoothing,
                Some(crate::digest::stream_seed(params.seed, "delta.with", &[example.id.as_bytes()])),
                params.max_new_tokens,
            )
            .await?;
            Ok::<_, crate::inference::InferenceError>(
                confidence_shift(&with, &without, example.gold).delta,
            )
        }
        .await;
        match result {
            Ok(delta) => DeltaOutcome {
                id: example.id,
                delta: Some(delta),
                error: None,
            },
            Err(e) => DeltaOutcome {
                id: example.id,
                delta: None,
                error: Some(e.to_string()),
            },
        }
    })
    .await;

    let deltas: Vec<f64> = outcomes.iter().filter_map(|o| o.delta).collect();
    let histogram = Histogram::of_deltas(&deltas, params.bin_width);
    (outcomes, histogram)
}

/// Wall-clock latency per item, excluding `warmup` leading items. Runs
/// sequentially so measurements do not overlap.
pub async fn measure_latency(
    items: &[BenchmarkItem],
    judge: &dyn PairwiseJudge,
    warmup: usize,
    seed: u64,
) -> (LatencyStats, u64, u32) {
    let mut samples_ms: Vec<f64> = Vec::new();
    let mut total_tokens = 0u64;
    let mut errors = 0u32;
    for (index, item) in items.iter().enumerate() {
        let position = presentation(seed, &item.id, 0);
        let start = Instant::now();
        let outcome = judge_presentation(judge, item, 0, position).await;
        let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        match outcome {
            Ok(o) => {
                if index >= warmup {
                    samples_ms.push(elapsed_ms);
                    total_tokens += o.tokens;
                }
            }
            Err(_) => errors += 1,
        }
    }
    let n = samples_ms.len() as f64;
    let mean_ms = if n > 0.0 { samples_ms.iter().sum::<f64>() / n } else { 0.0 };
    let variance = if n > 0.0 {
        samples_ms.iter().map(|s| (s - mean_ms).powi(2)).sum::<f64>() / n
    } else {
        0.0
    };
    (
        LatencyStats {
            mean_ms,
            std_ms: variance.sqrt(),
        },
        total_tokens,
        errors,
    )
}

/// Render labeled reports as a fixed-width text table: one row per method,
/// accuracy columns plus bookkeeping.
pub fn render_table(rows: &[(String, EvalReport)]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<28} {:>9} {:>9} {:>7} {:>7} {:>11}\n",
        "Method", "Acc(%)", "Cons(%)", "N", "Err", "MeanTokens"
    ));
    out.push_str(&"-".repeat(76));
    out.push('\n');
    for (label, report) in rows {
        let consistency = report
            .consistency_rate
            .map(|c| format!("{:.1}", c * 100.0))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<28} {:>9.1} {:>9} {:>7} {:>7} {:>11.1}\n",
            label,
            report.accuracy * 100.0,
            consistency,
            report.n_items,
            report.errors,
            report.mean_tokens,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::InferenceError;
    use crate::tournament::Judgment;

    fn item(id: &str, rejected: usize) -> BenchmarkItem {
        BenchmarkItem {
            id: id.into(),
            prompt: format!("prompt {id}"),
            chosen: "the good one".into(),
            rejected: (0..rejected).map(|i| format!("bad {i}")).collect(),
            subset_tag: "hard".into(),
        }
    }

    async fn chosen_judge(_p: String, a: String, _b: String) -> Result<Judgment, InferenceError> {
        // Recognizes the chosen text by content; position-blind.
        Ok(Judgment {
            winner: if a == "the good one" { Label::A } else { Label::B },
            tokens: 4,
        })
    }

    async fn position_a_judge(_p: String, _a: String, _b: String) -> Result<Judgment, InferenceError> {
        Ok(Judgment { winner: Label::A, tokens: 4 })
    }

    #[tokio::test]
    async fn position_blind_judge_scores_half_under_both_orders() {
        let items: Vec<_> = (0..4).map(|i| item(&format!("i{i}"), 1)).collect();
        let (report, _) = eval_pairwise(&items, &position_a_judge, OrderPolicy::BothOrders, 0, 2, "d")
            .await
            .unwrap();
        assert_eq!(report.accuracy, 0.5);
        assert_eq!(report.per_order_accuracy, Some((1.0, 0.0)));
        assert_eq!(report.n_items, 4);
    }

    #[tokio::test]
    async fn perfect_judge_scores_one() {
        let items: Vec<_> = (0..4).map(|i| item(&format!("i{i}"), 1)).collect();
        let (report, outcomes) =
            eval_pairwise(&items, &chosen_judge, OrderPolicy::BothOrders, 0, 2, "d")
                .await
                .unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert!(outcomes.iter().all(|o| o.judgments.len() == 2));
    }

    #[test]
    fn twelve_verdicts_nine_correct_is_three_quarters() {
        let outcomes: Vec<ItemOutcome> = (0..12)
            .map(|i| ItemOutcome {
                item_id: format!("i{i}"),
                judgments: vec![OrderOutcome {
                    chosen_position: Label::A,
                    rejected_index: 0,
                    winner: if i < 9 { Label::A } else { Label::B },
                    picked: if i < 9 { PickedText::Chosen } else { PickedText::Rejected(0) },
                    tokens: 10,
                }],
                error: None,
            })
            .collect();
        let report = score_outcomes(&outcomes, ScoringRule::PerJudgment, "d");
        assert_eq!(report.accuracy, 0.75);
        assert_eq!(report.n_items, 12);
        assert_eq!(report.mean_tokens, 10.0);
    }

    #[tokio::test]
    async fn consistent_scoring_requires_both_orders_correct() {
        let items: Vec<_> = (0..3).map(|i| item(&format!("i{i}"), 1)).collect();
        // Position-A judge: picks chosen when chosen sits in A, rejected
        // otherwise. Never consistent, never both-correct.
        let (report, _) = eval_positional_consistent(&items, &position_a_judge, 2, "d")
            .await
            .unwrap();
        assert_eq!(report.accuracy, 0.0);
        assert_eq!(report.consistency_rate, Some(0.0));

        let (report, _) = eval_positional_consistent(&items, &chosen_judge, 2, "d")
            .await
            .unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.consistency_rate, Some(1.0));
    }

    #[tokio::test]
    async fn picking_rejected_under_both_orders_is_consistent_but_wrong() {
        async fn rejected_judge(_p: String, a: String, _b: String) -> Result<Judgment, InferenceError> {
            Ok(Judgment {
                winner: if a == "the good one" { Label::B } else { Label::A },
                tokens: 1,
            })
        }
        let items = vec![item("only", 1)];
        let (report, _) = eval_positional_consistent(&items, &rejected_judge, 1, "d")
            .await
            .unwrap();
        assert_eq!(report.accuracy, 0.0);
        assert_eq!(report.consistency_rate, Some(1.0));
    }

    #[tokio::test]
    async fn multi_rejected_requires_beating_every_rejected() {
        let items = vec![item("m", 3)];
        let (report, outcomes) = eval_multi_rejected(&items, &chosen_judge, 5, 2, "d")
            .await
            .unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(outcomes[0].judgments.len(), 3);

        async fn loses_to_second(_p: String, a: String, b: String) -> Result<Judgment, InferenceError> {
            let chosen_in_a = a == "the good one";
            let rejected = if chosen_in_a { &b } else { &a };
            let chosen_wins = rejected != "bad 1";
            Ok(Judgment {
                winner: if chosen_wins == chosen_in_a { Label::A } else { Label::B },
                tokens: 1,
            })
        }
        let (report, _) = eval_multi_rejected(&items, &loses_to_second, 5, 2, "d")
            .await
            .unwrap();
        assert_eq!(report.accuracy, 0.0);
    }

    #[tokio::test]
    async fn single_rejected_multi_equals_random_order_pairwise() {
        let items: Vec<_> = (0..8).map(|i| item(&format!("i{i}"), 1)).collect();
        async fn position_judge(_p: String, a: String, _b: String) -> Result<Judgment, InferenceError> {
            // Sensitive to position via text comparison.
            Ok(Judgment {
                winner: if a.as_str() < "m" { Label::A } else { Label::B },
                tokens: 2,
            })
        }
        let seed = 11;
        let (rep_multi, out_multi) = eval_multi_rejected(&items, &position_judge, seed, 2, "d")
            .await
            .unwrap();
        let (rep_pair, out_pair) =
            eval_pairwise(&items, &position_judge, OrderPolicy::RandomOrder, seed, 2, "d")
                .await
                .unwrap();
        assert_eq!(rep_multi.accuracy, rep_pair.accuracy);
        assert_eq!(out_multi, out_pair);
    }

    #[test]
    fn strata_follow_published_cutoffs() {
        assert_eq!(stratum_for(4), Stratum::High);
        assert_eq!(stratum_for(5), Stratum::High);
        assert_eq!(stratum_for(3), Stratum::Mid);
        assert_eq!(stratum_for(2), Stratum::Low);
        assert_eq!(stratum_for(1), Stratum::Low);
        let map = stratify_quality(&[4, 3, 2, 5, 1]);
        assert_eq!(map.high, vec![0, 3]);
        assert_eq!(map.mid, vec![1]);
        assert_eq!(map.low, vec![2, 4]);
    }

    #[test]
    fn mix_ratios_are_exact_and_reproducible() {
        for (spec, expected_high) in [
            ("9:1", 270),
            ("7:3", 210),
            ("5:5", 150),
            ("3:7", 90),
            ("1:9", 30),
        ] {
            let spec = MixSpec::parse(spec).unwrap();
            let assignment = mix_ratios(300, spec, 17).unwrap();
            assert_eq!(assignment.high_indices.len(), expected_high);
            assert_eq!(assignment.low_indices.len(), 300 - expected_high);
            let again = mix_ratios(300, spec, 17).unwrap();
            assert_eq!(assignment, again);
        }
        let small = mix_ratios(10, MixSpec::parse("3:7").unwrap(), 0).unwrap();
        assert_eq!(small.high_indices.len(), 3);
        assert_eq!(small.low_indices.len(), 7);
    }

    #[test]
    fn indivisible_pool_is_rejected() {
        match mix_ratios(301, MixSpec { high_parts: 9, low_parts: 1 }, 0) {
            Err(EvalError::IndivisiblePool { pool: 301, parts: 10 }) => {}
            other => panic!("expected IndivisiblePool, got {other:?}"),
        }
    }

    #[test]
    fn mix_spec_parsing() {
        assert_eq!(MixSpec::parse("9:1").unwrap(), MixSpec { high_parts: 9, low_parts: 1 });
        assert!(MixSpec::parse("91").is_err());
        assert!(MixSpec::parse("a:b").is_err());
    }

    #[test]
    fn histogram_mass_and_bins() {
        let h = Histogram::of_deltas(&[0.0, 0.0, 0.25, -0.3, 1.0], 0.1);
        assert_eq!(h.total_mass(), 5);
        assert_eq!(h.bins.len(), 20);
        // 0.25 lands in the bin [0.2, 0.3).
        assert_eq!(h.bins[12].1, 1);
        assert!((h.bins[12].0 - 0.2).abs() < 1e-9);
        // delta = 1.0 clamps into the last bin.
        assert_eq!(h.bins.last().unwrap().1, 1);
    }

    #[test]
    fn empty_outcomes_fold_to_zero() {
        let report = score_outcomes(&[], ScoringRule::PerJudgment, "d");
        assert_eq!(report.accuracy, 0.0);
        assert_eq!(report.n_items, 0);
    }

    #[test]
    fn errored_items_are_excluded_and_counted() {
        let outcomes = vec![
            ItemOutcome {
                item_id: "ok".into(),
                judgments: vec![OrderOutcome {
                    chosen_position: Label::A,
                    rejected_index: 0,
                    winner: Label::A,
                    picked: PickedText::Chosen,
                    tokens: 2,
                }],
                error: None,
            },
            ItemOutcome {
                item_id: "bad".into(),
                judgments: vec![],
                error: Some("judge exploded".into()),
            },
        ];
        let report = score_outcomes(&outcomes, ScoringRule::PerJudgment, "d");
        assert_eq!(report.n_items, 1);
        assert_eq!(report.errors, 1);
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn table_renders_one_row_per_report() {
        let report = EvalReport {
            accuracy: 0.75,
            n_items: 12,
            errors: 0,
            per_order_accuracy: None,
            consistency_rate: Some(0.8),
            mean_tokens: 55.0,
            latency_stats: None,
            config_digest: "d".into(),
        };
        let table = render_table(&[("baseline".into(), report)]);
        assert!(table.contains("baseline"));
        assert!(table.contains("75.0"));
        assert!(table.contains("80.0"));
    }

    #[test]
    fn benchmark_item_validation() {
        assert!(item("x", 1).validate().is_ok());
        assert!(item("x", 0).validate().is_err());
        assert!(item("x", 4).validate().is_err());
        let mut dup = item("x", 1);
        dup.rejected[0] = dup.chosen.clone();
        assert!(dup.validate().is_err());
    }
}
