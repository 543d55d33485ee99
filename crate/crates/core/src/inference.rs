//! Judging protocols: rubric-free, selective rubric-augmented with fallback,
//! majority voting, and best-of-N selection.
//!
//! The selective protocol samples one rubric from the generator and runs
//! rubric-augmented verification. The rubric assessment gates the result:
//! only `helpful` licenses trusting the rubric-conditioned verdict. On
//! `misleading` — or on output whose assessment cannot be read at all — the
//! verifier is queried once more without the rubric and that verdict stands.
//! There is no third attempt.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{stream_rng, stream_seed, text_digest};
use crate::gateway::{GatewayError, GenerationRequest, GenerationResult, Oracle};
use crate::prompts::{render_rubric_augmented, render_rubric_free, render_rubric_generation, PromptError};
use crate::tagparse::{parse_verdict, ParseError, Verdict};
use crate::tournament::{run_bracket, Judgment, PairwiseJudge, TournamentTrace};
use crate::types::{Assessment, Label, TaskKind};

use async_trait::async_trait;
use rand::Rng;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("verdict parse failed ({source}); raw output starts: {raw_head}")]
    ParseFailed { source: ParseError, raw_head: String },
    #[error("cannot vote over an empty verdict list")]
    EmptyVotes,
    #[error("cannot select from an empty candidate pool")]
    EmptyCandidates,
    #[error("generation returned no choices")]
    NoChoices,
}

fn parse_failed(source: ParseError, raw: &str) -> InferenceError {
    let raw_head: String = raw.chars().take(200).collect();
    InferenceError::ParseFailed { source, raw_head }
}

/// Result of one selective-inference run over a single example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceOutcome {
    pub final_answer: Label,
    /// The assessment read from the rubric-augmented output; `None` when
    /// that output was unparseable.
    pub assessment: Option<Assessment>,
    pub rubric_text: String,
    pub fallback_used: bool,
    pub verifier_calls: u32,
    pub generator_calls: u32,
    pub total_tokens: u64,
}

/// One generation call expecting a single completion.
pub(crate) async fn call_once(
    oracle: &dyn Oracle,
    prompt: crate::prompts::RenderedPrompt,
    temperature: f64,
    max_new_tokens: u32,
    seed: Option<u64>,
) -> Result<GenerationResult, InferenceError> {
    let mut req = GenerationRequest::new(prompt, temperature, 1, max_new_tokens);
    req.seed = seed;
    let mut results = oracle.generate(&req).await?;
    if results.is_empty() {
        return Err(InferenceError::NoChoices);
    }
    Ok(results.swap_remove(0))
}

/// Judge one pair without a rubric. Returns the parsed verdict and the
/// completion token count.
pub async fn judge_rubric_free(
    prompt: &str,
    response_a: &str,
    response_b: &str,
    verifier: &dyn Oracle,
    temperature: f64,
    max_new_tokens: u32,
    seed: Option<u64>,
) -> Result<(Verdict, u64), InferenceError> {
    let rendered = render_rubric_free(prompt, response_a, response_b)?;
    let result = call_once(verifier, rendered, temperature, max_new_tokens, seed).await?;
    let verdict = parse_verdict(&result.text, TaskKind::RubricFree)
        .map_err(|e| parse_failed(e, &result.text))?;
    Ok((verdict, result.completion_tokens))
}

/// Run the selective protocol with an already-chosen rubric. Used directly
/// when rubrics are injected (robustness evaluation) and by
/// [`judge_selective`] after sampling one from the generator.
#[allow(clippy::too_many_arguments)]
pub async fn judge_selective_with_rubric(
    prompt: &str,
    response_a: &str,
    response_b: &str,
    rubric_text: &str,
    verifier: &dyn Oracle,
    verifier_temperature: f64,
    max_new_tokens: u32,
    seed: u64,
) -> Result<InferenceOutcome, InferenceError> {
    let context = [
        text_digest(prompt),
        text_digest(response_a),
        text_digest(response_b),
    ];
    let context_parts: Vec<&[u8]> = context.iter().map(|d| d.as_bytes()).collect();

    let rendered = render_rubric_augmented(prompt, response_a, response_b, rubric_text)?;
    let result = call_once(
        verifier,
        rendered,
        verifier_temperature,
        max_new_tokens,
        Some(stream_seed(seed, "selective.augmented", &context_parts)),
    )
    .await?;
    let mut total_tokens = result.completion_tokens;

    let parsed = parse_verdict(&result.text, TaskKind::RubricAugmented);
    let (assessment, trusted_answer) = match &parsed {
        Ok(verdict) => (verdict.assessment, Some(verdict.answer)),
        // Absence of a readable assessment cannot license trusting the
        // rubric, so unparseable output takes the fallback path.
        Err(_) => (None, None),
    };

    if assessment == Some(Assessment::Helpful) {
        return Ok(InferenceOutcome {
            final_answer: trusted_answer.expect("parsed verdict has an answer"),
            assessment,
            rubric_text: rubric_text.to_string(),
            fallback_used: false,
            verifier_calls: 1,
            generator_calls: 0,
            total_tokens,
        });
    }

    let rendered = render_rubric_free(prompt, response_a, response_b)?;
    let fallback = call_once(
        verifier,
        rendered,
        verifier_temperature,
        max_new_tokens,
        Some(stream_seed(seed, "selective.fallback", &context_parts)),
    )
    .await?;
    total_tokens += fallback.completion_tokens;
    let verdict = parse_verdict(&fallback.text, TaskKind::RubricFree)
        .map_err(|e| parse_failed(e, &fallback.text))?;

    Ok(InferenceOutcome {
        final_answer: verdict.answer,
        assessment,
        rubric_text: rubric_text.to_string(),
        fallback_used: true,
        verifier_calls: 2,
        generator_calls: 0,
        total_tokens,
    })
}

/// Full selective inference: sample one rubric from the generator, verify
/// under it, follow the verdict only when the verifier deems the rubric
/// helpful, otherwise re-judge rubric-free.
#[allow(clippy::too_many_arguments)]
pub async fn judge_selective(
    prompt: &str,
    response_a: &str,
    response_b: &str,
    generator: &dyn Oracle,
    verifier: &dyn Oracle,
    rubric_temperature: f64,
    verifier_temperature: f64,
    max_new_tokens: u32,
    seed: u64,
) -> Result<InferenceOutcome, InferenceError> {
    let context = [
        text_digest(prompt),
        text_digest(response_a),
        text_digest(response_b),
    ];
    let context_parts: Vec<&[u8]> = context.iter().map(|d| d.as_bytes()).collect();

    let rendered = render_rubric_generation(prompt, response_a, response_b)?;
    let rubric = call_once(
        generator,
        rendered,
        rubric_temperature,
        max_new_tokens,
        Some(stream_seed(seed, "selective.rubric", &context_parts)),
    )
    .await?;

    let mut outcome = judge_selective_with_rubric(
        prompt,
        response_a,
        response_b,
        &rubric.text,
        verifier,
        verifier_temperature,
        max_new_tokens,
        seed,
    )
    .await?;
    outcome.generator_calls = 1;
    outcome.total_tokens += rubric.completion_tokens;
    Ok(outcome)
}

/// Majority-vote tally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteResult {
    pub winner: Label,
    pub tally_a: u32,
    pub tally_b: u32,
    pub tie_broken: bool,
}

/// Strict majority wins; an exact tie is broken by one uniform draw from the
/// stream keyed by (seed, tally), so vote arrival order cannot change the
/// outcome.
pub fn majority_vote(verdicts: &[Label], seed: u64) -> Result<VoteResult, InferenceError> {
    if verdicts.is_empty() {
        return Err(InferenceError::EmptyVotes);
    }
    let tally_a = verdicts.iter().filter(|v| **v == Label::A).count() as u32;
    let tally_b = verdicts.len() as u32 - tally_a;
    let (winner, tie_broken) = if tally_a > tally_b {
        (Label::A, false)
    } else if tally_b > tally_a {
        (Label::B, false)
    } else {
        let mut rng = stream_rng(
            seed,
            "majority_vote.tie",
            &[&tally_a.to_le_bytes(), &tally_b.to_le_bytes()],
        );
        let winner = if rng.random_range(0..2u8) == 0 {
            Label::A
        } else {
            Label::B
        };
        (winner, true)
    };
    Ok(VoteResult {
        winner,
        tally_a,
        tally_b,
        tie_broken,
    })
}

/// Sample `votes` rubric-free verdicts in one call and fold them by majority.
/// Returns the vote result, total completion tokens, and how many samples
/// failed verdict parsing (excluded from the tally).
#[allow(clippy::too_many_arguments)]
pub async fn vote_rubric_free(
    prompt: &str,
    response_a: &str,
    response_b: &str,
    verifier: &dyn Oracle,
    votes: u32,
    temperature: f64,
    max_new_tokens: u32,
    seed: u64,
) -> Result<(VoteResult, u64, u32), InferenceError> {
    let rendered = render_rubric_free(prompt, response_a, response_b)?;
    let gen_seed = stream_seed(seed, "vote.samples", &[rendered.input_digest.as_bytes()]);
    let mut req = GenerationRequest::new(rendered, temperature, votes.max(1), max_new_tokens);
    req.seed = Some(gen_seed);
    let results = verifier.generate(&req).await?;
    let mut verdicts = Vec::with_capacity(results.len());
    let mut invalid = 0u32;
    let mut tokens = 0u64;
    for result in &results {
        tokens += result.completion_tokens;
        match parse_verdict(&result.text, TaskKind::RubricFree) {
            Ok(v) => verdicts.push(v.answer),
            Err(_) => invalid += 1,
        }
    }
    let vote = majority_vote(&verdicts, seed)?;
    Ok((vote, tokens, invalid))
}

/// Pick the best of `candidates` with a single-elimination bracket.
/// Returns the champion index and the full match trace.
pub async fn best_of_n(
    prompt: &str,
    candidates: &[String],
    judge: &dyn PairwiseJudge,
    seed: u64,
) -> Result<(usize, TournamentTrace), InferenceError> {
    let trace = run_bracket(prompt, candidates, judge, seed).await?;
    Ok((trace.champion, trace))
}

/// How many baseline votes match the pipeline's token spend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum VoteBudget {
    /// The headline rule: a fixed token-cost ratio (2.5 in the published
    /// setup).
    FixedRatio { ratio: f64 },
    /// Ratio measured from token accounting.
    Measured {
        pipeline_tokens_per_example: u64,
        baseline_tokens_per_call: u64,
    },
}

impl VoteBudget {
    pub fn ratio(&self) -> f64 {
        match self {
            VoteBudget::FixedRatio { ratio } => *ratio,
            VoteBudget::Measured {
                pipeline_tokens_per_example,
                baseline_tokens_per_call,
            } => *pipeline_tokens_per_example as f64 / *baseline_tokens_per_call as f64,
        }
    }
}

/// Votes granted to the compute-matched baseline: `round(ratio * n)`.
pub fn compute_matched_votes(budget: &VoteBudget, n: u32) -> u32 {
    (budget.ratio() * f64::from(n)).round() as u32
}

/// Rubric-free pairwise judge over an oracle.
pub struct RubricFreeJudge<'a> {
    pub verifier: &'a dyn Oracle,
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub seed: u64,
}

#[async_trait]
impl PairwiseJudge for RubricFreeJudge<'_> {
    async fn judge(
        &self,
        prompt: &str,
        response_a: &str,
        response_b: &str,
    ) -> Result<Judgment, InferenceError> {
        let seed = stream_seed(
            self.seed,
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
            self.verifier,
            self.temperature,
            self.max_new_tokens,
            Some(seed),
        )
        .await?;
        Ok(Judgment {
            winner: verdict.answer,
            tokens,
        })
    }
}

/// Selective pairwise judge: rubric generation plus gated verification.
pub struct SelectiveJudge<'a> {
    pub generator: &'a dyn Oracle,
    pub verifier: &'a dyn Oracle,
    pub rubric_temperature: f64,
    pub verifier_temperature: f64,
    pub max_new_tokens: u32,
    pub seed: u64,
}

#[async_trait]
impl PairwiseJudge for SelectiveJudge<'_> {
    async fn judge(
        &self,
        prompt: &str,
        response_a: &str,
        response_b: &str,
    ) -> Result<Judgment, InferenceError> {
        let outcome = judge_selective(
            prompt,
            response_a,
            response_b,
            self.generator,
            self.verifier,
            self.rubric_temperature,
            self.verifier_temperature,
            self.max_new_tokens,
            self.seed,
        )
        .await?;
        Ok(Judgment {
            winner: outcome.final_answer,
            tokens: outcome.total_tokens,
        })
    }
}
