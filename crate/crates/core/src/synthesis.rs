//! Contrastive rubric synthesis.
//!
//! For each preference example: measure the verifier's rubric-free judge
//! margin once, sample K rubric candidates from the generator, measure each
//! candidate's margin, and keep the sets that strictly improve margin toward
//! the gold label (positive set) or strictly push it toward the wrong label
//! past zero (negative set). The strongest member of each set forms the
//! contrastive pair. Rounds that fail to populate both sets are retried with
//! fresh samples, accumulating candidates, up to a cap; candidates from
//! different rounds may pair.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::stream_seed;
use crate::gateway::{label_distribution, DistributionMethod, GatewayError, GenerationRequest, Oracle};
use crate::margin::{margin_from_distribution, JudgeMargin};
use crate::prompts::{render_rubric_augmented, render_rubric_free, render_rubric_generation, PromptError};
use crate::tagparse::{parse_rubric, RubricDoc};
use crate::types::Label;

/// One preference example: a prompt, two candidate responses, and the gold
/// label naming the preferred one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceExample {
    pub id: String,
    pub prompt: String,
    pub response_a: String,
    pub response_b: String,
    pub gold: Label,
}

impl PreferenceExample {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if self.id.is_empty()
            || self.prompt.is_empty()
            || self.response_a.is_empty()
            || self.response_b.is_empty()
        {
            return Err(SynthesisError::InvalidExample(self.id.clone()));
        }
        Ok(())
    }
}

/// A sampled rubric that parsed, with its measured margin. `index` is the
/// accumulation order across rounds and breaks selection ties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricCandidate {
    pub index: usize,
    pub round: u32,
    pub raw_text: String,
    pub doc: RubricDoc,
    pub margin: JudgeMargin,
}

/// The extremal helpful/misleading pair for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastivePair {
    pub helpful: RubricCandidate,
    pub misleading: RubricCandidate,
    pub base_margin: JudgeMargin,
}

impl ContrastivePair {
    /// Build a pair, re-checking the set-membership invariants.
    pub fn new(
        helpful: RubricCandidate,
        misleading: RubricCandidate,
        base_margin: JudgeMargin,
    ) -> Result<Self, SynthesisError> {
        // Negated form also rejects NaN margins.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(helpful.margin.value > base_margin.value.max(0.0)) {
            return Err(SynthesisError::InvariantViolation(
                "helpful margin must exceed max(0, base margin)",
            ));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(misleading.margin.value < base_margin.value.min(0.0)) {
            return Err(SynthesisError::InvariantViolation(
                "misleading margin must undercut min(0, base margin)",
            ));
        }
        Ok(ContrastivePair {
            helpful,
            misleading,
            base_margin,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisStatus {
    Paired,
    Discarded,
}

/// Compact audit form of a candidate kept in the synthesis record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub text: String,
    pub margin: f64,
    pub round: u32,
}

impl From<&RubricCandidate> for CandidateRecord {
    fn from(c: &RubricCandidate) -> Self {
        CandidateRecord {
            text: c.raw_text.clone(),
            margin: c.margin.value,
            round: c.round,
        }
    }
}

/// Everything recorded for one example: status, rounds, the pair when one
/// formed, and every surviving candidate for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRecord {
    pub example_id: String,
    pub gold: Label,
    pub base_margin: f64,
    pub status: SynthesisStatus,
    pub rounds_used: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub helpful: Option<CandidateRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misleading: Option<CandidateRecord>,
    pub candidates: Vec<CandidateRecord>,
    pub margin_method: DistributionMethod,
}

impl SynthesisRecord {
    pub fn is_paired(&self) -> bool {
        self.status == SynthesisStatus::Paired
    }
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("the {0:?} set is empty")]
    EmptySet(SetSide),
    #[error("example `{0}` has an empty required field")]
    InvalidExample(String),
    #[error("contrastive pair invariant violated: {0}")]
    InvariantViolation(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetSide {
    Positive,
    Negative,
}

/// Knobs for one synthesis run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisParams {
    /// Rubric candidates sampled per round.
    pub k: u32,
    /// Additional rounds after the first when a set is still empty.
    pub retry_cap: u32,
    /// Generator sampling temperature.
    pub temperature: f64,
    pub margin_method: DistributionMethod,
    pub mc_samples: u32,
    pub smoothing: f64,
    pub max_new_tokens: u32,
    pub seed: u64,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        SynthesisParams {
            k: 16,
            retry_cap: 5,
            temperature: 1.0,
            margin_method: DistributionMethod::Scored,
            mc_samples: 16,
            smoothing: 1.0,
            max_new_tokens: 2048,
            seed: 0,
        }
    }
}

/// Sample `k` rubric candidates for one example and measure each margin.
/// Unparseable completions are dropped; all `k` failing simply yields an
/// empty list. `start_index` continues the accumulation numbering across
/// rounds.
pub async fn sample_candidates(
    example: &PreferenceExample,
    generator: &dyn Oracle,
    verifier: &dyn Oracle,
    params: &SynthesisParams,
    round: u32,
    start_index: usize,
) -> Result<Vec<RubricCandidate>, SynthesisError> {
    let gen_prompt =
        render_rubric_generation(&example.prompt, &example.response_a, &example.response_b)?;
    let gen_seed = stream_seed(
        params.seed,
        "synthesis.candidates",
        &[example.id.as_bytes(), &round.to_le_bytes()],
    );
    let mut req = GenerationRequest::new(
        gen_prompt,
        params.temperature,
        params.k.max(1),
        params.max_new_tokens,
    );
    req.seed = Some(gen_seed);
    let completions = generator.generate(&req).await?;

    let mut candidates = Vec::new();
    for completion in completions {
        let Ok(doc) = parse_rubric(&completion.text) else {
            continue;
        };
        let aug_prompt = render_rubric_augmented(
            &example.prompt,
            &example.response_a,
            &example.response_b,
            &completion.text,
        )?;
        let margin_seed = stream_seed(
            params.seed,
            "synthesis.margin",
            &[example.id.as_bytes(), aug_prompt.input_digest.as_bytes()],
        );
        let dist = label_distribution(
            verifier,
            &aug_prompt,
            params.margin_method,
            params.mc_samples,
            params.smoothing,
            Some(margin_seed),
            params.max_new_tokens,
        )
        .await?;
        let margin = margin_from_distribution(&dist, example.gold, true);
        candidates.push(RubricCandidate {
            index: start_index + candidates.len(),
            round,
            raw_text: completion.text,
            doc,
            margin,
        });
    }
    Ok(candidates)
}

/// Split candidates into the positive set (margin strictly above
/// `max(0, base)`) and the negative set (strictly below `min(0, base)`).
/// Boundary candidates join neither set.
pub fn partition<'c>(
    base: &JudgeMargin,
    candidates: &'c [RubricCandidate],
) -> (Vec<&'c RubricCandidate>, Vec<&'c RubricCandidate>) {
    let upper = base.value.max(0.0);
    let lower = base.value.min(0.0);
    let positive = candidates.iter().filter(|c| c.margin.value > upper).collect();
    let negative = candidates.iter().filter(|c| c.margin.value < lower).collect();
    (positive, negative)
}

/// Pick the strongest member of each set: the margin argmax of the positive
/// set and argmin of the negative set. Ties go to the lowest candidate index.
pub fn select_extremes(
    positive: &[&RubricCandidate],
    negative: &[&RubricCandidate],
    base: &JudgeMargin,
) -> Result<ContrastivePair, SynthesisError> {
    let helpful = positive
        .iter()
        .copied()
        .max_by(|a, b| {
            a.margin
                .value
                .partial_cmp(&b.margin.value)
                .expect("margins are finite")
                .then(b.index.cmp(&a.index))
        })
        .ok_or(SynthesisError::EmptySet(SetSide::Positive))?;
    let misleading = negative
        .iter()
        .copied()
        .min_by(|a, b| {
            a.margin
                .value
                .partial_cmp(&b.margin.value)
                .expect("margins are finite")
                .then(a.index.cmp(&b.index))
        })
        .ok_or(SynthesisError::EmptySet(SetSide::Negative))?;
    ContrastivePair::new(helpful.clone(), misleading.clone(), *base)
}

/// Run the full synthesis procedure for one example.
pub async fn synthesize(
    example: &PreferenceExample,
    generator: &dyn Oracle,
    verifier: &dyn Oracle,
    params: &SynthesisParams,
) -> Result<SynthesisRecord, SynthesisError> {
    example.validate()?;

    let base_prompt =
        render_rubric_free(&example.prompt, &example.response_a, &example.response_b)?;
    let base_seed = stream_seed(params.seed, "synthesis.base", &[example.id.as_bytes()]);
    let base_dist = label_distribution(
        verifier,
        &base_prompt,
        params.margin_method,
        params.mc_samples,
        params.smoothing,
        Some(base_seed),
        params.max_new_tokens,
    )
    .await?;
    let base = margin_from_distribution(&base_dist, example.gold, false);

    let max_rounds = 1 + params.retry_cap;
    let mut candidates: Vec<RubricCandidate> = Vec::new();
    for round in 1..=max_rounds {
        let fresh = sample_candidates(example, generator, verifier, params, round, candidates.len())
            .await?;
        candidates.extend(fresh);
        let (positive, negative) = partition(&base, &candidates);
        if !positive.is_empty() && !negative.is_empty() {
            let pair = select_extremes(&positive, &negative, &base)?;
            return Ok(SynthesisRecord {
                example_id: example.id.clone(),
                gold: example.gold,
                base_margin: base.value,
                status: SynthesisStatus::Paired,
                rounds_used: round,
                helpful: Some(CandidateRecord::from(&pair.helpful)),
                misleading: Some(CandidateRecord::from(&pair.misleading)),
                candidates: candidates.iter().map(CandidateRecord::from).collect(),
                margin_method: params.margin_method,
            });
        }
    }

    Ok(SynthesisRecord {
        example_id: example.id.clone(),
        gold: example.gold,
        base_margin: base.value,
        status: SynthesisStatus::Discarded,
        rounds_used: max_rounds,
        helpful: None,
        misleading: None,
        candidates: candidates.iter().map(CandidateRecord::from).collect(),
        margin_method: params.margin_method,
    })
}
