//! Rule-based reward for verifier outputs.
//!
//! Three binary (+1/-1) components: format validity, preference agreement
//! with the gold label, and (rubric-augmented tasks only) rubric-assessment
//! agreement with the synthesized label. The total is their weighted sum.
//! When the output fails the format check, the other components are still
//! scored from whatever parses leniently; a component whose token cannot be
//! recovered at all scores -1 — the binary scheme has no neutral value.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tagparse::{extract_answer, extract_assessment, validate_format};
use crate::types::{Assessment, Label, TaskKind};

/// Component weights. `w_r` is ignored for rubric-free tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w_f: f64,
    pub w_p: f64,
    #[serde(default)]
    pub w_r: f64,
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.w_f < 0.0 || self.w_p < 0.0 || self.w_r < 0.0 {
            return Err(RewardError::NegativeWeight);
        }
        Ok(())
    }
}

/// Per-component signs and the weighted total for one scored output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_f: i8,
    pub r_p: i8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_r: Option<i8>,
    pub total: f64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RewardError {
    #[error("rubric-augmented scoring needs the synthesized label")]
    MissingSynthLabel,
    #[error("rubric-free scoring must not receive a synthesized label")]
    UnexpectedSynthLabel,
    #[error("weights must be non-negative")]
    NegativeWeight,
}

/// +1 iff the output matches the required structure for `kind`.
pub fn score_format(output_text: &str, kind: TaskKind) -> i8 {
    if validate_format(output_text, kind) {
        1
    } else {
        -1
    }
}

/// +1 iff the predicted label matches gold.
pub fn score_preference(answer: Label, gold: Label) -> i8 {
    if answer == gold {
        1
    } else {
        -1
    }
}

/// +1 iff the declared assessment matches the synthesized label
/// (helpful for a positive rubric, misleading for a negative one).
pub fn score_rubric(assessment: Assessment, synth_label: Assessment) -> i8 {
    if assessment == synth_label {
        1
    } else {
        -1
    }
}

/// Score one output end to end.
pub fn total_reward(
    kind: TaskKind,
    output_text: &str,
    gold: Label,
    synth_label: Option<Assessment>,
    weights: &RewardWeights,
) -> Result<RewardBreakdown, RewardError> {
    weights.validate()?;
    match (kind, synth_label) {
        (TaskKind::RubricAugmented, None) => return Err(RewardError::MissingSynthLabel),
        (TaskKind::RubricFree, Some(_)) => return Err(RewardError::UnexpectedSynthLabel),
        _ => {}
    }

    let r_f = score_format(output_text, kind);
    let r_p = match extract_answer(output_text) {
        Some(answer) => score_preference(answer, gold),
        None => -1,
    };
    let r_r = synth_label.map(|label| match extract_assessment(output_text) {
        Some(assessment) => score_rubric(assessment, label),
        None => -1,
    });

    let mut total = weights.w_f * f64::from(r_f) + weights.w_p * f64::from(r_p);
    if let Some(r) = r_r {
        total += weights.w_r * f64::from(r);
    }
    Ok(RewardBreakdown { r_f, r_p, r_r, total })
}

/// Training method whose weight preset applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Rubric-free reasoning reward model: format + preference only.
    ReasoningRm,
    /// Full pipeline with the rubric-assessment component.
    C2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Tulu3,
    Qwen3,
}

/// A named preset: method plus model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresetSpec {
    pub method: Method,
    pub model_family: ModelFamily,
}

impl PresetSpec {
    pub fn weights(&self) -> RewardWeights {
        preset_weights(self.method, self.model_family)
    }
}

/// Published weight presets, selected on held-out validation data.
pub fn preset_weights(method: Method, family: ModelFamily) -> RewardWeights {
    match (method, family) {
        (Method::ReasoningRm, ModelFamily::Tulu3) => RewardWeights { w_f: 0.2, w_p: 0.8, w_r: 0.0 },
        (Method::ReasoningRm, ModelFamily::Qwen3) => RewardWeights { w_f: 0.1, w_p: 0.9, w_r: 0.0 },
        (Method::C2, _) => RewardWeights { w_f: 0.1, w_p: 0.6, w_r: 0.3 },
    }
}

/// The weight grids searched per method.
pub fn sweep_grid(method: Method) -> Vec<RewardWeights> {
    match method {
        Method::ReasoningRm => [(0.9, 0.1), (0.8, 0.2), (0.7, 0.3)]
            .into_iter()
            .map(|(w_p, w_f)| RewardWeights { w_f, w_p, w_r: 0.0 })
            .collect(),
        Method::C2 => [0.7, 0.6, 0.5, 0.4]
            .into_iter()
            .map(|w_p| RewardWeights { w_f: 0.1, w_p, w_r: 0.9 - w_p })
            .collect(),
    }
}
