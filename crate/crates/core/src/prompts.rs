//! Prompt templates and their rendering.
//!
//! The four templates ship as resource files under `templates/` and are the
//! canonical text: substitution is literal (no escaping, no markup
//! interpretation) because raw model outputs get inserted back into prompts.
//! Rendering is pure, so equal inputs give byte-identical prompts.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::hex_digest;

const RUBRIC_GENERATION_BODY: &str = include_str!("../templates/rubric_generation.txt");
const RUBRIC_FREE_BODY: &str = include_str!("../templates/rubric_free.txt");
const RUBRIC_AUGMENTED_BODY: &str = include_str!("../templates/rubric_augmented.txt");
const QUALITY_EVAL_BODY: &str = include_str!("../templates/quality_eval.txt");

/// Identifier for one of the shipped templates. Doubles as the CLI enum.
/// `Raw` marks a prompt sent verbatim (policy response sampling) and has no
/// registry entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    RubricGeneration,
    RubricFree,
    RubricAugmented,
    QualityEval,
    Raw,
}

impl TemplateName {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::RubricGeneration => "rubric_generation",
            TemplateName::RubricFree => "rubric_free",
            TemplateName::RubricAugmented => "rubric_augmented",
            TemplateName::QualityEval => "quality_eval",
            TemplateName::Raw => "raw",
        }
    }

    /// The shipped template resources, in registry order.
    pub fn all() -> [TemplateName; 4] {
        [
            TemplateName::RubricGeneration,
            TemplateName::RubricFree,
            TemplateName::RubricAugmented,
            TemplateName::QualityEval,
        ]
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A template body plus its ordered placeholder names.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: String,
    pub placeholders: &'static [&'static str],
}

/// A fully rendered prompt. `input_digest` is a stable hash of the filled
/// values, so distinct inputs can be told apart without keeping the texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub template_name: TemplateName,
    pub input_digest: String,
}

impl RenderedPrompt {
    /// Wrap text to be sent verbatim, outside any template.
    pub fn raw(text: impl Into<String>) -> Self {
        let text = text.into();
        let input_digest = hex_digest(&[b"raw", text.as_bytes()]);
        RenderedPrompt {
            text,
            template_name: TemplateName::Raw,
            input_digest,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("field `{0}` must not be empty")]
    EmptyField(&'static str),
    #[error("placeholder `{{{0}}}` was not filled")]
    MissingPlaceholder(String),
    #[error("value supplied for unknown placeholder `{0}`")]
    UnknownPlaceholder(String),
}

static REGISTRY: LazyLock<BTreeMap<TemplateName, PromptTemplate>> = LazyLock::new(|| {
    let mut map = BTreeMap::new();
    for (name, raw, placeholders) in [
        (
            TemplateName::RubricGeneration,
            RUBRIC_GENERATION_BODY,
            &["question", "response_a", "response_b"][..],
        ),
        (
            TemplateName::RubricFree,
            RUBRIC_FREE_BODY,
            &["prompt", "response_a", "response_b"][..],
        ),
        (
            TemplateName::RubricAugmented,
            RUBRIC_AUGMENTED_BODY,
            &["prompt", "response_a", "response_b", "criteria"][..],
        ),
        (
            TemplateName::QualityEval,
            QUALITY_EVAL_BODY,
            &["question", "response_a", "response_b", "rubric"][..],
        ),
    ] {
        map.insert(
            name,
            PromptTemplate {
                name,
                // Line endings normalized to LF so goldens hold on any
                // checkout configuration.
                body: raw.replace("\r\n", "\n"),
                placeholders,
            },
        );
    }
    map
});

/// Look up a shipped template by name. `Raw` has no template body.
pub fn template(name: TemplateName) -> &'static PromptTemplate {
    REGISTRY
        .get(&name)
        .unwrap_or_else(|| panic!("`{name}` is not a shipped template"))
}

/// Fill a template with named values. Every declared placeholder must be
/// supplied, every supplied name must exist, and every value must be
/// non-empty. Values are inserted verbatim, left to right, in a single pass
/// over the template body; they are never re-scanned for placeholders.
pub fn render(name: TemplateName, values: &[(&'static str, &str)]) -> Result<RenderedPrompt, PromptError> {
    let tpl = template(name);
    for &(key, value) in values {
        if !tpl.placeholders.contains(&key) {
            return Err(PromptError::UnknownPlaceholder(key.to_string()));
        }
        if value.is_empty() {
            return Err(PromptError::EmptyField(key));
        }
    }
    for &ph in tpl.placeholders {
        if !values.iter().any(|&(k, _)| k == ph) {
            return Err(PromptError::MissingPlaceholder(ph.to_string()));
        }
    }

    let mut text = String::with_capacity(tpl.body.len());
    let mut rest = tpl.body.as_str();
    while let Some(open) = rest.find('{') {
        let (before, tail) = rest.split_at(open);
        text.push_str(before);
        match tail[1..].find('}') {
            Some(close) => {
                let key = &tail[1..1 + close];
                match values.iter().find(|&&(k, _)| k == key) {
                    Some(&(_, value)) => {
                        text.push_str(value);
                        rest = &tail[close + 2..];
                    }
                    None => {
                        // Not one of ours (e.g. literal braces in a value
                        // slot position); emit the brace and move on.
                        text.push('{');
                        rest = &tail[1..];
                    }
                }
            }
            None => {
                text.push('{');
                rest = &tail[1..];
            }
        }
    }
    text.push_str(rest);

    let mut digest_parts: Vec<&[u8]> = vec![tpl.name.as_str().as_bytes()];
    for &ph in tpl.placeholders {
        let &(_, value) = values.iter().find(|&&(k, _)| k == ph).expect("checked above");
        digest_parts.push(ph.as_bytes());
        digest_parts.push(value.as_bytes());
    }

    Ok(RenderedPrompt {
        text,
        template_name: name,
        input_digest: hex_digest(&digest_parts),
    })
}

/// Prompt asking a generator to produce a rubric for one question/answer pair.
pub fn render_rubric_generation(
    question: &str,
    response_a: &str,
    response_b: &str,
) -> Result<RenderedPrompt, PromptError> {
    render(
        TemplateName::RubricGeneration,
        &[
            ("question", question),
            ("response_a", response_a),
            ("response_b", response_b),
        ],
    )
}

/// Prompt asking a verifier to judge two responses without a rubric.
pub fn render_rubric_free(
    prompt: &str,
    response_a: &str,
    response_b: &str,
) -> Result<RenderedPrompt, PromptError> {
    render(
        TemplateName::RubricFree,
        &[
            ("prompt", prompt),
            ("response_a", response_a),
            ("response_b", response_b),
        ],
    )
}

/// Prompt asking a verifier to assess a provided rubric and then judge.
pub fn render_rubric_augmented(
    prompt: &str,
    response_a: &str,
    response_b: &str,
    rubric: &str,
) -> Result<RenderedPrompt, PromptError> {
    render(
        TemplateName::RubricAugmented,
        &[
            ("prompt", prompt),
            ("response_a", response_a),
            ("response_b", response_b),
            ("criteria", rubric),
        ],
    )
}

/// Prompt asking a scorer to grade a generated rubric on the 1-5 scale.
pub fn render_quality_eval(
    question: &str,
    response_a: &str,
    response_b: &str,
    rubric: &str,
) -> Result<RenderedPrompt, PromptError> {
    render(
        TemplateName::QualityEval,
        &[
            ("question", question),
            ("response_a", response_a),
            ("response_b", response_b),
            ("rubric", rubric),
        ],
    )
}
