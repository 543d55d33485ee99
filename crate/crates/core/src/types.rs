//! Small enums shared across the pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Which of the two presented responses a judgment names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
}

impl Label {
    /// The opposite label.
    pub fn complement(self) -> Label {
        match self {
            Label::A => Label::B,
            Label::B => Label::A,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::A => "A",
            Label::B => "B",
        }
    }

    /// Exact, case-sensitive token match ("A" or "B").
    pub fn from_token(token: &str) -> Option<Label> {
        match token {
            "A" => Some(Label::A),
            "B" => Some(Label::B),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A verifier's declared trust in a provided rubric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assessment {
    Helpful,
    Misleading,
}

impl Assessment {
    pub fn as_str(self) -> &'static str {
        match self {
            Assessment::Helpful => "helpful",
            Assessment::Misleading => "misleading",
        }
    }

    /// Exact, case-sensitive token match ("helpful" or "misleading").
    pub fn from_token(token: &str) -> Option<Assessment> {
        match token {
            "helpful" => Some(Assessment::Helpful),
            "misleading" => Some(Assessment::Misleading),
            _ => None,
        }
    }
}

impl fmt::Display for Assessment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The two verifier task types, which differ in required output structure
/// and in which reward components apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    RubricFree,
    RubricAugmented,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::RubricFree => "rubric_free",
            TaskKind::RubricAugmented => "rubric_augmented",
        }
    }
}
