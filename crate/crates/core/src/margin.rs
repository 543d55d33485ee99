//! Judge margins and confidence shifts.
//!
//! The margin is the natural-log odds the verifier assigns to the gold label:
//! `ln p(gold) - ln p(other)`. Positive means the verifier favors the correct
//! response. The confidence shift is the change in `p(gold)` caused by
//! conditioning on a rubric.

use serde::{Deserialize, Serialize};

use crate::gateway::LabelDistribution;
use crate::types::Label;

/// Log-odds of the gold label under one verifier query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeMargin {
    pub value: f64,
    pub gold: Label,
    pub with_rubric: bool,
}

/// Shift in probability assigned to the gold label when a rubric is added;
/// always in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceShift {
    pub delta: f64,
}

fn p_gold(dist: &LabelDistribution, gold: Label) -> f64 {
    match gold {
        Label::A => dist.p_a,
        Label::B => dist.p_b,
    }
}

/// `ln p(gold) - ln p(other)`. Finite because distributions keep both
/// probabilities strictly interior.
pub fn margin_from_distribution(
    dist: &LabelDistribution,
    gold: Label,
    with_rubric: bool,
) -> JudgeMargin {
    let p = p_gold(dist, gold);
    let q = p_gold(dist, gold.complement());
    JudgeMargin {
        value: p.ln() - q.ln(),
        gold,
        with_rubric,
    }
}

/// `p_with(gold) - p_without(gold)`.
pub fn confidence_shift(
    p_with: &LabelDistribution,
    p_without: &LabelDistribution,
    gold: Label,
) -> ConfidenceShift {
    ConfidenceShift {
        delta: p_gold(p_with, gold) - p_gold(p_without, gold),
    }
}
