//! Parsing and validation of tag-structured model outputs: rubrics,
//! verdicts, and quality scores.
//!
//! Whitespace between tags is ignored. Payloads of enum-valued tags
//! (`<answer>`, `<rubric>`, `<score>`) are trimmed before exact,
//! case-sensitive token matching; analysis text is preserved byte for byte.
//! Every function here is total: malformed input becomes a typed error,
//! never a panic.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Assessment, Label, TaskKind};

/// Criterion name of one checklist item. Generated rubrics are asked to pick
/// from four options but sometimes deviate; unknown names are preserved as
/// free text rather than rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    Helpfulness,
    Completeness,
    Safety,
    InstructionFollowing,
    Other(String),
}

impl Criterion {
    pub fn parse(text: &str) -> Criterion {
        match text {
            "Helpfulness" => Criterion::Helpfulness,
            "Completeness" => Criterion::Completeness,
            "Safety" => Criterion::Safety,
            "Instruction-following" => Criterion::InstructionFollowing,
            other => Criterion::Other(other.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Criterion::Helpfulness => "Helpfulness",
            Criterion::Completeness => "Completeness",
            Criterion::Safety => "Safety",
            Criterion::InstructionFollowing => "Instruction-following",
            Criterion::Other(s) => s,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One checklist item: a criterion name and its yes/no question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricItem {
    pub criterion: Criterion,
    pub question: String,
}

/// A parsed rubric: the analysis text plus an ordered, 1-indexed checklist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricDoc {
    /// Exact inner text of the `<analyze>` block.
    pub analysis: String,
    pub items: Vec<RubricItem>,
}

impl RubricDoc {
    /// Serialize back into the canonical generated-rubric layout. Parsing
    /// the result yields an equal `RubricDoc`.
    pub fn to_text(&self) -> String {
        let mut out = format!("<analyze>{}</analyze>\n", self.analysis);
        for (i, item) in self.items.iter().enumerate() {
            let k = i + 1;
            out.push_str(&format!(
                "\n<criteria_{k}>{}</criteria_{k}>\n<rubric_{k}>{}</rubric_{k}>",
                item.criterion, item.question
            ));
        }
        out
    }
}

/// A parsed verdict. `assessment` is present exactly when the output came
/// from a rubric-augmented task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub assessment: Option<Assessment>,
    pub answer: Label,
    pub raw_analysis: String,
}

/// A parsed rubric-quality judgment on the 1-5 scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityScore {
    pub justification: String,
    pub score: u8,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no <analyze>...</analyze> block")]
    MissingAnalyze,
    #[error("no criteria/rubric items")]
    NoItems,
    #[error("criteria/rubric indices are not consecutive from 1 (saw index {0})")]
    NonConsecutiveIndex(usize),
    #[error("missing <{0}> tag")]
    MissingTag(&'static str),
    #[error("unclosed <{0}> tag")]
    UnclosedTag(&'static str),
    #[error("more than one <{0}> block")]
    DuplicateTag(&'static str),
    #[error("required tags are present but not in the required order")]
    BadOrder,
    #[error("answer token must be exactly `A` or `B`, got `{0}`")]
    BadAnswerToken(String),
    #[error("rubric token must be exactly `helpful` or `misleading`, got `{0}`")]
    BadRubricToken(String),
    #[error("content after </answer> is not allowed here")]
    TrailingContent,
    #[error("score must be an integer, got `{0}`")]
    BadScoreToken(String),
    #[error("score {0} outside 1..=5")]
    ScoreOutOfRange(i64),
}

/// Find the first `<tag>...</tag>` block at or after `from`. Returns the
/// byte range of the inner text and the index just past the closing tag.
fn find_block(text: &str, tag: &str, from: usize) -> Option<(std::ops::Range<usize>, usize)> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text[from..].find(&open)? + from;
    let inner_start = start + open.len();
    let inner_end = text[inner_start..].find(&close)? + inner_start;
    Some((inner_start..inner_end, inner_end + close.len()))
}

fn count_tag(text: &str, tag: &str) -> usize {
    let open = format!("<{tag}>");
    text.match_indices(&open).count()
}

/// Parse a generated rubric: an `<analyze>` block followed by consecutive
/// `<criteria_k>`/`<rubric_k>` pairs starting at k = 1.
pub fn parse_rubric(text: &str) -> Result<RubricDoc, ParseError> {
    let (analysis_range, _) = match find_block(text, "analyze", 0) {
        Some(found) => found,
        None => return Err(ParseError::MissingAnalyze),
    };
    let analysis = text[analysis_range].to_string();

    static ITEM_TAG: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"<(criteria|rubric)_([0-9]+)>").unwrap());

    let mut criteria_idx: BTreeSet<usize> = BTreeSet::new();
    let mut rubric_idx: BTreeSet<usize> = BTreeSet::new();
    let mut criteria_text: Vec<(usize, String)> = Vec::new();
    let mut rubric_text: Vec<(usize, String)> = Vec::new();
    let mut seen_any_index: BTreeSet<usize> = BTreeSet::new();

    for cap in ITEM_TAG.captures_iter(text) {
        let kind = cap.get(1).unwrap().as_str();
        let Ok(k) = cap.get(2).unwrap().as_str().parse::<usize>() else {
            continue; // absurdly long index: ignore the tag
        };
        if k == 0 {
            return Err(ParseError::NonConsecutiveIndex(0));
        }
        seen_any_index.insert(k);
        let tag = format!("{kind}_{k}");
        let Some((inner, _)) = find_block(text, &tag, cap.get(0).unwrap().start()) else {
            continue; // opening tag without a closing tag: incomplete block
        };
        let inner = text[inner].trim().to_string();
        if kind == "criteria" {
            if criteria_idx.insert(k) {
                criteria_text.push((k, inner));
            }
        } else if rubric_idx.insert(k) {
            rubric_text.push((k, inner));
        }
    }

    let paired: BTreeSet<usize> = criteria_idx.intersection(&rubric_idx).copied().collect();
    if paired.is_empty() {
        return Err(ParseError::NoItems);
    }
    let max_seen = *seen_any_index.iter().max().unwrap();
    for k in 1..=max_seen {
        if !paired.contains(&k) {
            return Err(ParseError::NonConsecutiveIndex(k));
        }
    }

    let mut items = Vec::with_capacity(paired.len());
    for k in 1..=max_seen {
        let criterion = &criteria_text.iter().find(|(i, _)| *i == k).unwrap().1;
        let question = &rubric_text.iter().find(|(i, _)| *i == k).unwrap().1;
        items.push(RubricItem {
            criterion: Criterion::parse(criterion),
            question: question.clone(),
        });
    }

    Ok(RubricDoc { analysis, items })
}

/// Advance past whitespace only.
fn skip_ws(text: &str, from: usize) -> usize {
    text[from..]
        .find(|c: char| !c.is_whitespace())
        .map(|off| from + off)
        .unwrap_or(text.len())
}

/// Expect `<tag>...</tag>` exactly at `cursor` (after whitespace). If the tag
/// exists elsewhere in the text the failure is an ordering problem, otherwise
/// the tag is missing.
fn expect_block<'t>(
    text: &'t str,
    tag: &'static str,
    cursor: usize,
) -> Result<(&'t str, usize), ParseError> {
    let at = skip_ws(text, cursor);
    let open = format!("<{tag}>");
    if !text[at..].starts_with(&open) {
        return if text.contains(&open) {
            Err(ParseError::BadOrder)
        } else {
            Err(ParseError::MissingTag(tag))
        };
    }
    match find_block(text, tag, at) {
        Some((inner, after)) => Ok((&text[inner], after)),
        None => Err(ParseError::UnclosedTag(tag)),
    }
}

/// Parse a verifier verdict.
///
/// `RubricFree` requires `<analyze>` then `<answer>` in order; content before,
/// between, and after the blocks is tolerated. `RubricAugmented` requires
/// exactly `<analyze>`, `<rubric>`, `<answer>` in order with nothing but
/// whitespace around them. In both modes a duplicated `<answer>` (or
/// `<rubric>` in augmented mode) invalidates the output: ambiguity must not
/// pass as a verdict.
pub fn parse_verdict(text: &str, kind: TaskKind) -> Result<Verdict, ParseError> {
    if count_tag(text, "answer") > 1 {
        return Err(ParseError::DuplicateTag("answer"));
    }
    match kind {
        TaskKind::RubricFree => {
            let (analysis, after_analyze) =
                match find_block(text, "analyze", 0) {
                    Some((inner, after)) => (&text[inner], after),
                    None => {
                        return Err(if text.contains("<analyze>") {
                            ParseError::UnclosedTag("analyze")
                        } else {
                            ParseError::MissingTag("analyze")
                        })
                    }
                };
            let (token, _) = match find_block(text, "answer", after_analyze) {
                Some((inner, after)) => (&text[inner], after),
                None => {
                    return Err(match (text.contains("<answer>"), text.contains("</answer>")) {
                        (true, true) => ParseError::BadOrder, // answer precedes analyze
                        (true, false) => ParseError::UnclosedTag("answer"),
                        (false, _) => ParseError::MissingTag("answer"),
                    })
                }
            };
            let answer = Label::from_token(token.trim())
                .ok_or_else(|| ParseError::BadAnswerToken(token.trim().to_string()))?;
            Ok(Verdict {
                assessment: None,
                answer,
                raw_analysis: analysis.to_string(),
            })
        }
        TaskKind::RubricAugmented => {
            if count_tag(text, "rubric") > 1 {
                return Err(ParseError::DuplicateTag("rubric"));
            }
            let (analysis, cursor) = expect_block(text, "analyze", 0)?;
            let (rubric_token, cursor) = expect_block(text, "rubric", cursor)?;
            let (answer_token, cursor) = expect_block(text, "answer", cursor)?;
            if skip_ws(text, cursor) != text.len() {
                return Err(ParseError::TrailingContent);
            }
            let assessment = Assessment::from_token(rubric_token.trim())
                .ok_or_else(|| ParseError::BadRubricToken(rubric_token.trim().to_string()))?;
            let answer = Label::from_token(answer_token.trim())
                .ok_or_else(|| ParseError::BadAnswerToken(answer_token.trim().to_string()))?;
            Ok(Verdict {
                assessment: Some(assessment),
                answer,
                raw_analysis: analysis.to_string(),
            })
        }
    }
}

/// Parse a rubric-quality judgment: an `<evaluation>` block and a `<score>`
/// block holding an integer 1..=5.
pub fn parse_quality(text: &str) -> Result<QualityScore, ParseError> {
    let (justification, _) =
        find_block(text, "evaluation", 0).ok_or(ParseError::MissingTag("evaluation"))?;
    let (score_range, _) = find_block(text, "score", 0).ok_or(ParseError::MissingTag("score"))?;
    let token = text[score_range].trim();
    let score: i64 = token
        .parse()
        .map_err(|_| ParseError::BadScoreToken(token.to_string()))?;
    if !(1..=5).contains(&score) {
        return Err(ParseError::ScoreOutOfRange(score));
    }
    Ok(QualityScore {
        justification: text[justification].to_string(),
        score: score as u8,
    })
}

/// Format-validity predicate: true iff [`parse_verdict`] succeeds under the
/// rules for `kind`. This is the sole input to the format reward.
pub fn validate_format(text: &str, kind: TaskKind) -> bool {
    parse_verdict(text, kind).is_ok()
}

/// Lenient answer recovery: the first `<answer>` block whose trimmed payload
/// is exactly `A` or `B`, regardless of surrounding structure.
pub fn extract_answer(text: &str) -> Option<Label> {
    let (inner, _) = find_block(text, "answer", 0)?;
    Label::from_token(text[inner].trim())
}

/// Lenient assessment recovery, mirroring [`extract_answer`].
pub fn extract_assessment(text: &str) -> Option<Assessment> {
    let (inner, _) = find_block(text, "rubric", 0)?;
    Assessment::from_token(text[inner].trim())
}

/// Byte offset of the answer letter inside the first recoverable
/// `<answer>...</answer>` block. This is the position whose token
/// alternatives are read in scored label-probability mode.
pub fn answer_letter_offset(text: &str) -> Option<usize> {
    let (inner, _) = find_block(text, "answer", 0)?;
    let payload = &text[inner.clone()];
    Label::from_token(payload.trim())?;
    let off = payload.find(|c: char| !c.is_whitespace())?;
    Some(inner.start + off)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_rubric() {
        let doc = parse_rubric("<analyze>X</analyze><criteria_1>Safety</criteria_1><rubric_1>Q?</rubric_1>")
            .unwrap();
        assert_eq!(doc.analysis, "X");
        assert_eq!(doc.items.len(), 1);
        assert_eq!(doc.items[0].criterion, Criterion::Safety);
        assert_eq!(doc.items[0].question, "Q?");
    }

    #[test]
    fn rubric_gap_in_indices_is_rejected() {
        let text = "<analyze>X</analyze>\
                    <criteria_1>Safety</criteria_1><rubric_1>Q1?</rubric_1>\
                    <criteria_3>Helpfulness</criteria_3><rubric_3>Q3?</rubric_3>";
        assert_eq!(parse_rubric(text), Err(ParseError::NonConsecutiveIndex(2)));
    }

    #[test]
    fn rubric_without_items_is_rejected() {
        assert_eq!(parse_rubric("<analyze>X</analyze>"), Err(ParseError::NoItems));
        assert_eq!(parse_rubric("no tags at all"), Err(ParseError::MissingAnalyze));
    }

    #[test]
    fn parses_generated_format_with_three_items() {
        // Shape the generator's format block produces, including the padding
        // spaces around payloads.
        let text = "<analyze>\nIntent: find the sum.\nIdeal Answer: a correct derivation.\n</analyze>\n\n\
                    <criteria_1> Helpfulness </criteria_1>\n<rubric_1> Does the answer address the question? </rubric_1>\n\
                    <criteria_2> Completeness </criteria_2>\n<rubric_2> Are all steps included? </rubric_2>\n\
                    <criteria_3> Accuracy in calculations </criteria_3>\n<rubric_3> Is the arithmetic right? </rubric_3>";
        let doc = parse_rubric(text).unwrap();
        assert_eq!(doc.items.len(), 3);
        assert_eq!(doc.analysis, "\nIntent: find the sum.\nIdeal Answer: a correct derivation.\n");
        assert_eq!(doc.items[0].criterion, Criterion::Helpfulness);
        assert_eq!(doc.items[1].criterion, Criterion::Completeness);
        // Off-menu criterion survives as free text.
        assert_eq!(
            doc.items[2].criterion,
            Criterion::Other("Accuracy in calculations".into())
        );
    }

    #[test]
    fn unpaired_index_is_rejected() {
        let text = "<analyze>X</analyze><criteria_1>Safety</criteria_1><rubric_1>Q?</rubric_1><criteria_2>Helpfulness</criteria_2>";
        assert_eq!(parse_rubric(text), Err(ParseError::NonConsecutiveIndex(2)));
    }

    #[test]
    fn rubric_round_trips_through_canonical_text() {
        let doc = RubricDoc {
            analysis: "some\nanalysis with  spacing".into(),
            items: vec![
                RubricItem {
                    criterion: Criterion::InstructionFollowing,
                    question: "Did it follow the format?".into(),
                },
                RubricItem {
                    criterion: Criterion::Other("Tone".into()),
                    question: "Is the tone right?".into(),
                },
            ],
        };
        assert_eq!(parse_rubric(&doc.to_text()).unwrap(), doc);
    }

    #[test]
    fn augmented_verdict_happy_path() {
        let v = parse_verdict(
            "<analyze>r</analyze><rubric>helpful</rubric><answer>B</answer>",
            TaskKind::RubricAugmented,
        )
        .unwrap();
        assert_eq!(v.assessment, Some(Assessment::Helpful));
        assert_eq!(v.answer, Label::B);
        assert_eq!(v.raw_analysis, "r");
    }

    #[test]
    fn augmented_missing_rubric_tag() {
        assert_eq!(
            parse_verdict("<analyze>r</analyze><answer>A</answer>extra", TaskKind::RubricAugmented),
            Err(ParseError::MissingTag("rubric"))
        );
    }

    #[test]
    fn augmented_rejects_trailing_content() {
        assert_eq!(
            parse_verdict(
                "<analyze>r</analyze><rubric>misleading</rubric><answer>A</answer> done",
                TaskKind::RubricAugmented,
            ),
            Err(ParseError::TrailingContent)
        );
        // Whitespace after the last tag is fine.
        assert!(parse_verdict(
            "  <analyze>r</analyze>\n<rubric>misleading</rubric>\n<answer>A</answer>\n",
            TaskKind::RubricAugmented,
        )
        .is_ok());
    }

    #[test]
    fn augmented_rejects_wrong_order() {
        assert_eq!(
            parse_verdict(
                "<analyze>r</analyze><answer>A</answer><rubric>helpful</rubric>",
                TaskKind::RubricAugmented,
            ),
            Err(ParseError::BadOrder)
        );
        assert_eq!(
            parse_verdict(
                "preamble <analyze>r</analyze><rubric>helpful</rubric><answer>A</answer>",
                TaskKind::RubricAugmented,
            ),
            Err(ParseError::BadOrder)
        );
    }

    #[test]
    fn bad_tokens_are_rejected() {
        assert_eq!(
            parse_verdict("<analyze>r</analyze><answer>C</answer>", TaskKind::RubricFree),
            Err(ParseError::BadAnswerToken("C".into()))
        );
        assert_eq!(
            parse_verdict("<analyze>r</analyze><answer>a</answer>", TaskKind::RubricFree),
            Err(ParseError::BadAnswerToken("a".into()))
        );
        assert_eq!(
            parse_verdict(
                "<analyze>r</analyze><rubric>Helpful</rubric><answer>A</answer>",
                TaskKind::RubricAugmented,
            ),
            Err(ParseError::BadRubricToken("Helpful".into()))
        );
    }

    #[test]
    fn token_padding_is_trimmed() {
        let v = parse_verdict(
            "<analyze>r</analyze><rubric> helpful\n</rubric><answer> B </answer>",
            TaskKind::RubricAugmented,
        )
        .unwrap();
        assert_eq!(v.assessment, Some(Assessment::Helpful));
        assert_eq!(v.answer, Label::B);
    }

    #[test]
    fn free_verdict_tolerates_surrounding_content() {
        let v = parse_verdict(
            "thinking out loud <analyze>r</analyze> so my verdict is <answer>A</answer> thanks!",
            TaskKind::RubricFree,
        )
        .unwrap();
        assert_eq!(v.answer, Label::A);
        assert_eq!(v.assessment, None);
    }

    #[test]
    fn free_verdict_requires_order_and_uniqueness() {
        assert_eq!(
            parse_verdict("<answer>A</answer><analyze>r</analyze>", TaskKind::RubricFree),
            Err(ParseError::BadOrder)
        );
        assert_eq!(
            parse_verdict(
                "<analyze>r</analyze><answer>A</answer><answer>B</answer>",
                TaskKind::RubricFree,
            ),
            Err(ParseError::DuplicateTag("answer"))
        );
        assert_eq!(
            parse_verdict("no tags", TaskKind::RubricFree),
            Err(ParseError::MissingTag("analyze"))
        );
    }

    #[test]
    fn empty_analysis_is_valid() {
        // A well-formed but empty <analyze> block still counts as valid
        // structure; emptiness is not a format failure.
        let v = parse_verdict("<analyze></analyze><answer>A</answer>", TaskKind::RubricFree).unwrap();
        assert_eq!(v.raw_analysis, "");
    }

    #[test]
    fn quality_happy_and_sad_paths() {
        let q = parse_quality("<evaluation>ok</evaluation><score>4</score>").unwrap();
        assert_eq!(q.score, 4);
        assert_eq!(q.justification, "ok");
        assert_eq!(
            parse_quality("<evaluation>ok</evaluation><score>6</score>"),
            Err(ParseError::ScoreOutOfRange(6))
        );
        assert_eq!(
            parse_quality("<evaluation>ok</evaluation><score>two</score>"),
            Err(ParseError::BadScoreToken("two".into()))
        );
        assert_eq!(
            parse_quality("<score>3</score>"),
            Err(ParseError::MissingTag("evaluation"))
        );
    }

    #[test]
    fn quality_parses_full_shaped_output() {
        let text = "<evaluation>\n(1) analysis is thorough (2) questions are discriminative (3) aligned with the real gap\n</evaluation>\n<score> 3 </score>";
        assert_eq!(parse_quality(text).unwrap().score, 3);
    }

    #[test]
    fn validate_format_matches_parse_success() {
        let ok = "<analyze>x</analyze><rubric>helpful</rubric><answer>A</answer>";
        assert!(validate_format(ok, TaskKind::RubricAugmented));
        assert!(!validate_format("<answer>A</answer>", TaskKind::RubricFree));
        assert!(!validate_format(
            "<analyze>x</analyze><answer>A</answer><rubric>helpful</rubric>",
            TaskKind::RubricAugmented
        ));
    }

    #[test]
    fn lenient_extraction_recovers_from_invalid_structure() {
        let text = "<answer> B </answer> no analyze block anywhere <rubric>misleading</rubric>";
        assert_eq!(extract_answer(text), Some(Label::B));
        assert_eq!(extract_assessment(text), Some(Assessment::Misleading));
        assert_eq!(extract_answer("<answer>maybe A</answer>"), None);
        assert_eq!(extract_answer("nothing"), None);
    }

    #[test]
    fn answer_letter_offset_points_at_token() {
        let text = "<analyze>x</analyze><answer>\n A</answer>";
        let off = answer_letter_offset(text).unwrap();
        assert_eq!(&text[off..off + 1], "A");
        assert_eq!(answer_letter_offset("<answer>C</answer>"), None);
    }

    #[test]
    fn item_tag_is_not_confused_with_rubric_tag() {
        // <rubric_1> must not satisfy the <rubric> requirement.
        assert_eq!(
            parse_verdict(
                "<analyze>r</analyze><rubric_1>helpful</rubric_1><answer>A</answer>",
                TaskKind::RubricAugmented,
            ),
            Err(ParseError::MissingTag("rubric"))
        );
    }
}
