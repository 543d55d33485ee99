//! Property tests: parser totality and round-trips, prompt rendering
//! invariants, and partition/selection laws.

use proptest::prelude::*;

use rubric_rm::margin::JudgeMargin;
use rubric_rm::prompts::{render, template, TemplateName};
use rubric_rm::synthesis::{partition, select_extremes, RubricCandidate};
use rubric_rm::tagparse::{
    parse_rubric, parse_verdict, validate_format, Criterion, RubricDoc, RubricItem,
};
use rubric_rm::types::{Label, TaskKind};

/// Text without tag-opening characters, safe for round-trip payloads.
fn tagless() -> impl Strategy<Value = String> {
    "[ -;=?-~\n]{0,40}"
}

fn trimmed_tagless() -> impl Strategy<Value = String> {
    tagless().prop_map(|s| s.trim().to_string())
}

fn rubric_doc() -> impl Strategy<Value = RubricDoc> {
    (
        tagless(),
        prop::collection::vec(
            (
                prop_oneof![
                    Just(Criterion::Helpfulness),
                    Just(Criterion::Completeness),
                    Just(Criterion::Safety),
                    Just(Criterion::InstructionFollowing),
                    trimmed_tagless()
                        .prop_filter("free-text criterion must be distinct and non-empty", |s| {
                            !s.is_empty()
                                && !matches!(
                                    s.as_str(),
                                    "Helpfulness" | "Completeness" | "Safety" | "Instruction-following"
                                )
                        })
                        .prop_map(Criterion::Other),
                ],
                trimmed_tagless(),
            )
                .prop_map(|(criterion, question)| RubricItem { criterion, question }),
            1..5,
        ),
    )
        .prop_map(|(analysis, items)| RubricDoc { analysis, items })
}

/// Fragments a fuzzer splices together: tags in and out of place, payload
/// text, and junk.
fn tag_soup() -> impl Strategy<Value = String> {
    let fragment = prop_oneof![
        Just("<analyze>".to_string()),
        Just("</analyze>".to_string()),
        Just("<rubric>".to_string()),
        Just("</rubric>".to_string()),
        Just("<answer>".to_string()),
        Just("</answer>".to_string()),
        Just("<criteria_1>".to_string()),
        Just("</criteria_1>".to_string()),
        Just("<rubric_1>".to_string()),
        Just("</rubric_1>".to_string()),
        Just("A".to_string()),
        Just("B".to_string()),
        Just("C".to_string()),
        Just("helpful".to_string()),
        Just("misleading".to_string()),
        Just(" ".to_string()),
        Just("\n".to_string()),
        "[a-z<>/_ ]{0,12}",
    ];
    prop::collection::vec(fragment, 0..14).prop_map(|parts| parts.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn rubric_docs_round_trip(doc in rubric_doc()) {
        let text = doc.to_text();
        let reparsed = parse_rubric(&text).unwrap();
        prop_assert_eq!(reparsed, doc);
    }

    #[test]
    fn verdict_parsing_is_total_and_agrees_with_validity(text in tag_soup()) {
        for kind in [TaskKind::RubricFree, TaskKind::RubricAugmented] {
            // Must not panic, and the predicate must match parse success.
            let parsed = parse_verdict(&text, kind);
            prop_assert_eq!(validate_format(&text, kind), parsed.is_ok());
        }
        let _ = parse_rubric(&text);
    }

    #[test]
    fn rendering_inserts_values_verbatim(
        question in "[a-zA-Z0-9 ]{1,30}",
        a in "[a-zA-Z0-9 ]{1,30}",
        b in "[a-zA-Z0-9 ]{1,30}",
    ) {
        for name in TemplateName::all() {
            let tpl = template(name);
            let values: Vec<(&'static str, &str)> = tpl
                .placeholders
                .iter()
                .map(|p| {
                    (*p, match *p {
                        "question" | "prompt" => question.as_str(),
                        "response_a" => a.as_str(),
                        "response_b" => b.as_str(),
                        _ => "rubric body",
                    })
                })
                .collect();
            let rendered = render(name, &values).unwrap();
            // Values with no marker text leave the marker count unchanged.
            let wanted = tpl.body.matches("[The Start of").count();
            prop_assert_eq!(rendered.text.matches("[The Start of").count(), wanted);
            // No placeholder of this template survives.
            for p in tpl.placeholders {
                let marker = format!("{{{p}}}");
                prop_assert!(!rendered.text.contains(&marker));
            }
        }
    }

    #[test]
    fn partition_and_selection_match_direct_scan(
        base in -3.0f64..3.0,
        margins in prop::collection::vec(-4.0f64..4.0, 0..24),
    ) {
        let candidates: Vec<RubricCandidate> = margins
            .iter()
            .enumerate()
            .map(|(index, value)| RubricCandidate {
                index,
                round: 1,
                raw_text: String::new(),
                doc: RubricDoc {
                    analysis: String::new(),
                    items: vec![RubricItem {
                        criterion: Criterion::Safety,
                        question: "q".into(),
                    }],
                },
                margin: JudgeMargin { value: *value, gold: Label::A, with_rubric: true },
            })
            .collect();
        let base_margin = JudgeMargin { value: base, gold: Label::A, with_rubric: false };

        let (pos, neg) = partition(&base_margin, &candidates);

        // Direct scan of the set definitions.
        let want_pos: Vec<usize> = margins
            .iter()
            .enumerate()
            .filter(|(_, m)| **m > base.max(0.0))
            .map(|(i, _)| i)
            .collect();
        let want_neg: Vec<usize> = margins
            .iter()
            .enumerate()
            .filter(|(_, m)| **m < base.min(0.0))
            .map(|(i, _)| i)
            .collect();
        prop_assert_eq!(pos.iter().map(|c| c.index).collect::<Vec<_>>(), want_pos.clone());
        prop_assert_eq!(neg.iter().map(|c| c.index).collect::<Vec<_>>(), want_neg.clone());

        if !want_pos.is_empty() && !want_neg.is_empty() {
            let pair = select_extremes(&pos, &neg, &base_margin).unwrap();
            // First maximal / first minimal by scan order.
            let best = want_pos
                .iter()
                .copied()
                .fold(None::<usize>, |acc, i| match acc {
                    Some(j) if margins[j] >= margins[i] => Some(j),
                    _ => Some(i),
                })
                .unwrap();
            let worst = want_neg
                .iter()
                .copied()
                .fold(None::<usize>, |acc, i| match acc {
                    Some(j) if margins[j] <= margins[i] => Some(j),
                    _ => Some(i),
                })
                .unwrap();
            prop_assert_eq!(pair.helpful.index, best);
            prop_assert_eq!(pair.misleading.index, worst);
        }
    }
}
