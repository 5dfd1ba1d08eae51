use indexmap::IndexMap;

use super::*;
use crate::corpus::{parse_corpus, PolicySentence, PrivacyQAInstance, ThemeCode};
use crate::gaps::{builtin_gapset, drop_gap};
use crate::response::Decision;

fn fixture(task: TaskKind) -> TaskInstance {
    let text = match task {
        TaskKind::Scifact => include_str!("../../tests/fixtures/scifact.jsonl"),
        TaskKind::Privacyqa => include_str!("../../tests/fixtures/privacyqa.jsonl"),
        TaskKind::Esnli => include_str!("../../tests/fixtures/esnli.jsonl"),
    };
    parse_corpus(text, task).unwrap().remove(0)
}

fn baseline(task: TaskKind) -> TaskResponse {
    match task {
        TaskKind::Scifact => TaskResponse::Scifact {
            decision: Decision::Refute,
            rationale: "The text states that there is a 'robust UCP1-independent thermogenic mechanism in beige fat'.".into(),
        },
        TaskKind::Privacyqa => TaskResponse::Privacyqa {
            answerable: true,
            selected_sentence_ids: vec!["0034".into(), "0036".into()],
        },
        TaskKind::Esnli => TaskResponse::Esnli {
            entailment_score: 1,
            reason: "Field and grass are nearly synonymous.".into(),
        },
    }
}

fn record(task: TaskKind, iteration: usize, reflection: bool) -> RevisionRecord {
    let gaps = builtin_gapset(task);
    let (gap_scores, gap_explanations): (IndexMap<String, u8>, IndexMap<String, String>) =
        if reflection {
            (
                gaps.names().into_iter().map(|n| (n, 7)).collect(),
                gaps.names()
                    .into_iter()
                    .map(|n| (n.clone(), format!("{n} is mostly addressed.")))
                    .collect(),
            )
        } else {
            Default::default()
        };
    RevisionRecord {
        iteration,
        gap_scores,
        gap_explanations,
        consolidated_explanation: if reflection { "Keep the quotes.".into() } else { String::new() },
        output: baseline(task),
    }
}

fn revision(task: TaskKind, rounds: usize, reflection: bool) -> PromptBundle {
    let records: Vec<RevisionRecord> = (1..=rounds).map(|i| record(task, i, reflection)).collect();
    render_revision_from(
        &fixture(task),
        &builtin_gapset(task),
        Some(&baseline(task)),
        &records,
        reflection,
    )
    .unwrap()
}

#[test]
fn initial_prompt_snapshots() {
    for task in TaskKind::ALL {
        let bundle = render_initial(&fixture(task), &builtin_gapset(task), true).unwrap();
        insta::assert_snapshot!(format!("{task}_initial"), bundle.text);
    }
}

#[test]
fn revision_prompt_snapshots() {
    for task in TaskKind::ALL {
        insta::assert_snapshot!(format!("{task}_revision"), revision(task, 1, true).text);
    }
}

#[test]
fn reflection_drop_snapshot() {
    insta::assert_snapshot!("esnli_revision_reflection_drop", revision(TaskKind::Esnli, 1, false).text);
}

#[test]
fn initial_prompts_enumerate_every_gap_once() {
    for task in TaskKind::ALL {
        let gaps = builtin_gapset(task);
        let bundle = render_initial(&fixture(task), &gaps, true).unwrap();
        assert_eq!(count_gap_entries(&bundle.text, &gaps), gaps.len());
        assert_eq!(bundle.expected_schema.phase, Phase::Initial);
        let plain = render_initial(&fixture(task), &gaps, false).unwrap();
        assert_eq!(count_gap_entries(&plain.text, &gaps), 0);
        assert!(!plain.text.contains("potential gaps"));
    }
}

#[test]
fn scifact_prompts_carry_quoting_rules() {
    let gaps = builtin_gapset(TaskKind::Scifact);
    let initial = render_initial(&fixture(TaskKind::Scifact), &gaps, true).unwrap();
    assert!(initial.text.contains("within single quotes"));
    assert!(initial.text.contains("three ellipsis dots (...)"));
    assert!(revision(TaskKind::Scifact, 1, true).text.contains("within single quotes"));
    let esnli = render_initial(&fixture(TaskKind::Esnli), &builtin_gapset(TaskKind::Esnli), true).unwrap();
    assert!(!esnli.text.contains("within single quotes"));
}

#[test]
fn privacy_prompt_lists_every_sentence() {
    let inst = fixture(TaskKind::Privacyqa);
    let text = render_initial(&inst, &builtin_gapset(TaskKind::Privacyqa), true).unwrap().text;
    let TaskInstance::Privacyqa(p) = &inst else { unreachable!() };
    for s in &p.policy_sentences {
        assert!(text.contains(&format!("\"id\": \"{}\"", s.sid)));
        assert!(text.contains(&s.text));
    }
}

#[test]
fn revision_prompts_contain_rubric_and_steps() {
    for task in TaskKind::ALL {
        let gaps = builtin_gapset(task);
        let b = revision(task, 2, true);
        assert!(b.text.contains("Assign a score between 0 and 10"));
        assert!(b.text.contains("Your Previous Gap Analyses:"));
        for step in ["1. Gap Analysis Of Most Recent", "2. Compare Current Analysis", "3. Consolidate Across Iterations", "4. Revise"] {
            assert!(b.text.contains(step), "{task}: missing {step}");
        }
        assert_eq!(count_gap_entries(&b.text, &gaps), gaps.len());
        for name in gaps.names() {
            assert!(b.text.contains(&format!("    {}: {{\"score\": X", serde_json::to_string(&name).unwrap())));
        }
        assert_eq!(b.expected_schema.phase, Phase::Revision { reflection: true });
    }
}

#[test]
fn reflection_drop_removes_analysis_steps() {
    for task in TaskKind::ALL {
        let b = revision(task, 1, false);
        assert!(!b.text.contains("Gap Analysis"));
        assert!(!b.text.contains("gap_analysis"));
        assert!(!b.text.contains("consolidated_explanation"));
        assert!(!b.text.contains("Assign a score"));
        assert!(b.text.contains("Your Previous Responses:"));
        // gap definitions stay
        let gaps = builtin_gapset(task);
        assert_eq!(count_gap_entries(&b.text, &gaps), gaps.len());
    }
}

#[test]
fn dropped_gap_is_absent_from_prompts() {
    let gaps = drop_gap(&builtin_gapset(TaskKind::Scifact), "Coverage").unwrap();
    let inst = fixture(TaskKind::Scifact);
    let text = render_initial(&inst, &gaps, true).unwrap().text;
    assert_eq!(count_gap_entries(&text, &gaps), 4);
    assert!(!text.contains("Coverage:"));
}

#[test]
fn rendering_is_deterministic() {
    for task in TaskKind::ALL {
        let a = render_initial(&fixture(task), &builtin_gapset(task), true).unwrap();
        let b = render_initial(&fixture(task), &builtin_gapset(task), true).unwrap();
        assert_eq!(a, b);
        assert_eq!(revision(task, 3, true), revision(task, 3, true));
    }
}

#[test]
fn history_round_trips() {
    for task in TaskKind::ALL {
        for k in 0..4 {
            let records: Vec<RevisionRecord> = (1..=k).map(|i| record(task, i, true)).collect();
            let b = render_revision_from(
                &fixture(task),
                &builtin_gapset(task),
                Some(&baseline(task)),
                &records,
                true,
            )
            .unwrap();
            let items = extract_history(&b.text).unwrap();
            assert_eq!(items.len(), k + 1);
            assert_eq!(items[0], Value::Object(baseline(task).model_fields("")));
            for (item, rec) in items[1..].iter().zip(&records) {
                assert_eq!(item, &revision_json(rec));
                let schema = ResponseSchema::new(&fixture(task), &builtin_gapset(task), Phase::Revision { reflection: true });
                match parse_value(item, &schema).unwrap() {
                    Parsed::Revision(p) => assert_eq!(&p.into_record(rec.iteration), rec),
                    other => panic!("unexpected {other:?}"),
                }
            }
        }
    }
}

#[test]
fn baseline_is_quoted_verbatim() {
    let b = revision(TaskKind::Scifact, 0, true);
    let TaskResponse::Scifact { rationale, .. } = baseline(TaskKind::Scifact) else { unreachable!() };
    assert!(b.text.contains(&serde_json::to_string(&rationale).unwrap()));
    assert!(b.text.contains(&format!("Your Most Recent Rationale:\n\n{rationale}")));
}

#[test]
fn empty_history_and_task_mismatch_are_errors() {
    let inst = fixture(TaskKind::Esnli);
    assert_eq!(
        render_revision_from(&inst, &builtin_gapset(TaskKind::Esnli), None, &[], true),
        Err(PromptError::EmptyHistory)
    );
    assert!(matches!(
        render_initial(&inst, &builtin_gapset(TaskKind::Scifact), true),
        Err(PromptError::TaskMismatch { .. })
    ));
}

#[test]
fn fifth_iteration_on_large_policy_fits_context() {
    let sentences: Vec<PolicySentence> = (0..450)
        .map(|i| PolicySentence {
            sid: format!("{i:04}"),
            text: format!(
                "Sentence {i}: we may share aggregated or de-identified information with partners, service providers and affiliates for analytics, advertising and to improve our services."
            ),
            theme: Some(ThemeCode::TPSC),
        })
        .collect();
    let inst = TaskInstance::Privacyqa(PrivacyQAInstance {
        id: "large".into(),
        question: "Do you sell my data?".into(),
        question_themes: vec![ThemeCode::TPSC],
        policy_sentences: sentences,
        gold_answerable: true,
        gold_sids: vec!["0001".into()],
    });
    let gaps = builtin_gapset(TaskKind::Privacyqa);
    let records: Vec<RevisionRecord> = (1..=4)
        .map(|i| {
            let mut r = record(TaskKind::Privacyqa, i, true);
            r.output = TaskResponse::Privacyqa {
                answerable: true,
                selected_sentence_ids: (0..40).map(|j| format!("{j:04}")).collect(),
            };
            r
        })
        .collect();
    let b = render_revision_from(&inst, &gaps, Some(&baseline(TaskKind::Privacyqa)), &records, true).unwrap();
    assert!(b.token_estimate > 20_000);
    assert!(b.token_estimate < 128_000);
}
