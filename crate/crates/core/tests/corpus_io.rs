use std::path::PathBuf;

use pcd_core::corpus::{
    corpus_stats, load_corpus_dir, save_corpus_dir, validate_corpus, CorpusError, LoadMode,
    ViolationCode, POLICIES_FILE, QA_FILE, SCENARIOS_FILE,
};
use pcd_core::QuestionId;

fn sample_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/consistent")
}

#[test]
fn round_trip_preserves_records_and_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join(POLICIES_FILE),
        concat!(
            r#"{"id":"p1","text":"Rent rule.","annotator":"ann-7","questions":[{"id":"Q0","text":"Rent?"},{"id":"Q1","text":"Low income?"}],"tree":"Q0 and not q1","source_url":"https://example.org/p1"}"#,
            "\n"
        ),
    )
    .unwrap();
    std::fs::write(
        dir.path().join(SCENARIOS_FILE),
        concat!(
            r#"{"id":"s1","policy_id":"p1","text":"I rent.","gold_label":"nei","gold_answers":{"Q1":"nei","Q0":"yes"},"split":"dev"}"#,
            "\n"
        ),
    )
    .unwrap();
    let (corpus, violations) = load_corpus_dir(dir.path(), LoadMode::Strict).unwrap();
    assert!(violations.is_empty());
    let p = corpus.policy("p1").unwrap();
    assert_eq!(p.tree.as_ref().unwrap().to_string(), "Q0 AND NOT Q1");
    assert_eq!(p.extra["annotator"], "ann-7");
    let s = corpus.scenario("s1").unwrap();
    assert_eq!(s.extra["split"], "dev");
    // answer order as written is kept
    let order: Vec<QuestionId> = s.gold_answers.as_ref().unwrap().keys().copied().collect();
    assert_eq!(order, vec![QuestionId(1), QuestionId(0)]);

    let out = tempfile::tempdir().unwrap();
    save_corpus_dir(&corpus, out.path()).unwrap();
    let (again, _) = load_corpus_dir(out.path(), LoadMode::Strict).unwrap();
    assert_eq!(again.policies(), corpus.policies());
    assert_eq!(again.scenarios(), corpus.scenarios());
    assert_eq!(again.qa_instances(), corpus.qa_instances());
}

#[test]
fn malformed_line_is_located() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join(POLICIES_FILE),
        "{\"id\":\"p1\",\"text\":\"t\",\"questions\":[{\"id\":\"Q0\",\"text\":\"q\"}],\"tree\":\"Q0\"}\n{\"id\":\"p2\",\"tree\":\"Q0 AND\"}\n",
    )
    .unwrap();
    std::fs::write(dir.path().join(SCENARIOS_FILE), "").unwrap();
    match load_corpus_dir(dir.path(), LoadMode::Audit) {
        Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected malformed error, got {other:?}"),
    }
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_corpus_dir(dir.path(), LoadMode::Audit),
        Err(CorpusError::Io { .. })
    ));
}

#[test]
fn strict_mode_rejects_inconsistent_gold() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join(POLICIES_FILE),
        "{\"id\":\"p\",\"text\":\"t\",\"questions\":[{\"id\":\"Q0\",\"text\":\"q\"}],\"tree\":\"Q0\"}\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join(SCENARIOS_FILE),
        "{\"id\":\"s\",\"policy_id\":\"p\",\"text\":\"x\",\"gold_label\":\"no\",\"gold_answers\":{\"Q0\":\"yes\"}}\n",
    )
    .unwrap();
    match load_corpus_dir(dir.path(), LoadMode::Strict) {
        Err(CorpusError::Invalid(v)) => assert_eq!(v[0].code, ViolationCode::LabelMismatch),
        other => panic!("expected invalid corpus, got {other:?}"),
    }
    let (_, v) = load_corpus_dir(dir.path(), LoadMode::Audit).unwrap();
    assert_eq!(v.len(), 1);
}

#[test]
fn explicit_qa_file_is_used_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    for f in [POLICIES_FILE, SCENARIOS_FILE] {
        std::fs::copy(sample_dir().join(f), dir.path().join(f)).unwrap();
    }
    std::fs::write(
        dir.path().join(QA_FILE),
        "{\"scenario_id\":\"s1\",\"question_id\":\"Q0\",\"answer\":\"yes\"}\n{\"scenario_id\":\"ghost\",\"question_id\":\"Q0\",\"answer\":\"no\"}\n",
    )
    .unwrap();
    let (corpus, violations) = load_corpus_dir(dir.path(), LoadMode::Audit).unwrap();
    assert_eq!(corpus.qa_instances().len(), 2);
    assert!(violations
        .iter()
        .any(|v| v.code == ViolationCode::DanglingQaInstance));
}

#[test]
fn sample_corpus_is_consistent_with_hand_counted_stats() {
    let (corpus, violations) = load_corpus_dir(&sample_dir(), LoadMode::Strict).unwrap();
    assert!(violations.is_empty());
    assert!(validate_corpus(&corpus).is_empty());
    let stats = corpus_stats(&corpus).unwrap();
    assert_eq!(
        (stats.policy_count, stats.scenario_count, stats.qa_count),
        (2, 5, 16)
    );
    assert_eq!(stats.qa_count_definite, 7);
    assert_eq!(stats.avg_qa_per_policy_display(), "3.00");
    assert_eq!(
        (
            stats.label_histogram.yes,
            stats.label_histogram.no,
            stats.label_histogram.nei
        ),
        (2, 2, 1)
    );
    assert_eq!(stats.answer_histogram.total(), 16);
}
