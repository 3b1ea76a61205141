//! Conversion of ShARC-style conversational utterances into compliance data.
//!
//! Every utterance with a non-empty scenario becomes a scenario labelled
//! `yes`/`no` when its answer is Yes/No and its history is empty, and `nei`
//! otherwise. Each such scenario also gets one QA instance per follow-up
//! question known for its policy: the answer given in the conversation when
//! the question was asked there, `nei` when it was not.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::corpus::{
    write_jsonl, Policy, QaInstance, Question, Scenario, POLICIES_FILE, QA_FILE, SCENARIOS_FILE,
};
use crate::logic::QuestionId;
use crate::TriValue;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryTurn {
    pub follow_up_question: String,
    pub follow_up_answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharcUtterance {
    pub utterance_id: String,
    pub tree_id: String,
    #[serde(default)]
    pub source_url: Option<String>,
    #[serde(default)]
    pub snippet: String,
    #[serde(default)]
    pub question: String,
    #[serde(default)]
    pub scenario: String,
    #[serde(default)]
    pub history: Vec<HistoryTurn>,
    pub answer: String,
}

#[derive(Debug, thiserror::Error)]
pub enum SharcError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("record {record}: malformed utterance: {message}")]
    Malformed { record: usize, message: String },
    #[error("{0} conflicting answer(s) in strict mode; first: scenario {1}")]
    Conflicts(usize, String),
}

/// The kind of a ShARC utterance's final answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnswerKind {
    Yes,
    No,
    /// A terminal marker other than Yes/No, such as `Irrelevant`.
    OtherTerminal(String),
    FollowUp(String),
}

const TERMINAL_MARKERS: &[&str] = &["irrelevant"];

pub fn classify_answer(answer: &str) -> AnswerKind {
    let a = normalize(answer);
    if a.eq_ignore_ascii_case("yes") {
        AnswerKind::Yes
    } else if a.eq_ignore_ascii_case("no") {
        AnswerKind::No
    } else if a.is_empty() || TERMINAL_MARKERS.iter().any(|m| a.eq_ignore_ascii_case(m)) {
        AnswerKind::OtherTerminal(a)
    } else {
        AnswerKind::FollowUp(a)
    }
}

/// Collapses runs of whitespace and trims; question identity is exact match
/// on this form.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Unique follow-up questions of one policy group in first-seen order: for
/// each utterance, its history questions, then its answer if that is a
/// follow-up. Ids are assigned `Q0`, `Q1`, ... in that order.
pub fn collect_policy_questions(group: &[SharcUtterance]) -> Vec<Question> {
    let mut seen: Vec<String> = Vec::new();
    let mut add = |text: String| {
        if !text.is_empty() && !seen.contains(&text) {
            seen.push(text);
        }
    };
    for u in group {
        for turn in &u.history {
            add(normalize(&turn.follow_up_question));
        }
        if let AnswerKind::FollowUp(q) = classify_answer(&u.answer) {
            add(q);
        }
    }
    seen.into_iter()
        .enumerate()
        .map(|(i, text)| Question {
            id: QuestionId(i as u32),
            text,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    EmptyScenario,
    NonYesNoTerminal,
}

/// Entailment label for an utterance, or why it yields no scenario.
pub fn to_entailment_instance(u: &SharcUtterance) -> Result<TriValue, SkipReason> {
    if u.scenario.trim().is_empty() {
        return Err(SkipReason::EmptyScenario);
    }
    match classify_answer(&u.answer) {
        AnswerKind::OtherTerminal(_) => Err(SkipReason::NonYesNoTerminal),
        AnswerKind::Yes if u.history.is_empty() => Ok(TriValue::Yes),
        AnswerKind::No if u.history.is_empty() => Ok(TriValue::No),
        _ => Ok(TriValue::Nei),
    }
}

/// Question/answer pairs exchanged in the conversation behind a scenario.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Conversation {
    pub turns: Vec<(String, String)>,
    /// `Some(true)` when the utterance ends in a follow-up whose answer was
    /// found in a continuation utterance, `Some(false)` when it was not.
    pub follow_up_recovered: Option<bool>,
}

/// The utterance's own history plus, when its answer is a follow-up
/// question, the answer found in the continuation of the same dialogue (an
/// utterance with the same tree, question and scenario whose history extends
/// this one by exactly that follow-up).
pub fn conversation_for(u: &SharcUtterance, group: &[SharcUtterance]) -> Conversation {
    let mut turns: Vec<(String, String)> = u
        .history
        .iter()
        .map(|t| {
            (
                normalize(&t.follow_up_question),
                normalize(&t.follow_up_answer),
            )
        })
        .collect();
    let AnswerKind::FollowUp(follow_up) = classify_answer(&u.answer) else {
        return Conversation {
            turns,
            follow_up_recovered: None,
        };
    };
    let scenario = normalize(&u.scenario);
    let question = normalize(&u.question);
    let continuation = group.iter().find(|v| {
        v.tree_id == u.tree_id
            && normalize(&v.question) == question
            && normalize(&v.scenario) == scenario
            && v.history.len() == u.history.len() + 1
            && v.history[..u.history.len()] == u.history[..]
            && normalize(&v.history[u.history.len()].follow_up_question) == follow_up
    });
    match continuation {
        Some(v) => {
            turns.push((
                follow_up,
                normalize(&v.history[u.history.len()].follow_up_answer),
            ));
            Conversation {
                turns,
                follow_up_recovered: Some(true),
            }
        }
        None => Conversation {
            turns,
            follow_up_recovered: Some(false),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerConflict {
    pub scenario_id: String,
    pub question_id: QuestionId,
    pub kept: TriValue,
    pub dropped: TriValue,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QaConversion {
    pub instances: Vec<QaInstance>,
    /// Instances whose answer came from the conversation (not `nei` padding).
    pub from_conversation: usize,
    pub conflicts: Vec<AnswerConflict>,
    /// Conversation answers that are not yes/no/nei.
    pub unrecognized_answers: usize,
}

/// One QA instance per policy question: the conversation's answer when the
/// question was asked, `nei` otherwise.
pub fn to_qa_instances(
    scenario_id: &str,
    policy_questions: &[Question],
    conversation: &Conversation,
) -> QaConversion {
    let mut out = QaConversion::default();
    let mut answers: HashMap<QuestionId, TriValue> = HashMap::new();
    for (text, answer) in &conversation.turns {
        let Some(q) = policy_questions.iter().find(|q| &q.text == text) else {
            continue;
        };
        let Ok(value) = answer.parse::<TriValue>() else {
            out.unrecognized_answers += 1;
            continue;
        };
        match answers.get(&q.id) {
            None => {
                answers.insert(q.id, value);
            }
            Some(&kept) if kept != value => out.conflicts.push(AnswerConflict {
                scenario_id: scenario_id.to_string(),
                question_id: q.id,
                kept,
                dropped: value,
            }),
            Some(_) => {}
        }
    }
    for q in policy_questions {
        let answer = match answers.get(&q.id) {
            Some(v) => {
                out.from_conversation += 1;
                *v
            }
            None => TriValue::Nei,
        };
        out.instances.push(QaInstance {
            scenario_id: scenario_id.to_string(),
            question_id: q.id,
            answer,
        });
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConversionReport {
    pub utterances: usize,
    pub policies: usize,
    pub scenarios: usize,
    pub skipped: BTreeMap<SkipReason, usize>,
    pub label_counts: BTreeMap<TriValue, usize>,
    /// All QA instances, including `nei` padding.
    pub qa_padded: usize,
    /// QA instances whose answer came from the conversation.
    pub qa_unpadded: usize,
    pub follow_ups_recovered: usize,
    pub follow_ups_unrecovered: usize,
    pub unrecognized_answers: usize,
    pub policies_without_questions: Vec<String>,
    pub conflicts: Vec<AnswerConflict>,
}

impl ConversionReport {
    pub fn skipped_total(&self) -> usize {
        self.skipped.values().sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "utterances:              {}", self.utterances);
        let _ = writeln!(s, "policies:                {}", self.policies);
        let _ = writeln!(s, "scenarios:               {}", self.scenarios);
        for (label, n) in &self.label_counts {
            let _ = writeln!(s, "  label {label:<4}            {n}");
        }
        let _ = writeln!(s, "skipped:                 {}", self.skipped_total());
        for (reason, n) in &self.skipped {
            let _ = writeln!(s, "  {reason:?}: {n}");
        }
        let _ = writeln!(s, "qa (padded):             {}", self.qa_padded);
        let _ = writeln!(s, "qa (from conversation):  {}", self.qa_unpadded);
        let _ = writeln!(s, "follow-ups recovered:    {}", self.follow_ups_recovered);
        let _ = writeln!(
            s,
            "follow-ups unrecovered:  {}",
            self.follow_ups_unrecovered
        );
        let _ = writeln!(s, "unrecognized answers:    {}", self.unrecognized_answers);
        let _ = writeln!(s, "answer conflicts:        {}", self.conflicts.len());
        let _ = writeln!(
            s,
            "policies w/o questions:  {}",
            self.policies_without_questions.len()
        );
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct Conversion {
    pub policies: Vec<Policy>,
    pub scenarios: Vec<Scenario>,
    pub qa: Vec<QaInstance>,
    pub report: ConversionReport,
}

impl Conversion {
    /// Writes the corpus files plus `report.json` and `report.txt`.
    pub fn write_to(&self, dir: &Path) -> Result<(), SharcError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SharcError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let corpus_err = |e: crate::corpus::CorpusError| match e {
            crate::corpus::CorpusError::Io { path, source } => SharcError::Io { path, source },
            other => SharcError::Io {
                path: dir.into(),
                source: std::io::Error::other(other.to_string()),
            },
        };
        write_jsonl(&dir.join(POLICIES_FILE), &self.policies).map_err(corpus_err)?;
        write_jsonl(&dir.join(SCENARIOS_FILE), &self.scenarios).map_err(corpus_err)?;
        write_jsonl(&dir.join(QA_FILE), &self.qa).map_err(corpus_err)?;
        let json = serde_json::to_string_pretty(&self.report).expect("report serializes");
        let p = dir.join("report.json");
        std::fs::write(&p, json + "\n").map_err(io(&p))?;
        let p = dir.join("report.txt");
        std::fs::write(&p, self.report.to_text()).map_err(io(&p))?;
        Ok(())
    }
}

/// Parses ShARC records from either a JSON array or JSON lines.
pub fn parse_utterances(text: &str) -> Result<Vec<SharcUtterance>, SharcError> {
    let values: Vec<serde_json::Value> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text).map_err(|e| SharcError::Malformed {
            record: 0,
            message: e.to_string(),
        })?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| SharcError::Malformed {
                    record: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?
    };
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let u: SharcUtterance =
                serde_json::from_value(v).map_err(|e| SharcError::Malformed {
                    record: i + 1,
                    message: e.to_string(),
                })?;
            if u.tree_id.trim().is_empty() {
                return Err(SharcError::Malformed {
                    record: i + 1,
                    message: "empty tree_id".into(),
                });
            }
            if u.history
                .iter()
                .any(|t| t.follow_up_question.trim().is_empty())
            {
                return Err(SharcError::Malformed {
                    record: i + 1,
                    message: "history entry with empty question".into(),
                });
            }
            Ok(u)
        })
        .collect()
}

/// Converts parsed utterances. Output order follows input order.
pub fn convert_utterances(utterances: &[SharcUtterance]) -> Conversion {
    let mut group_order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<SharcUtterance>> = HashMap::new();
    for u in utterances {
        groups
            .entry(u.tree_id.as_str())
            .or_insert_with(|| {
                group_order.push(u.tree_id.as_str());
                Vec::new()
            })
            .push(u.clone());
    }

    let mut out = Conversion::default();
    out.report.utterances = utterances.len();
    let mut questions_by_policy: HashMap<&str, Vec<Question>> = HashMap::new();
    for tree_id in &group_order {
        let group = &groups[tree_id];
        let questions = collect_policy_questions(group);
        if questions.is_empty() {
            out.report
                .policies_without_questions
                .push(tree_id.to_string());
        }
        let first = &group[0];
        out.policies.push(Policy {
            id: tree_id.to_string(),
            text: first.snippet.clone(),
            source_url: first.source_url.clone(),
            questions: questions.clone(),
            tree: None,
            extra: Map::new(),
        });
        questions_by_policy.insert(tree_id, questions);
    }
    out.report.policies = out.policies.len();

    for u in utterances {
        let label = match to_entailment_instance(u) {
            Ok(l) => l,
            Err(reason) => {
                *out.report.skipped.entry(reason).or_default() += 1;
                continue;
            }
        };
        *out.report.label_counts.entry(label).or_default() += 1;
        out.scenarios.push(Scenario {
            id: u.utterance_id.clone(),
            policy_id: u.tree_id.clone(),
            text: u.scenario.clone(),
            gold_label: Some(label),
            gold_answers: None,
            extra: Map::new(),
        });
        let conversation = conversation_for(u, &groups[u.tree_id.as_str()]);
        match conversation.follow_up_recovered {
            Some(true) => out.report.follow_ups_recovered += 1,
            Some(false) => out.report.follow_ups_unrecovered += 1,
            None => {}
        }
        let qa = to_qa_instances(
            &u.utterance_id,
            &questions_by_policy[u.tree_id.as_str()],
            &conversation,
        );
        out.report.qa_unpadded += qa.from_conversation;
        out.report.unrecognized_answers += qa.unrecognized_answers;
        out.report.conflicts.extend(qa.conflicts);
        out.qa.extend(qa.instances);
    }
    out.report.scenarios = out.scenarios.len();
    out.report.qa_padded = out.qa.len();
    out
}

/// Reads and converts a ShARC file. In strict mode, answer conflicts are an error.
pub fn convert_corpus(sharc_file: &Path, strict: bool) -> Result<Conversion, SharcError> {
    let text = std::fs::read_to_string(sharc_file).map_err(|source| SharcError::Io {
        path: sharc_file.into(),
        source,
    })?;
    let utterances = parse_utterances(&text)?;
    let conversion = convert_utterances(&utterances);
    if strict {
        if let Some(c) = conversion.report.conflicts.first() {
            return Err(SharcError::Conflicts(
                conversion.report.conflicts.len(),
                c.scenario_id.clone(),
            ));
        }
    }
    Ok(conversion)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str, scenario: &str, history: &[(&str, &str)], answer: &str) -> SharcUtterance {
        SharcUtterance {
            utterance_id: id.into(),
            tree_id: "t1".into(),
            source_url: None,
            snippet: "snippet".into(),
            question: "Can I get help?".into(),
            scenario: scenario.into(),
            history: history
                .iter()
                .map(|(q, a)| HistoryTurn {
                    follow_up_question: q.to_string(),
                    follow_up_answer: a.to_string(),
                })
                .collect(),
            answer: answer.into(),
        }
    }

    #[test]
    fn dedup_and_order() {
        let g = vec![
            utt("a", "", &[], "Do you rent?"),
            utt("b", "", &[], "Are you a pensioner?"),
            utt("c", "", &[], "Do you  rent?"),
        ];
        let qs = collect_policy_questions(&g);
        assert_eq!(qs.len(), 2);
        assert_eq!(qs[0].text, "Do you rent?");
        assert_eq!(qs[0].id, QuestionId(0));
        assert_eq!(qs[1].text, "Are you a pensioner?");
    }

    #[test]
    fn yes_no_only_group_has_no_questions() {
        let g = vec![utt("a", "x", &[], "Yes"), utt("b", "y", &[], "No")];
        assert!(collect_policy_questions(&g).is_empty());
    }

    #[test]
    fn history_only_question_is_collected() {
        let g = vec![utt("a", "x", &[("Are you over 18?", "Yes")], "Yes")];
        let qs = collect_policy_questions(&g);
        assert_eq!(qs.len(), 1);
        assert_eq!(qs[0].text, "Are you over 18?");
    }

    #[test]
    fn entailment_rules() {
        assert_eq!(
            to_entailment_instance(&utt("a", "s", &[], "Yes")),
            Ok(TriValue::Yes)
        );
        assert_eq!(
            to_entailment_instance(&utt("a", "s", &[], "No")),
            Ok(TriValue::No)
        );
        assert_eq!(
            to_entailment_instance(&utt("a", "s", &[("q?", "Yes")], "No")),
            Ok(TriValue::Nei)
        );
        assert_eq!(
            to_entailment_instance(&utt("a", "s", &[], "Do you rent?")),
            Ok(TriValue::Nei)
        );
        assert_eq!(
            to_entailment_instance(&utt("a", "  ", &[], "Yes")),
            Err(SkipReason::EmptyScenario)
        );
        assert_eq!(
            to_entailment_instance(&utt("a", "s", &[], "Irrelevant")),
            Err(SkipReason::NonYesNoTerminal)
        );
    }

    fn qs(texts: &[&str]) -> Vec<Question> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Question {
                id: QuestionId(i as u32),
                text: t.to_string(),
            })
            .collect()
    }

    #[test]
    fn qa_padding() {
        let conv = Conversation {
            turns: vec![("A?".into(), "Yes".into())],
            follow_up_recovered: None,
        };
        let out = to_qa_instances("s", &qs(&["A?", "B?"]), &conv);
        let answers: Vec<_> = out
            .instances
            .iter()
            .map(|i| (i.question_id, i.answer))
            .collect();
        assert_eq!(
            answers,
            vec![
                (QuestionId(0), TriValue::Yes),
                (QuestionId(1), TriValue::Nei)
            ]
        );
        assert_eq!(out.from_conversation, 1);
    }

    #[test]
    fn qa_all_answered_and_empty_conversation() {
        let conv = Conversation {
            turns: vec![("A?".into(), "No".into()), ("B?".into(), "Yes".into())],
            follow_up_recovered: None,
        };
        let out = to_qa_instances("s", &qs(&["A?", "B?"]), &conv);
        assert_eq!(
            out.instances.iter().map(|i| i.answer).collect::<Vec<_>>(),
            vec![TriValue::No, TriValue::Yes]
        );
        let out = to_qa_instances("s", &qs(&["A?", "B?"]), &Conversation::default());
        assert!(out.instances.iter().all(|i| i.answer == TriValue::Nei));
    }

    #[test]
    fn conflicting_answers_keep_first() {
        let conv = Conversation {
            turns: vec![("A?".into(), "No".into()), ("A?".into(), "Yes".into())],
            follow_up_recovered: None,
        };
        let out = to_qa_instances("s", &qs(&["A?"]), &conv);
        assert_eq!(out.instances[0].answer, TriValue::No);
        assert_eq!(out.conflicts.len(), 1);
        assert_eq!(out.conflicts[0].dropped, TriValue::Yes);
    }

    #[test]
    fn follow_up_answer_recovered_from_continuation() {
        let g = vec![
            utt("a", "I rent a flat.", &[], "Are you a pensioner?"),
            utt(
                "b",
                "I rent a flat.",
                &[("Are you a pensioner?", "No")],
                "No",
            ),
        ];
        let conv = conversation_for(&g[0], &g);
        assert_eq!(conv.follow_up_recovered, Some(true));
        assert_eq!(
            conv.turns,
            vec![("Are you a pensioner?".to_string(), "No".to_string())]
        );
        let lone = conversation_for(&g[0], &g[..1]);
        assert_eq!(lone.follow_up_recovered, Some(false));
        assert!(lone.turns.is_empty());
    }

    #[test]
    fn empty_scenario_file_yields_one_skip() {
        let conv = convert_utterances(&[utt("a", "", &[], "Yes")]);
        assert!(conv.scenarios.is_empty());
        assert!(conv.qa.is_empty());
        assert_eq!(conv.report.skipped_total(), 1);
    }

    #[test]
    fn parse_rejects_blank_tree_id_and_accepts_jsonl() {
        let line = r#"{"utterance_id":"u","tree_id":"","snippet":"s","question":"q","scenario":"","history":[],"answer":"Yes"}"#;
        assert!(matches!(
            parse_utterances(line),
            Err(SharcError::Malformed { record: 1, .. })
        ));
        let ok = r#"{"utterance_id":"u","tree_id":"t","answer":"Yes","evidence":[]}"#;
        assert_eq!(parse_utterances(ok).unwrap().len(), 1);
        assert_eq!(parse_utterances(&format!("[{ok}]")).unwrap().len(), 1);
    }
}
