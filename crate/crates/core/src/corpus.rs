//! Policies, scenarios and QA instances: the on-disk corpus format, loading,
//! validation and summary statistics.
//!
//! A corpus directory holds `policies.jsonl`, `scenarios.jsonl` and optionally
//! `qa.jsonl`, one JSON record per line. Fields this crate does not know about
//! are kept and written back unchanged.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::logic::{evaluate, Assignment, ExprTree, QuestionId};
use crate::TriValue;

pub const POLICIES_FILE: &str = "policies.jsonl";
pub const SCENARIOS_FILE: &str = "scenarios.jsonl";
pub const QA_FILE: &str = "qa.jsonl";

/// Question count bounds for policies that carry a tree.
pub const MIN_QUESTIONS: usize = 1;
pub const MAX_QUESTIONS: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
    pub questions: Vec<Question>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<ExprTree>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Policy {
    pub fn question(&self, id: QuestionId) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn question_ids(&self) -> impl Iterator<Item = QuestionId> + '_ {
        self.questions.iter().map(|q| q.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub policy_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<TriValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answers: Option<IndexMap<QuestionId, TriValue>>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Scenario {
    pub fn gold_assignment(&self) -> Option<Assignment> {
        self.gold_answers
            .as_ref()
            .map(|m| m.iter().map(|(q, v)| (*q, *v)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QaInstance {
    pub scenario_id: String,
    pub question_id: QuestionId,
    pub answer: TriValue,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("corpus has {} violation(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
    #[error("corpus is empty")]
    Empty,
}

/// How `load_corpus` treats invariant violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// Any violation fails the load.
    Strict,
    /// Violations are returned alongside the corpus.
    #[default]
    Audit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    DuplicatePolicyId,
    DuplicateScenarioId,
    DuplicateQuestionId,
    EmptyQuestionText,
    TreeQuestionMismatch,
    QuestionCountOutOfRange,
    DanglingPolicy,
    GoldAnswersIncomplete,
    GoldAnswersUnknownQuestion,
    LabelMismatch,
    DanglingQaInstance,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::DuplicatePolicyId => "duplicate_policy_id",
            ViolationCode::DuplicateScenarioId => "duplicate_scenario_id",
            ViolationCode::DuplicateQuestionId => "duplicate_question_id",
            ViolationCode::EmptyQuestionText => "empty_question_text",
            ViolationCode::TreeQuestionMismatch => "tree_question_mismatch",
            ViolationCode::QuestionCountOutOfRange => "question_count_out_of_range",
            ViolationCode::DanglingPolicy => "dangling_policy",
            ViolationCode::GoldAnswersIncomplete => "gold_answers_incomplete",
            ViolationCode::GoldAnswersUnknownQuestion => "gold_answers_unknown_question",
            ViolationCode::LabelMismatch => "label_mismatch",
            ViolationCode::DanglingQaInstance => "dangling_qa_instance",
        }
    }
}

/// A mechanical repair that removes one violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Fix {
    SetGoldLabel {
        scenario_id: String,
        label: TriValue,
    },
    DropScenario {
        scenario_id: String,
    },
    DropQuestion {
        policy_id: String,
        question_id: QuestionId,
    },
    DropGoldAnswer {
        scenario_id: String,
        question_id: QuestionId,
    },
    DropGoldAnswers {
        scenario_id: String,
    },
    DropQaInstance {
        scenario_id: String,
        question_id: QuestionId,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<QuestionId>,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fix: Option<Fix>,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}]", self.code.as_str())?;
        if let Some(p) = &self.policy_id {
            write!(f, " policy={p}")?;
        }
        if let Some(s) = &self.scenario_id {
            write!(f, " scenario={s}")?;
        }
        if let Some(q) = &self.question_id {
            write!(f, " question={q}")?;
        }
        write!(f, ": {}", self.message)
    }
}

/// An in-memory corpus. Immutable once loaded; use [`Corpus::new`] to build
/// one from records.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    policies: Vec<Policy>,
    scenarios: Vec<Scenario>,
    qa: Option<Vec<QaInstance>>,
    policy_index: HashMap<String, usize>,
    scenario_index: HashMap<String, usize>,
}

impl Corpus {
    /// `qa` is the explicit QA-instance list; when `None`, QA instances are
    /// derived from scenario gold answers.
    pub fn new(
        policies: Vec<Policy>,
        scenarios: Vec<Scenario>,
        qa: Option<Vec<QaInstance>>,
    ) -> Self {
        let mut policy_index = HashMap::new();
        for (i, p) in policies.iter().enumerate() {
            policy_index.entry(p.id.clone()).or_insert(i);
        }
        let mut scenario_index = HashMap::new();
        for (i, s) in scenarios.iter().enumerate() {
            scenario_index.entry(s.id.clone()).or_insert(i);
        }
        Corpus {
            policies,
            scenarios,
            qa,
            policy_index,
            scenario_index,
        }
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn policy(&self, id: &str) -> Option<&Policy> {
        self.policy_index.get(id).map(|&i| &self.policies[i])
    }

    pub fn scenario(&self, id: &str) -> Option<&Scenario> {
        self.scenario_index.get(id).map(|&i| &self.scenarios[i])
    }

    pub fn scenarios_for<'a>(
        &'a self,
        policy_id: &'a str,
    ) -> impl Iterator<Item = &'a Scenario> + 'a {
        self.scenarios
            .iter()
            .filter(move |s| s.policy_id == policy_id)
    }

    pub fn explicit_qa(&self) -> Option<&[QaInstance]> {
        self.qa.as_deref()
    }

    /// QA instances: the explicit list if one was loaded, else one per gold answer.
    pub fn qa_instances(&self) -> Vec<QaInstance> {
        if let Some(qa) = &self.qa {
            return qa.clone();
        }
        self.scenarios
            .iter()
            .flat_map(|s| {
                s.gold_answers
                    .iter()
                    .flatten()
                    .map(move |(q, a)| QaInstance {
                        scenario_id: s.id.clone(),
                        question_id: *q,
                        answer: *a,
                    })
            })
            .collect()
    }

    pub fn into_parts(self) -> (Vec<Policy>, Vec<Scenario>, Option<Vec<QaInstance>>) {
        (self.policies, self.scenarios, self.qa)
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.into(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.into(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut w, r).expect("corpus records serialize");
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Loads policies and scenarios (and an optional QA file) and checks every
/// invariant. In [`LoadMode::Audit`] the violations are returned; in
/// [`LoadMode::Strict`] any violation is an error.
pub fn load_corpus(
    policies_file: &Path,
    scenarios_file: &Path,
    qa_file: Option<&Path>,
    mode: LoadMode,
) -> Result<(Corpus, Vec<Violation>), CorpusError> {
    let policies = read_jsonl(policies_file)?;
    let scenarios = read_jsonl(scenarios_file)?;
    let qa = qa_file.map(read_jsonl).transpose()?;
    let corpus = Corpus::new(policies, scenarios, qa);
    let violations = validate_corpus(&corpus);
    if mode == LoadMode::Strict && !violations.is_empty() {
        return Err(CorpusError::Invalid(violations));
    }
    Ok((corpus, violations))
}

/// Loads `policies.jsonl`, `scenarios.jsonl` and, if present, `qa.jsonl` from `dir`.
pub fn load_corpus_dir(
    dir: &Path,
    mode: LoadMode,
) -> Result<(Corpus, Vec<Violation>), CorpusError> {
    let qa = dir.join(QA_FILE);
    load_corpus(
        &dir.join(POLICIES_FILE),
        &dir.join(SCENARIOS_FILE),
        qa.exists().then_some(qa.as_path()),
        mode,
    )
}

pub fn save_corpus_dir(corpus: &Corpus, dir: &Path) -> Result<(), CorpusError> {
    std::fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
        path: dir.into(),
        source,
    })?;
    write_jsonl(&dir.join(POLICIES_FILE), corpus.policies())?;
    write_jsonl(&dir.join(SCENARIOS_FILE), corpus.scenarios())?;
    if let Some(qa) = corpus.explicit_qa() {
        write_jsonl(&dir.join(QA_FILE), qa)?;
    }
    Ok(())
}

struct Collector(Vec<Violation>);

impl Collector {
    fn push(
        &mut self,
        code: ViolationCode,
        policy_id: Option<&str>,
        scenario_id: Option<&str>,
        question_id: Option<QuestionId>,
        message: String,
        fix: Option<Fix>,
    ) {
        self.0.push(Violation {
            code,
            policy_id: policy_id.map(str::to_string),
            scenario_id: scenario_id.map(str::to_string),
            question_id,
            message,
            fix,
        });
    }
}

/// Checks every policy, scenario and QA-instance invariant. An empty result
/// means the corpus is consistent.
pub fn validate_corpus(corpus: &Corpus) -> Vec<Violation> {
    use ViolationCode::*;
    let mut out = Collector(Vec::new());

    let mut seen = HashSet::new();
    for p in corpus.policies() {
        let pid = Some(p.id.as_str());
        if !seen.insert(p.id.as_str()) {
            out.push(
                DuplicatePolicyId,
                pid,
                None,
                None,
                "policy id appears more than once".into(),
                None,
            );
        }
        let mut qids = HashSet::new();
        for q in &p.questions {
            if !qids.insert(q.id) {
                out.push(
                    DuplicateQuestionId,
                    pid,
                    None,
                    Some(q.id),
                    "question id repeated".into(),
                    None,
                );
            }
            if q.text.trim().is_empty() {
                out.push(
                    EmptyQuestionText,
                    pid,
                    None,
                    Some(q.id),
                    "question text is empty".into(),
                    None,
                );
            }
        }
        if let Some(tree) = &p.tree {
            for v in tree.questions() {
                if !qids.contains(v) {
                    out.push(
                        TreeQuestionMismatch,
                        pid,
                        None,
                        Some(*v),
                        format!("tree references {v} which has no question"),
                        None,
                    );
                }
            }
            for q in &p.questions {
                if !tree.contains(q.id) {
                    out.push(
                        TreeQuestionMismatch,
                        pid,
                        None,
                        Some(q.id),
                        format!("question {} is not used by the tree", q.id),
                        Some(Fix::DropQuestion {
                            policy_id: p.id.clone(),
                            question_id: q.id,
                        }),
                    );
                }
            }
            let n = tree.questions().len();
            if !(MIN_QUESTIONS..=MAX_QUESTIONS).contains(&n) {
                out.push(
                    QuestionCountOutOfRange,
                    pid,
                    None,
                    None,
                    format!("tree has {n} questions; expected {MIN_QUESTIONS}..={MAX_QUESTIONS}"),
                    None,
                );
            }
        }
    }

    let mut seen = HashSet::new();
    for s in corpus.scenarios() {
        let sid = Some(s.id.as_str());
        if !seen.insert(s.id.as_str()) {
            out.push(
                DuplicateScenarioId,
                None,
                sid,
                None,
                "scenario id appears more than once".into(),
                None,
            );
        }
        let Some(policy) = corpus.policy(&s.policy_id) else {
            out.push(
                DanglingPolicy,
                Some(&s.policy_id),
                sid,
                None,
                format!("unknown policy id {:?}", s.policy_id),
                Some(Fix::DropScenario {
                    scenario_id: s.id.clone(),
                }),
            );
            continue;
        };
        let pid = Some(policy.id.as_str());
        let Some(gold) = &s.gold_answers else {
            continue;
        };
        let mut complete = true;
        for q in gold.keys() {
            if policy.question(*q).is_none() {
                complete = false;
                out.push(
                    GoldAnswersUnknownQuestion,
                    pid,
                    sid,
                    Some(*q),
                    format!("gold answer for {q}, which the policy does not define"),
                    Some(Fix::DropGoldAnswer {
                        scenario_id: s.id.clone(),
                        question_id: *q,
                    }),
                );
            }
        }
        for q in policy.question_ids() {
            if !gold.contains_key(&q) {
                complete = false;
                out.push(
                    GoldAnswersIncomplete,
                    pid,
                    sid,
                    Some(q),
                    format!("gold answers do not cover {q}"),
                    Some(Fix::DropGoldAnswers {
                        scenario_id: s.id.clone(),
                    }),
                );
            }
        }
        if let (true, Some(tree), Some(label)) = (complete, &policy.tree, s.gold_label) {
            let assignment = s.gold_assignment().unwrap_or_default();
            if let Ok(inferred) = evaluate(tree, &assignment) {
                if inferred != label {
                    out.push(
                        LabelMismatch,
                        pid,
                        sid,
                        None,
                        format!("gold answers imply {inferred} but gold label is {label}"),
                        Some(Fix::SetGoldLabel {
                            scenario_id: s.id.clone(),
                            label: inferred,
                        }),
                    );
                }
            }
        }
    }

    if let Some(qa) = corpus.explicit_qa() {
        for inst in qa {
            let ok = corpus
                .scenario(&inst.scenario_id)
                .and_then(|s| corpus.policy(&s.policy_id))
                .is_some_and(|p| p.question(inst.question_id).is_some());
            if !ok {
                out.push(
                    DanglingQaInstance,
                    None,
                    Some(&inst.scenario_id),
                    Some(inst.question_id),
                    "QA instance references an unknown scenario or question".into(),
                    Some(Fix::DropQaInstance {
                        scenario_id: inst.scenario_id.clone(),
                        question_id: inst.question_id,
                    }),
                );
            }
        }
    }
    out.0
}

/// Applies every fix attached to `violations`. Violations without a fix are
/// left for manual repair.
pub fn apply_fixes(corpus: Corpus, violations: &[Violation]) -> Corpus {
    let (mut policies, mut scenarios, mut qa) = corpus.into_parts();
    for fix in violations.iter().filter_map(|v| v.fix.as_ref()) {
        match fix {
            Fix::SetGoldLabel { scenario_id, label } => {
                for s in scenarios.iter_mut().filter(|s| &s.id == scenario_id) {
                    s.gold_label = Some(*label);
                }
            }
            Fix::DropScenario { scenario_id } => scenarios.retain(|s| &s.id != scenario_id),
            Fix::DropQuestion {
                policy_id,
                question_id,
            } => {
                for p in policies.iter_mut().filter(|p| &p.id == policy_id) {
                    p.questions.retain(|q| q.id != *question_id);
                }
                for s in scenarios.iter_mut().filter(|s| &s.policy_id == policy_id) {
                    if let Some(g) = s.gold_answers.as_mut() {
                        g.shift_remove(question_id);
                    }
                }
                if let Some(qa) = qa.as_mut() {
                    let affected: HashSet<&str> = scenarios
                        .iter()
                        .filter(|s| &s.policy_id == policy_id)
                        .map(|s| s.id.as_str())
                        .collect();
                    qa.retain(|i| {
                        !(i.question_id == *question_id
                            && affected.contains(i.scenario_id.as_str()))
                    });
                }
            }
            Fix::DropGoldAnswer {
                scenario_id,
                question_id,
            } => {
                for s in scenarios.iter_mut().filter(|s| &s.id == scenario_id) {
                    if let Some(g) = s.gold_answers.as_mut() {
                        g.shift_remove(question_id);
                    }
                }
            }
            Fix::DropGoldAnswers { scenario_id } => {
                for s in scenarios.iter_mut().filter(|s| &s.id == scenario_id) {
                    s.gold_answers = None;
                }
            }
            Fix::DropQaInstance {
                scenario_id,
                question_id,
            } => {
                if let Some(qa) = qa.as_mut() {
                    qa.retain(|i| {
                        !(&i.scenario_id == scenario_id && i.question_id == *question_id)
                    });
                }
            }
        }
    }
    Corpus::new(policies, scenarios, qa)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub yes: usize,
    pub no: usize,
    pub nei: usize,
}

impl Histogram {
    pub fn add(&mut self, v: TriValue) {
        match v {
            TriValue::Yes => self.yes += 1,
            TriValue::No => self.no += 1,
            TriValue::Nei => self.nei += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.yes + self.no + self.nei
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub policy_count: usize,
    pub scenario_count: usize,
    /// All QA instances, including `nei` answers.
    pub qa_count: usize,
    /// QA instances whose answer is `yes` or `no`.
    pub qa_count_definite: usize,
    /// Mean question-set size over policies with at least one scenario.
    pub avg_qa_per_policy: f64,
    pub question_total: usize,
    pub policies_with_scenarios: usize,
    pub label_histogram: Histogram,
    pub unlabeled_scenarios: usize,
    pub answer_histogram: Histogram,
}

impl CorpusStats {
    pub fn avg_qa_per_policy_display(&self) -> String {
        format!("{:.2}", self.avg_qa_per_policy)
    }
}

pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats, CorpusError> {
    if corpus.policies().is_empty() && corpus.scenarios().is_empty() {
        return Err(CorpusError::Empty);
    }
    let with_scenarios: HashSet<&str> = corpus
        .scenarios()
        .iter()
        .map(|s| s.policy_id.as_str())
        .collect();
    let mut question_total = 0;
    let mut policies_with_scenarios = 0;
    let mut counted = HashSet::new();
    for p in corpus.policies() {
        if with_scenarios.contains(p.id.as_str()) && counted.insert(p.id.as_str()) {
            policies_with_scenarios += 1;
            question_total += p.question_ids().collect::<HashSet<_>>().len();
        }
    }
    let mut label_histogram = Histogram::default();
    let mut unlabeled = 0;
    for s in corpus.scenarios() {
        match s.gold_label {
            Some(l) => label_histogram.add(l),
            None => unlabeled += 1,
        }
    }
    let mut answer_histogram = Histogram::default();
    for qa in corpus.qa_instances() {
        answer_histogram.add(qa.answer);
    }
    Ok(CorpusStats {
        policy_count: corpus.policies().len(),
        scenario_count: corpus.scenarios().len(),
        qa_count: answer_histogram.total(),
        qa_count_definite: answer_histogram.yes + answer_histogram.no,
        avg_qa_per_policy: if policies_with_scenarios == 0 {
            0.0
        } else {
            question_total as f64 / policies_with_scenarios as f64
        },
        question_total,
        policies_with_scenarios,
        label_histogram,
        unlabeled_scenarios: unlabeled,
        answer_histogram,
    })
}
