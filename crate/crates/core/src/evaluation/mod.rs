//! End-to-end compliance prediction (oracle answers combined by the policy
//! tree) and the metric suite over its output.

mod agreement;
pub mod metrics;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Policy, Scenario};
use crate::logic::{
    analyze_with, Analysis, CompiledTree, ExprTree, QuestionId, MAX_ENUMERATED_QUESTIONS,
};
use crate::oracles::{AnswerProvider, OracleError, ProviderInfo, Query};
use crate::TriValue;

pub use agreement::{agreement_study, AgreementError, AgreementReport, EntailmentRating};
pub use metrics::{
    cohen_kappa, kendall_tau, macro_accuracy, per_class_recall, Kappa, KendallTau, MetricError,
    PerLabel, TauOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mode {
    /// Ask every question, then evaluate the tree.
    #[default]
    #[serde(rename = "all")]
    AllQuestions,
    /// Ask relevant questions in tree order and stop once the label is determined.
    #[serde(rename = "short-circuit")]
    ShortCircuit,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" | "all-questions" => Ok(Mode::AllQuestions),
            "short-circuit" => Ok(Mode::ShortCircuit),
            other => Err(format!(
                "unknown mode {other:?}: expected all or short-circuit"
            )),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::AllQuestions => "all",
            Mode::ShortCircuit => "short-circuit",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PcdError {
    #[error("policy {0:?} has no expression tree")]
    PolicyWithoutTree(String),
    #[error("scenario {0:?} references unknown policy {1:?}")]
    UnknownPolicy(String, String),
    #[error("question {question_id} of policy {policy_id:?} has no text")]
    UnknownQuestion {
        policy_id: String,
        question_id: QuestionId,
    },
    #[error("scenario {scenario_id:?}: {source}")]
    Provider {
        scenario_id: String,
        source: OracleError,
    },
    #[error("policy {0:?} has {1} questions, more than can be enumerated")]
    TreeTooLarge(String, usize),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: QuestionId,
    /// `None` when the question was never asked (short-circuit mode).
    pub predicted: Option<TriValue>,
    pub gold: Option<TriValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scenario_id: String,
    pub policy_id: String,
    pub predicted_label: TriValue,
    pub gold_label: Option<TriValue>,
    pub answers: Vec<QuestionRecord>,
    /// An inclusion-minimal subset of the asked questions whose answers alone
    /// determine the predicted label.
    pub resolved_by: Vec<QuestionId>,
}

impl PredictionRecord {
    pub fn asked(&self) -> usize {
        self.answers
            .iter()
            .filter(|a| a.predicted.is_some())
            .count()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub mode: Mode,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            mode: Mode::AllQuestions,
            workers: 0,
        }
    }
}

fn gold_answers(corpus: &Corpus) -> HashMap<(String, QuestionId), TriValue> {
    corpus
        .qa_instances()
        .into_iter()
        .map(|qa| ((qa.scenario_id, qa.question_id), qa.answer))
        .collect()
}

/// A compiled tree, with its truth table when partial assignments will be
/// analyzed often enough to pay for tabulating it.
struct Prepared {
    compiled: CompiledTree,
    table: Option<Vec<TriValue>>,
}

impl Prepared {
    fn new(tree: &ExprTree, mode: Mode) -> Self {
        let compiled = tree.compile();
        let table = (mode == Mode::ShortCircuit).then(|| compiled.truth_table());
        Prepared { compiled, table }
    }

    fn analyze(&self, values: &[Option<TriValue>]) -> Analysis {
        match &self.table {
            Some(t) => analyze_with(values, |_, i| t[i]),
            None => self.compiled.analyze(values),
        }
    }
}

/// Greedy backward elimination: drop each answer (tree order) whose removal
/// still leaves the label determined.
fn minimal_support(
    prepared: &Prepared,
    values: &[Option<TriValue>],
    label: TriValue,
) -> Vec<usize> {
    let mut kept = values.to_vec();
    for i in 0..kept.len() {
        if kept[i].is_none() {
            continue;
        }
        let saved = kept[i].take();
        if prepared.analyze(&kept).resolved() != Some(label) {
            kept[i] = saved;
        }
    }
    (0..kept.len()).filter(|&i| kept[i].is_some()).collect()
}

fn predict_one(
    policy: &Policy,
    tree: &ExprTree,
    prepared: &Prepared,
    scenario: &Scenario,
    provider: &dyn AnswerProvider,
    mode: Mode,
    gold: &HashMap<(String, QuestionId), TriValue>,
) -> Result<PredictionRecord, PcdError> {
    let questions = tree.questions();
    let mut values: Vec<Option<TriValue>> = vec![None; questions.len()];
    let mut confidence: Vec<Option<f64>> = vec![None; questions.len()];

    let ask = |i: usize| -> Result<(TriValue, Option<f64>), PcdError> {
        let q = questions[i];
        let text = policy.question(q).map(|x| x.text.as_str()).ok_or_else(|| {
            PcdError::UnknownQuestion {
                policy_id: policy.id.clone(),
                question_id: q,
            }
        })?;
        let a = provider
            .answer(&Query {
                scenario_text: &scenario.text,
                question_text: text,
                scenario_id: Some(&scenario.id),
                question_id: Some(q),
            })
            .map_err(|source| PcdError::Provider {
                scenario_id: scenario.id.clone(),
                source,
            })?;
        Ok((a.value, a.confidence))
    };

    let label = match mode {
        Mode::AllQuestions => {
            for i in 0..questions.len() {
                let (v, c) = ask(i)?;
                values[i] = Some(v);
                confidence[i] = c;
            }
            let full: Vec<TriValue> = values.iter().map(|v| v.unwrap()).collect();
            prepared.compiled.eval(&full)
        }
        Mode::ShortCircuit => loop {
            let analysis = prepared.analyze(&values);
            if let Some(label) = analysis.resolved() {
                break label;
            }
            let next = analysis.relevant[0];
            let (v, c) = ask(next)?;
            values[next] = Some(v);
            confidence[next] = c;
        },
    };

    let support = minimal_support(prepared, &values, label);
    Ok(PredictionRecord {
        scenario_id: scenario.id.clone(),
        policy_id: policy.id.clone(),
        predicted_label: label,
        gold_label: scenario.gold_label,
        answers: questions
            .iter()
            .enumerate()
            .map(|(i, q)| QuestionRecord {
                question_id: *q,
                predicted: values[i],
                gold: gold.get(&(scenario.id.clone(), *q)).copied(),
                confidence: confidence[i],
            })
            .collect(),
        resolved_by: support.into_iter().map(|i| questions[i]).collect(),
    })
}

/// Predicts a label for every scenario of the corpus. Output order follows
/// the corpus scenario order regardless of worker count.
pub fn run_pcd(
    corpus: &Corpus,
    provider: &dyn AnswerProvider,
    options: RunOptions,
) -> Result<Vec<PredictionRecord>, PcdError> {
    let mut compiled: HashMap<&str, (&Policy, &ExprTree, Prepared)> = HashMap::new();
    for s in corpus.scenarios() {
        if compiled.contains_key(s.policy_id.as_str()) {
            continue;
        }
        let policy = corpus
            .policy(&s.policy_id)
            .ok_or_else(|| PcdError::UnknownPolicy(s.id.clone(), s.policy_id.clone()))?;
        let tree = policy
            .tree
            .as_ref()
            .ok_or_else(|| PcdError::PolicyWithoutTree(policy.id.clone()))?;
        if tree.questions().len() > MAX_ENUMERATED_QUESTIONS {
            return Err(PcdError::TreeTooLarge(
                policy.id.clone(),
                tree.questions().len(),
            ));
        }
        compiled.insert(
            &policy.id,
            (policy, tree, Prepared::new(tree, options.mode)),
        );
    }
    let gold = gold_answers(corpus);
    let work = || {
        corpus
            .scenarios()
            .par_iter()
            .map(|s| {
                let (p, t, c) = &compiled[s.policy_id.as_str()];
                predict_one(p, t, c, s, provider, options.mode, &gold)
            })
            .collect::<Result<Vec<_>, _>>()
    };
    if options.workers == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| PcdError::Pool(e.to_string()))?
            .install(work)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub policy_id: String,
    pub scenario_count: usize,
    pub question_count: usize,
    pub macro_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAverage {
    pub value: f64,
    pub table: Vec<PolicyRow>,
    /// Policies with no gold-labelled records.
    pub excluded: Vec<String>,
}

/// Macro-accuracy per policy, then the unweighted mean across policies.
/// `policies` lists every policy that should appear (with its question
/// count); those without gold-labelled records are reported as excluded.
pub fn macro_accuracy_over_policies(
    records: &[PredictionRecord],
    policies: &[(String, usize)],
) -> Result<PolicyAverage, MetricError> {
    let mut by_policy: BTreeMap<&str, (Vec<TriValue>, Vec<TriValue>)> = BTreeMap::new();
    for r in records {
        if let Some(g) = r.gold_label {
            let e = by_policy.entry(r.policy_id.as_str()).or_default();
            e.0.push(r.predicted_label);
            e.1.push(g);
        }
    }
    let mut table = Vec::new();
    let mut excluded = Vec::new();
    for (pid, qcount) in policies {
        match by_policy.get(pid.as_str()) {
            Some((preds, golds)) => table.push(PolicyRow {
                policy_id: pid.clone(),
                scenario_count: preds.len(),
                question_count: *qcount,
                macro_accuracy: macro_accuracy(preds, golds)?,
            }),
            None => excluded.push(pid.clone()),
        }
    }
    if table.is_empty() {
        return Err(MetricError::Empty);
    }
    let value = table.iter().map(|r| r.macro_accuracy).sum::<f64>() / table.len() as f64;
    Ok(PolicyAverage {
        value,
        table,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub oracle: ProviderInfo,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: String,
    /// Externally supplied reference values, carried through for comparison only.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reference: BTreeMap<String, f64>,
}

impl RunMetadata {
    pub fn new(oracle: ProviderInfo, mode: Mode, seed: Option<u64>) -> Self {
        let now = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        RunMetadata {
            oracle,
            mode,
            seed,
            started_at: now.clone(),
            finished_at: now,
            reference: BTreeMap::new(),
        }
    }

    pub fn finish(&mut self) {
        self.finished_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: RunMetadata,
    pub scenario_count: usize,
    pub labelled_count: usize,
    pub macro_accuracy_over_scenarios: Option<f64>,
    pub macro_accuracy_over_policies: Option<f64>,
    pub per_label_accuracy: PerLabel,
    pub qa_macro_accuracy: Option<f64>,
    pub qa_per_label_accuracy: PerLabel,
    pub qa_count: usize,
    pub questions_asked: usize,
    pub questions_total: usize,
    pub per_policy: Vec<PolicyRow>,
    pub excluded_policies: Vec<String>,
    pub kendall_tau: Option<TauOutcome>,
    pub records: Vec<PredictionRecord>,
}

/// Computes every metric over `records`. Records without a gold label are
/// counted but not scored.
pub fn build_report(
    corpus: &Corpus,
    records: Vec<PredictionRecord>,
    metadata: RunMetadata,
) -> EvalReport {
    let (preds, golds): (Vec<_>, Vec<_>) = records
        .iter()
        .filter_map(|r| r.gold_label.map(|g| (r.predicted_label, g)))
        .unzip();
    let (qa_preds, qa_golds): (Vec<_>, Vec<_>) = records
        .iter()
        .flat_map(|r| r.answers.iter())
        .filter_map(|a| Some((a.predicted?, a.gold?)))
        .unzip();

    let mut seen = std::collections::HashSet::new();
    let policies: Vec<(String, usize)> = records
        .iter()
        .filter(|r| seen.insert(r.policy_id.clone()))
        .map(|r| {
            let n = corpus
                .policy(&r.policy_id)
                .and_then(|p| p.tree.as_ref())
                .map_or(r.answers.len(), |t| t.questions().len());
            (r.policy_id.clone(), n)
        })
        .collect();
    let over_policies = macro_accuracy_over_policies(&records, &policies).ok();
    let kendall = over_policies.as_ref().and_then(|avg| {
        let pairs: Vec<(f64, f64)> = avg
            .table
            .iter()
            .map(|r| (r.question_count as f64, r.macro_accuracy))
            .collect();
        kendall_tau(&pairs).ok()
    });

    EvalReport {
        metadata,
        scenario_count: records.len(),
        labelled_count: golds.len(),
        macro_accuracy_over_scenarios: macro_accuracy(&preds, &golds).ok(),
        macro_accuracy_over_policies: over_policies.as_ref().map(|a| a.value),
        per_label_accuracy: per_class_recall(&preds, &golds).unwrap_or_default(),
        qa_macro_accuracy: macro_accuracy(&qa_preds, &qa_golds).ok(),
        qa_per_label_accuracy: per_class_recall(&qa_preds, &qa_golds).unwrap_or_default(),
        qa_count: qa_golds.len(),
        questions_asked: records.iter().map(PredictionRecord::asked).sum(),
        questions_total: records.iter().map(|r| r.answers.len()).sum(),
        per_policy: over_policies
            .as_ref()
            .map(|a| a.table.clone())
            .unwrap_or_default(),
        excluded_policies: over_policies.map(|a| a.excluded).unwrap_or_default(),
        kendall_tau: kendall,
        records,
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let m = &self.metadata;
        let _ = writeln!(
            s,
            "oracle: {}  mode: {}  seed: {}",
            m.oracle.name,
            m.mode,
            m.seed.map_or("-".into(), |x| x.to_string())
        );
        let _ = writeln!(
            s,
            "scenarios: {} ({} labelled)",
            self.scenario_count, self.labelled_count
        );
        let _ = writeln!(
            s,
            "macro-accuracy (scenarios): {}",
            fmt_opt(self.macro_accuracy_over_scenarios)
        );
        let _ = writeln!(
            s,
            "macro-accuracy (policies):  {}",
            fmt_opt(self.macro_accuracy_over_policies)
        );
        let _ = writeln!(
            s,
            "per label: yes {}  no {}  nei {}",
            fmt_opt(self.per_label_accuracy.yes),
            fmt_opt(self.per_label_accuracy.no),
            fmt_opt(self.per_label_accuracy.nei)
        );
        let _ = writeln!(
            s,
            "qa macro-accuracy: {} over {} answers",
            fmt_opt(self.qa_macro_accuracy),
            self.qa_count
        );
        let _ = writeln!(
            s,
            "qa per label: yes {}  no {}  nei {}",
            fmt_opt(self.qa_per_label_accuracy.yes),
            fmt_opt(self.qa_per_label_accuracy.no),
            fmt_opt(self.qa_per_label_accuracy.nei)
        );
        let _ = writeln!(
            s,
            "questions asked: {} of {}",
            self.questions_asked, self.questions_total
        );
        match &self.kendall_tau {
            Some(TauOutcome::Value(k)) => {
                let _ = writeln!(
                    s,
                    "kendall tau-b (questions vs accuracy): {:.4} (p = {:.4})",
                    k.tau, k.p_value
                );
            }
            Some(TauOutcome::Degenerate { .. }) => {
                let _ = writeln!(s, "kendall tau-b: undefined (all values tied)");
            }
            None => {
                let _ = writeln!(s, "kendall tau-b: -");
            }
        }
        for (k, v) in &m.reference {
            let _ = writeln!(s, "reference {k}: {v}");
        }
        s
    }

    /// Per-policy scatter rows: `question_count,accuracy,scenario_count`.
    pub fn scatter_csv(&self) -> String {
        let mut s = String::from("question_count,accuracy,scenario_count\n");
        for r in &self.per_policy {
            let _ = writeln!(
                s,
                "{},{},{}",
                r.question_count, r.macro_accuracy, r.scenario_count
            );
        }
        s
    }
}
