use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::metrics::{cohen_kappa, Kappa, MetricError};
use crate::corpus::{Corpus, QaInstance};
use crate::logic::{evaluate, Assignment, QuestionId};
use crate::TriValue;

/// A rater's overall compliance judgement for one scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntailmentRating {
    pub scenario_id: String,
    pub label: TriValue,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgreementError {
    #[error("raters cover different items: {only_a} only in A, {only_b} only in B")]
    CoverageMismatch {
        only_a: usize,
        only_b: usize,
        missing: Vec<(String, Option<QuestionId>)>,
    },
    #[error("scenario {0:?} is not in the corpus")]
    UnknownScenario(String),
    #[error("policy of scenario {0:?} has no tree")]
    MissingTree(String),
    #[error("scenario {scenario_id:?}: rater answers do not cover question {question_id}")]
    IncompleteScenario {
        scenario_id: String,
        question_id: QuestionId,
    },
    #[error("rater gave two answers for scenario {0:?}, question {1}")]
    DuplicateRating(String, QuestionId),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub question_items: usize,
    pub scenario_items: usize,
    pub kappa_questions: Kappa,
    pub kappa_inferred_labels: Kappa,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_entailment: Option<Kappa>,
    /// Observed, not guaranteed: whether agreement on tree-inferred labels
    /// is at least the agreement on individual answers.
    pub inferred_at_least_questions: bool,
}

fn index(
    ratings: &[QaInstance],
) -> Result<BTreeMap<(String, QuestionId), TriValue>, AgreementError> {
    let mut out = BTreeMap::new();
    for r in ratings {
        if out
            .insert((r.scenario_id.clone(), r.question_id), r.answer)
            .is_some()
        {
            return Err(AgreementError::DuplicateRating(
                r.scenario_id.clone(),
                r.question_id,
            ));
        }
    }
    Ok(out)
}

/// Agreement between two raters on per-question answers, on the labels the
/// policy trees infer from those answers, and optionally on direct
/// entailment labels.
pub fn agreement_study(
    corpus: &Corpus,
    ratings_a: &[QaInstance],
    ratings_b: &[QaInstance],
    entailment: Option<(&[EntailmentRating], &[EntailmentRating])>,
) -> Result<AgreementReport, AgreementError> {
    let a = index(ratings_a)?;
    let b = index(ratings_b)?;
    let mut missing: Vec<(String, Option<QuestionId>)> = Vec::new();
    let only_a: Vec<_> = a.keys().filter(|k| !b.contains_key(*k)).collect();
    let only_b: Vec<_> = b.keys().filter(|k| !a.contains_key(*k)).collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        missing.extend(
            only_a
                .iter()
                .chain(&only_b)
                .map(|(s, q)| (s.clone(), Some(*q))),
        );
        return Err(AgreementError::CoverageMismatch {
            only_a: only_a.len(),
            only_b: only_b.len(),
            missing,
        });
    }

    let (qa_a, qa_b): (Vec<_>, Vec<_>) = a.iter().map(|(k, v)| (*v, b[k])).unzip();
    let kappa_questions = cohen_kappa(&qa_a, &qa_b)?;

    let scenarios: BTreeSet<&str> = a.keys().map(|(s, _)| s.as_str()).collect();
    let mut inferred_a = Vec::new();
    let mut inferred_b = Vec::new();
    for sid in &scenarios {
        let scenario = corpus
            .scenario(sid)
            .ok_or_else(|| AgreementError::UnknownScenario(sid.to_string()))?;
        let tree = corpus
            .policy(&scenario.policy_id)
            .and_then(|p| p.tree.as_ref())
            .ok_or_else(|| AgreementError::MissingTree(sid.to_string()))?;
        let assignment =
            |m: &BTreeMap<(String, QuestionId), TriValue>| -> Result<Assignment, AgreementError> {
                tree.questions()
                    .iter()
                    .map(|q| {
                        m.get(&(sid.to_string(), *q))
                            .map(|v| (*q, *v))
                            .ok_or_else(|| AgreementError::IncompleteScenario {
                                scenario_id: sid.to_string(),
                                question_id: *q,
                            })
                    })
                    .collect()
            };
        inferred_a.push(evaluate(tree, &assignment(&a)?).expect("total"));
        inferred_b.push(evaluate(tree, &assignment(&b)?).expect("total"));
    }
    let kappa_inferred_labels = cohen_kappa(&inferred_a, &inferred_b)?;

    let kappa_entailment = match entailment {
        None => None,
        Some((ea, eb)) => {
            let ma: BTreeMap<&str, TriValue> = ea
                .iter()
                .map(|r| (r.scenario_id.as_str(), r.label))
                .collect();
            let mb: BTreeMap<&str, TriValue> = eb
                .iter()
                .map(|r| (r.scenario_id.as_str(), r.label))
                .collect();
            let mismatch: Vec<_> = ma
                .keys()
                .filter(|k| !mb.contains_key(*k))
                .chain(mb.keys().filter(|k| !ma.contains_key(*k)))
                .map(|s| (s.to_string(), None))
                .collect();
            if !mismatch.is_empty() {
                let only_a = ma.keys().filter(|k| !mb.contains_key(*k)).count();
                return Err(AgreementError::CoverageMismatch {
                    only_a,
                    only_b: mismatch.len() - only_a,
                    missing: mismatch,
                });
            }
            let (la, lb): (Vec<_>, Vec<_>) = ma.iter().map(|(k, v)| (*v, mb[k])).unzip();
            Some(cohen_kappa(&la, &lb)?)
        }
    };

    Ok(AgreementReport {
        question_items: qa_a.len(),
        scenario_items: scenarios.len(),
        inferred_at_least_questions: kappa_inferred_labels.value >= kappa_questions.value,
        kappa_questions,
        kappa_inferred_labels,
        kappa_entailment,
    })
}
