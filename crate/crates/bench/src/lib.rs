//! Workload builders shared by the benchmarks.

use pcd_core::corpus::{Corpus, Policy, Question, Scenario};
use pcd_core::{evaluate, parse_tree, ExprTree, QuestionId, TriValue};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(Q0 OR Q1 ...) AND (Qm OR ...) AND ...` over `k` questions in groups of three.
pub fn cnf_tree(k: u32) -> ExprTree {
    let groups: Vec<String> = (0..k)
        .collect::<Vec<_>>()
        .chunks(3)
        .map(|c| {
            format!(
                "({})",
                c.iter()
                    .map(|q| format!("Q{q}"))
                    .collect::<Vec<_>>()
                    .join(" OR ")
            )
        })
        .collect();
    parse_tree(&groups.join(" AND ")).expect("generated tree parses")
}

pub fn random_answers(rng: &mut impl Rng, k: u32) -> Vec<(QuestionId, TriValue)> {
    (0..k)
        .map(|q| (QuestionId(q), TriValue::ALL[rng.random_range(0..3)]))
        .collect()
}

/// `policies` policies of `k` questions, each with `per_policy` scenarios
/// whose gold labels follow from random gold answers.
pub fn corpus(policies: usize, per_policy: usize, k: u32, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = cnf_tree(k);
    let (mut ps, mut ss) = (Vec::new(), Vec::new());
    for p in 0..policies {
        let id = format!("p{p}");
        ps.push(Policy {
            id: id.clone(),
            text: String::new(),
            source_url: None,
            questions: tree
                .questions()
                .iter()
                .map(|q| Question {
                    id: *q,
                    text: format!("{q}?"),
                })
                .collect(),
            tree: Some(tree.clone()),
            extra: Default::default(),
        });
        for s in 0..per_policy {
            let answers = random_answers(&mut rng, k);
            let label =
                evaluate(&tree, &answers.iter().copied().collect()).expect("complete answers");
            ss.push(Scenario {
                id: format!("{id}-s{s}"),
                policy_id: id.clone(),
                text: String::new(),
                gold_label: Some(label),
                gold_answers: Some(answers.into_iter().collect()),
                extra: Default::default(),
            });
        }
    }
    Corpus::new(ps, ss, None)
}
