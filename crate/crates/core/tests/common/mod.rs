//! Test-side reference implementations: an exhaustive tree generator and a
//! naive three-valued evaluator written independently of the library, using
//! the ordering no < nei < yes (conjunction = min, disjunction = max,
//! negation = reflection).

#![allow(dead_code)]

pub mod sharc;

use pcd_core::corpus::{Corpus, Policy, Question, Scenario};
use pcd_core::TriValue;
use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum T {
    V(u32),
    Not(Box<T>),
    And(Vec<T>),
    Or(Vec<T>),
}

/// 0 = no, 1 = nei, 2 = yes.
pub fn rank(v: TriValue) -> u8 {
    match v {
        TriValue::No => 0,
        TriValue::Nei => 1,
        TriValue::Yes => 2,
    }
}

pub fn unrank(r: u8) -> TriValue {
    match r {
        0 => TriValue::No,
        1 => TriValue::Nei,
        _ => TriValue::Yes,
    }
}

pub fn naive_eval(t: &T, env: &[TriValue]) -> TriValue {
    fn go(t: &T, env: &[TriValue]) -> u8 {
        match t {
            T::V(i) => rank(env[*i as usize]),
            T::Not(c) => 2 - go(c, env),
            T::And(cs) => cs.iter().map(|c| go(c, env)).min().unwrap(),
            T::Or(cs) => cs.iter().map(|c| go(c, env)).max().unwrap(),
        }
    }
    unrank(go(t, env))
}

/// Fully parenthesized rendering in the tree grammar.
pub fn render(t: &T) -> String {
    match t {
        T::V(i) => format!("Q{i}"),
        T::Not(c) => format!("NOT ({})", render(c)),
        T::And(cs) => cs
            .iter()
            .map(|c| format!("({})", render(c)))
            .collect::<Vec<_>>()
            .join(" AND "),
        T::Or(cs) => cs
            .iter()
            .map(|c| format!("({})", render(c)))
            .collect::<Vec<_>>()
            .join(" OR "),
    }
}

pub fn max_var(t: &T) -> u32 {
    match t {
        T::V(i) => *i,
        T::Not(c) => max_var(c),
        T::And(cs) | T::Or(cs) => cs.iter().map(max_var).max().unwrap(),
    }
}

/// Ordered compositions of `n` into at least two positive parts.
fn compositions(n: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n == 0 {
            if prefix.len() >= 2 {
                out.push(prefix.clone());
            }
            return;
        }
        for first in 1..=n {
            prefix.push(first);
            go(n - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(n, &mut Vec::new(), &mut out);
    out
}

/// Unlabelled shapes with exactly `leaves` leaves (all `V(0)`) and at most
/// `depth` levels of AND/OR; every node may additionally be negated once.
/// Children never repeat their parent's operator un-negated, so shapes are
/// already flat.
fn shapes(leaves: usize, depth: usize) -> Vec<T> {
    let mut out = Vec::new();
    if leaves == 1 {
        out.push(T::V(0));
        out.push(T::Not(Box::new(T::V(0))));
        return out;
    }
    if depth == 0 {
        return out;
    }
    for conj in [true, false] {
        for parts in compositions(leaves) {
            let options: Vec<Vec<T>> = parts
                .iter()
                .map(|&p| {
                    shapes(p, depth - 1)
                        .into_iter()
                        .filter(|c| !matches!((c, conj), (T::And(_), true) | (T::Or(_), false)))
                        .collect()
                })
                .collect();
            if options.iter().any(|o| o.is_empty()) {
                continue;
            }
            let mut idx = vec![0usize; parts.len()];
            loop {
                let children: Vec<T> = idx
                    .iter()
                    .zip(&options)
                    .map(|(&i, o)| o[i].clone())
                    .collect();
                let node = if conj {
                    T::And(children)
                } else {
                    T::Or(children)
                };
                out.push(T::Not(Box::new(node.clone())));
                out.push(node);
                let mut k = 0;
                loop {
                    if k == idx.len() {
                        break;
                    }
                    idx[k] += 1;
                    if idx[k] < options[k].len() {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == idx.len() {
                    break;
                }
            }
        }
    }
    out
}

/// Restricted growth strings of length `n` with at most `k` distinct
/// values: every way to label `n` leaves with questions up to renaming.
fn labelings(n: usize, k: u32) -> Vec<Vec<u32>> {
    fn go(n: usize, k: u32, cur: &mut Vec<u32>, next: u32, out: &mut Vec<Vec<u32>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for v in 0..=next.min(k - 1) {
            cur.push(v);
            go(n, k, cur, if v == next { next + 1 } else { next }, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(n, k, &mut Vec::new(), 0, &mut out);
    out
}

fn relabel(t: &T, labels: &[u32], next: &mut usize) -> T {
    match t {
        T::V(_) => {
            let v = T::V(labels[*next]);
            *next += 1;
            v
        }
        T::Not(c) => T::Not(Box::new(relabel(c, labels, next))),
        T::And(cs) => T::And(cs.iter().map(|c| relabel(c, labels, next)).collect()),
        T::Or(cs) => T::Or(cs.iter().map(|c| relabel(c, labels, next)).collect()),
    }
}

/// Every tree with at most `max_leaves` leaves, at most `max_depth`
/// operator levels and at most `max_questions` distinct questions.
pub fn all_trees(max_leaves: usize, max_depth: usize, max_questions: u32) -> Vec<T> {
    let mut out = Vec::new();
    for n in 1..=max_leaves {
        let labels = labelings(n, max_questions);
        for shape in shapes(n, max_depth) {
            for l in &labels {
                out.push(relabel(&shape, l, &mut 0));
            }
        }
    }
    out
}

/// All 3^k total assignments, first variable varying fastest.
pub fn all_assignments(k: usize) -> Vec<Vec<TriValue>> {
    let total = 3usize.pow(k as u32);
    (0..total)
        .map(|mut i| {
            (0..k)
                .map(|_| {
                    let v = TriValue::ALL[i % 3];
                    i /= 3;
                    v
                })
                .collect()
        })
        .collect()
}

/// Random tree using each of Q0..Q{k-1} exactly once.
pub fn random_tree<R: Rng>(rng: &mut R, k: u32) -> T {
    let mut vars: Vec<u32> = (0..k).collect();
    vars.shuffle(rng);
    fn build<R: Rng>(rng: &mut R, vars: &[u32], conj: bool) -> T {
        let node = if vars.len() == 1 {
            T::V(vars[0])
        } else {
            let parts = rng.random_range(2..=vars.len().min(3));
            let mut cuts: Vec<usize> = (1..vars.len()).collect();
            cuts.shuffle(rng);
            let mut cuts: Vec<usize> = cuts.into_iter().take(parts - 1).collect();
            cuts.sort();
            let mut children = Vec::new();
            let mut start = 0;
            for end in cuts.into_iter().chain([vars.len()]) {
                children.push(build(rng, &vars[start..end], !conj));
                start = end;
            }
            if conj {
                T::And(children)
            } else {
                T::Or(children)
            }
        };
        if rng.random_bool(0.15) {
            T::Not(Box::new(node))
        } else {
            node
        }
    }
    let conj = rng.random_bool(0.5);
    build(rng, &vars, conj)
}

pub fn policy_from(id: &str, t: &T) -> Policy {
    let tree = pcd_core::parse_tree(&render(t)).unwrap();
    Policy {
        id: id.to_string(),
        text: format!("policy {id}"),
        source_url: None,
        questions: tree
            .questions()
            .iter()
            .map(|q| Question {
                id: *q,
                text: format!("{id} question {q}?"),
            })
            .collect(),
        tree: Some(tree),
        extra: Default::default(),
    }
}

/// Scenario whose gold label is computed from its gold answers by the
/// naive evaluator.
pub fn scenario_from(id: &str, policy_id: &str, t: &T, answers: &[TriValue]) -> Scenario {
    let gold_answers = answers
        .iter()
        .enumerate()
        .map(|(i, v)| (pcd_core::QuestionId(i as u32), *v))
        .collect();
    Scenario {
        id: id.to_string(),
        policy_id: policy_id.to_string(),
        text: format!("scenario {id}"),
        gold_label: Some(naive_eval(t, answers)),
        gold_answers: Some(gold_answers),
        extra: Default::default(),
    }
}

/// `policies` random policies (1 to 9 questions) with
/// `scenarios_per_policy` consistent scenarios each.
pub fn synthetic_corpus<R: Rng>(
    rng: &mut R,
    policies: usize,
    scenarios_per_policy: usize,
) -> (Corpus, Vec<T>) {
    let mut ps = Vec::new();
    let mut ss = Vec::new();
    let mut trees = Vec::new();
    for p in 0..policies {
        let k = rng.random_range(1..=9);
        let t = random_tree(rng, k);
        let pid = format!("p{p}");
        ps.push(policy_from(&pid, &t));
        for s in 0..scenarios_per_policy {
            let answers: Vec<TriValue> = (0..k)
                .map(|_| TriValue::ALL[rng.random_range(0..3)])
                .collect();
            ss.push(scenario_from(&format!("{pid}-s{s}"), &pid, &t, &answers));
        }
        trees.push(t);
    }
    (Corpus::new(ps, ss, None), trees)
}
