use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Expr, ExprTree, QuestionId};
use crate::TriValue;

/// Upper bound on the number of unanswered questions `resolve_partial` will
/// enumerate (3^12 completions).
pub const MAX_ENUMERATED_QUESTIONS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("question {0} is not answered")]
    MissingVariable(QuestionId),
    #[error("question {0} does not occur in the tree")]
    UnknownQuestion(QuestionId),
    #[error("{0} unanswered questions exceed the enumeration limit of {MAX_ENUMERATED_QUESTIONS}")]
    TooManyUnanswered(usize),
}

/// Answers keyed by question id. A missing key means "not yet answered",
/// which is different from an explicit `Nei` answer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(BTreeMap<QuestionId, TriValue>);

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, q: QuestionId, value: TriValue) -> Option<TriValue> {
        self.0.insert(q, value)
    }

    pub fn with(mut self, q: u32, value: TriValue) -> Self {
        self.0.insert(QuestionId(q), value);
        self
    }

    pub fn get(&self, q: QuestionId) -> Option<TriValue> {
        self.0.get(&q).copied()
    }

    pub fn remove(&mut self, q: QuestionId) -> Option<TriValue> {
        self.0.remove(&q)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (QuestionId, TriValue)> + '_ {
        self.0.iter().map(|(q, v)| (*q, *v))
    }

    /// True when every variable of `tree` has an answer.
    pub fn is_total_for(&self, tree: &ExprTree) -> bool {
        tree.questions().iter().all(|q| self.0.contains_key(q))
    }
}

impl FromIterator<(QuestionId, TriValue)> for Assignment {
    fn from_iter<I: IntoIterator<Item = (QuestionId, TriValue)>>(iter: I) -> Self {
        Assignment(iter.into_iter().collect())
    }
}

/// Outcome of analysing a partial assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Resolution {
    /// Every completion yields the same label.
    Resolved { label: TriValue },
    /// `possible` holds at least two labels; `relevant` lists, in tree order,
    /// the unanswered questions whose answer can still change the label.
    Unresolved {
        possible: BTreeSet<TriValue>,
        relevant: Vec<QuestionId>,
    },
}

impl Resolution {
    pub fn label(&self) -> Option<TriValue> {
        match self {
            Resolution::Resolved { label } => Some(*label),
            Resolution::Unresolved { .. } => None,
        }
    }

    pub fn is_resolved(&self) -> bool {
        matches!(self, Resolution::Resolved { .. })
    }

    pub fn relevant(&self) -> &[QuestionId] {
        match self {
            Resolution::Resolved { .. } => &[],
            Resolution::Unresolved { relevant, .. } => relevant,
        }
    }
}

/// Evaluates `tree` under a total assignment with strong Kleene semantics.
pub fn evaluate(tree: &ExprTree, answers: &Assignment) -> Result<TriValue, EvalError> {
    if let Some(q) = tree.questions().iter().find(|q| answers.get(**q).is_none()) {
        return Err(EvalError::MissingVariable(*q));
    }
    Ok(tree
        .root()
        .eval_with(&|q| answers.get(q))
        .expect("all variables answered"))
}

/// Enumerates every completion of the unanswered variables and reports
/// whether the label is already determined, and which questions still matter.
pub fn resolve_partial(tree: &ExprTree, answers: &Assignment) -> Result<Resolution, EvalError> {
    if let Some((q, _)) = answers.iter().find(|(q, _)| !tree.contains(*q)) {
        return Err(EvalError::UnknownQuestion(q));
    }
    let compiled = tree.compile();
    let fixed: Vec<Option<TriValue>> = tree.questions().iter().map(|q| answers.get(*q)).collect();
    let free = fixed.iter().filter(|v| v.is_none()).count();
    if free > MAX_ENUMERATED_QUESTIONS {
        return Err(EvalError::TooManyUnanswered(free));
    }
    let analysis = compiled.analyze(&fixed);
    Ok(analysis.to_resolution(tree.questions()))
}

#[derive(Debug, Clone)]
enum Node {
    Var(usize),
    Not(Box<Node>),
    And(Vec<Node>),
    Or(Vec<Node>),
}

impl Node {
    fn eval(&self, values: &[TriValue]) -> TriValue {
        match self {
            Node::Var(i) => values[*i],
            Node::Not(c) => c.eval(values).negate(),
            Node::And(cs) => {
                let mut acc = TriValue::Yes;
                for c in cs {
                    acc = acc.and(c.eval(values));
                    if acc == TriValue::No {
                        break;
                    }
                }
                acc
            }
            Node::Or(cs) => {
                let mut acc = TriValue::No;
                for c in cs {
                    acc = acc.or(c.eval(values));
                    if acc == TriValue::Yes {
                        break;
                    }
                }
                acc
            }
        }
    }
}

/// A tree with variables replaced by positions in [`ExprTree::questions`],
/// for repeated evaluation over dense value slices.
#[derive(Debug, Clone)]
pub struct CompiledTree {
    root: Node,
    arity: usize,
}

/// Result of enumerating completions of a partially fixed value vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Analysis {
    /// Bit `v.index()` set when label `v` is reachable.
    pub possible: u8,
    /// Relevant variable positions, ascending.
    pub relevant: Vec<usize>,
}

impl Analysis {
    pub fn resolved(&self) -> Option<TriValue> {
        if self.possible.count_ones() == 1 {
            TriValue::from_index(self.possible.trailing_zeros() as usize)
        } else {
            None
        }
    }

    pub fn to_resolution(&self, questions: &[QuestionId]) -> Resolution {
        match self.resolved() {
            Some(label) => Resolution::Resolved { label },
            None => Resolution::Unresolved {
                possible: TriValue::ALL
                    .into_iter()
                    .filter(|v| self.possible & (1 << v.index()) != 0)
                    .collect(),
                relevant: self.relevant.iter().map(|&i| questions[i]).collect(),
            },
        }
    }
}

impl CompiledTree {
    pub fn new(tree: &ExprTree) -> Self {
        fn lower(e: &Expr, vars: &[QuestionId]) -> Node {
            match e {
                Expr::Var(q) => Node::Var(vars.iter().position(|v| v == q).expect("collected")),
                Expr::Not(c) => Node::Not(Box::new(lower(c, vars))),
                Expr::And(cs) => Node::And(cs.iter().map(|c| lower(c, vars)).collect()),
                Expr::Or(cs) => Node::Or(cs.iter().map(|c| lower(c, vars)).collect()),
            }
        }
        CompiledTree {
            root: lower(tree.root(), tree.questions()),
            arity: tree.questions().len(),
        }
    }

    /// Number of variables; value slices are indexed by position.
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn eval(&self, values: &[TriValue]) -> TriValue {
        debug_assert_eq!(values.len(), self.arity);
        self.root.eval(values)
    }

    /// Full truth table in mixed-radix order: entry `sum(values[i].index() * 3^i)`.
    pub fn truth_table(&self) -> Vec<TriValue> {
        let size = 3usize.pow(self.arity as u32);
        let mut values = vec![TriValue::Yes; self.arity];
        let mut table = Vec::with_capacity(size);
        for _ in 0..size {
            table.push(self.eval(&values));
            increment(&mut values);
        }
        table
    }

    pub fn analyze(&self, fixed: &[Option<TriValue>]) -> Analysis {
        analyze_with(fixed, |values, _| self.eval(values))
    }
}

fn increment(values: &mut [TriValue]) {
    for v in values.iter_mut() {
        let next = v.index() + 1;
        if next < 3 {
            *v = TriValue::from_index(next).unwrap();
            return;
        }
        *v = TriValue::Yes;
    }
}

/// Enumerates completions of `fixed`, calling `label_of(values, table_index)`
/// for each one. `table_index` addresses a [`CompiledTree::truth_table`].
pub fn analyze_with<F>(fixed: &[Option<TriValue>], mut label_of: F) -> Analysis
where
    F: FnMut(&[TriValue], usize) -> TriValue,
{
    let free: Vec<usize> = (0..fixed.len()).filter(|&i| fixed[i].is_none()).collect();
    let mut values: Vec<TriValue> = fixed.iter().map(|v| v.unwrap_or(TriValue::Yes)).collect();
    // only meaningful for trees small enough to tabulate; wraps harmlessly otherwise
    let strides: Vec<usize> = (0..fixed.len())
        .map(|i| 3usize.wrapping_pow(i as u32))
        .collect();
    let mut index: usize = values.iter().zip(&strides).fold(0usize, |acc, (v, s)| {
        acc.wrapping_add(v.index().wrapping_mul(*s))
    });

    let count = 3usize.pow(free.len() as u32);
    let mut labels = Vec::with_capacity(count);
    let mut possible = 0u8;
    for step in 0..count {
        let label = label_of(&values, index);
        possible |= 1 << label.index();
        labels.push(label);
        if step + 1 == count {
            break;
        }
        for &slot in &free {
            let cur = values[slot].index();
            if cur < 2 {
                values[slot] = TriValue::from_index(cur + 1).unwrap();
                index = index.wrapping_add(strides[slot]);
                break;
            }
            values[slot] = TriValue::Yes;
            index = index.wrapping_sub(strides[slot].wrapping_mul(2));
        }
    }

    let mut relevant = Vec::new();
    if possible.count_ones() > 1 {
        for (digit, &slot) in free.iter().enumerate() {
            let stride = 3usize.pow(digit as u32);
            let differs = (0..count)
                .filter(|i| (i / stride).is_multiple_of(3))
                .any(|i| labels[i] != labels[i + stride] || labels[i] != labels[i + 2 * stride]);
            if differs {
                relevant.push(slot);
            }
        }
    }
    Analysis { possible, relevant }
}
