//! Policy expression trees over three-valued question variables.
//!
//! Trees are built by [`parse_tree`] or [`ExprTree::new`], both of which
//! produce the canonical form: `And`/`Or` nodes are n-ary (arity >= 2) and
//! never have a direct child of the same operator.

mod eval;
mod parse;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use eval::{
    analyze_with, evaluate, resolve_partial, Analysis, Assignment, CompiledTree, EvalError,
    Resolution, MAX_ENUMERATED_QUESTIONS,
};
pub use parse::{parse_tree, serialize_tree, ParseError};

/// A question variable, written `Q<digits>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QuestionId(pub u32);

impl QuestionId {
    pub const fn new(n: u32) -> Self {
        QuestionId(n)
    }

    pub const fn number(self) -> u32 {
        self.0
    }
}

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid question id {0:?}: expected Q followed by digits")]
pub struct ParseQuestionIdError(pub String);

impl FromStr for QuestionId {
    type Err = ParseQuestionIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s
            .strip_prefix('Q')
            .or_else(|| s.strip_prefix('q'))
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
            .ok_or_else(|| ParseQuestionIdError(s.to_string()))?;
        digits
            .parse::<u32>()
            .map(QuestionId)
            .map_err(|_| ParseQuestionIdError(s.to_string()))
    }
}

impl Serialize for QuestionId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QuestionId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A node of an expression tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Var(QuestionId),
    Not(Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
}

impl Expr {
    pub fn var(n: u32) -> Expr {
        Expr::Var(QuestionId(n))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(child: Expr) -> Expr {
        Expr::Not(Box::new(child))
    }

    /// Builds a flattened conjunction. A single child is returned unchanged.
    ///
    /// # Panics
    /// Panics if `children` is empty.
    pub fn and(children: impl IntoIterator<Item = Expr>) -> Expr {
        Self::nary(children, true)
    }

    /// Builds a flattened disjunction. A single child is returned unchanged.
    ///
    /// # Panics
    /// Panics if `children` is empty.
    pub fn or(children: impl IntoIterator<Item = Expr>) -> Expr {
        Self::nary(children, false)
    }

    fn nary(children: impl IntoIterator<Item = Expr>, conj: bool) -> Expr {
        let mut flat = Vec::new();
        for child in children {
            match child {
                Expr::And(inner) if conj => flat.extend(inner),
                Expr::Or(inner) if !conj => flat.extend(inner),
                other => flat.push(other),
            }
        }
        assert!(!flat.is_empty(), "n-ary operator needs at least one child");
        if flat.len() == 1 {
            return flat.pop().unwrap();
        }
        if conj {
            Expr::And(flat)
        } else {
            Expr::Or(flat)
        }
    }

    /// Strong Kleene evaluation with a caller-supplied variable lookup.
    pub fn eval_with<F>(&self, lookup: &F) -> Option<crate::TriValue>
    where
        F: Fn(QuestionId) -> Option<crate::TriValue>,
    {
        use crate::TriValue;
        match self {
            Expr::Var(q) => lookup(*q),
            Expr::Not(c) => c.eval_with(lookup).map(TriValue::negate),
            Expr::And(cs) => {
                let mut acc = TriValue::Yes;
                for c in cs {
                    acc = acc.and(c.eval_with(lookup)?);
                }
                Some(acc)
            }
            Expr::Or(cs) => {
                let mut acc = TriValue::No;
                for c in cs {
                    acc = acc.or(c.eval_with(lookup)?);
                }
                Some(acc)
            }
        }
    }

    fn collect_vars(&self, out: &mut Vec<QuestionId>) {
        match self {
            Expr::Var(q) => {
                if !out.contains(q) {
                    out.push(*q);
                }
            }
            Expr::Not(c) => c.collect_vars(out),
            Expr::And(cs) | Expr::Or(cs) => cs.iter().for_each(|c| c.collect_vars(out)),
        }
    }

    fn check_canonical(&self) -> Result<(), TreeError> {
        match self {
            Expr::Var(_) => Ok(()),
            Expr::Not(c) => c.check_canonical(),
            Expr::And(cs) | Expr::Or(cs) => {
                if cs.len() < 2 {
                    return Err(TreeError::Arity(cs.len()));
                }
                let conj = matches!(self, Expr::And(_));
                for c in cs {
                    match (conj, c) {
                        (true, Expr::And(_)) | (false, Expr::Or(_)) => {
                            return Err(TreeError::NotFlattened)
                        }
                        _ => c.check_canonical()?,
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TreeError {
    #[error("AND/OR node with {0} children; at least 2 required")]
    Arity(usize),
    #[error("AND/OR node has a direct child of the same operator")]
    NotFlattened,
}

/// A validated expression tree in canonical form.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExprTree {
    root: Expr,
    questions: Vec<QuestionId>,
}

impl ExprTree {
    /// Validates that `root` is canonical. Use [`Expr::and`]/[`Expr::or`] to build
    /// flattened nodes.
    pub fn new(root: Expr) -> Result<ExprTree, TreeError> {
        root.check_canonical()?;
        let mut questions = Vec::new();
        root.collect_vars(&mut questions);
        Ok(ExprTree { root, questions })
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    /// Distinct question ids in first-occurrence order.
    pub fn questions(&self) -> &[QuestionId] {
        &self.questions
    }

    pub fn contains(&self, q: QuestionId) -> bool {
        self.questions.contains(&q)
    }

    pub fn compile(&self) -> CompiledTree {
        CompiledTree::new(self)
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_tree(self))
    }
}

impl FromStr for ExprTree {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_tree(s)
    }
}

impl Serialize for ExprTree {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&serialize_tree(self))
    }
}

impl<'de> Deserialize<'de> for ExprTree {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(deserializer)?;
        parse_tree(&s).map_err(serde::de::Error::custom)
    }
}

/// Distinct question ids in first-occurrence (left-to-right) order.
pub fn tree_questions(tree: &ExprTree) -> Vec<QuestionId> {
    tree.questions.clone()
}

/// Number of distinct questions in the tree.
pub fn tree_complexity(tree: &ExprTree) -> usize {
    tree.questions.len()
}
