//! Policy compliance detection by decomposition.
//!
//! A policy is an expression tree over Yes/No/NEI questions. This crate parses
//! and evaluates such trees under total or partial answers, loads and
//! validates compliance corpora, converts ShARC-style conversations into
//! compliance data, provides answer oracles, computes evaluation metrics, and
//! runs guided interviews.

pub mod corpus;
pub mod evaluation;
pub mod interview;
pub mod logic;
pub mod oracles;
pub mod sharc;
mod tri;

pub use logic::{
    evaluate, parse_tree, resolve_partial, serialize_tree, tree_complexity, tree_questions,
    Assignment, EvalError, Expr, ExprTree, ParseError, QuestionId, Resolution,
};
pub use tri::{ParseTriValueError, TriValue};
