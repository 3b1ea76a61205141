//! Hand-derived conversion of `fixtures/sharc/utterances.jsonl`.

use std::path::PathBuf;

use pcd_core::TriValue::{self, *};

pub fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/sharc/utterances.jsonl")
}

/// Follow-up questions per policy, in id order.
pub const QUESTIONS: &[(&str, &[&str])] = &[
    (
        "housing",
        &[
            "Do you pay rent?",
            "Are you over 65?",
            "Do you receive a disability allowance?",
        ],
    ),
    ("travel", &["Is the journey over 10 miles?"]),
];

/// (scenario, label, answers per policy question). u06 has an empty
/// scenario and u08 ends in an irrelevance marker, so neither appears.
pub const SCENARIOS: &[(&str, TriValue, &[TriValue])] = &[
    // yes/no with empty history keeps the answer
    ("u01", Yes, &[Nei, Nei, Nei]),
    ("u02", No, &[Nei, Nei, Nei]),
    // a follow-up answer gives nei; its answer comes from the continuation u04
    ("u03", Nei, &[No, Nei, Nei]),
    ("u04", Nei, &[No, Yes, Nei]),
    // any history gives nei even when the final answer is yes or no
    ("u05", Nei, &[No, Yes, Nei]),
    ("u07", Nei, &[Nei, No, Nei]),
    ("u09", Nei, &[Nei, Nei, Yes]),
    ("u10", Yes, &[Nei]),
    // no continuation: the follow-up stays unanswered
    ("u11", Nei, &[Nei]),
    ("u12", No, &[Nei]),
];

pub const SKIPPED_EMPTY: usize = 1;
pub const SKIPPED_TERMINAL: usize = 1;
pub const QA_FROM_CONVERSATION: usize = 7;
pub const FOLLOW_UPS_RECOVERED: usize = 2;
pub const FOLLOW_UPS_UNRECOVERED: usize = 1;
