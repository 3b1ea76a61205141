//! The three-valued answer and label domain.
//!
//! `Yes` and `No` play the roles of true and false; `Nei` ("not enough
//! information") is the unknown value of strong Kleene logic.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An answer to a question, or a compliance label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TriValue {
    Yes,
    No,
    /// Not enough information.
    Nei,
}

impl TriValue {
    /// All three values in canonical order. Index positions match [`TriValue::index`].
    pub const ALL: [TriValue; 3] = [TriValue::Yes, TriValue::No, TriValue::Nei];

    pub const fn index(self) -> usize {
        match self {
            TriValue::Yes => 0,
            TriValue::No => 1,
            TriValue::Nei => 2,
        }
    }

    pub const fn from_index(index: usize) -> Option<TriValue> {
        match index {
            0 => Some(TriValue::Yes),
            1 => Some(TriValue::No),
            2 => Some(TriValue::Nei),
            _ => None,
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            TriValue::Yes => "yes",
            TriValue::No => "no",
            TriValue::Nei => "nei",
        }
    }

    pub const fn is_definite(self) -> bool {
        !matches!(self, TriValue::Nei)
    }

    /// Kleene conjunction.
    pub const fn and(self, other: TriValue) -> TriValue {
        match (self, other) {
            (TriValue::No, _) | (_, TriValue::No) => TriValue::No,
            (TriValue::Yes, TriValue::Yes) => TriValue::Yes,
            _ => TriValue::Nei,
        }
    }

    /// Kleene disjunction.
    pub const fn or(self, other: TriValue) -> TriValue {
        match (self, other) {
            (TriValue::Yes, _) | (_, TriValue::Yes) => TriValue::Yes,
            (TriValue::No, TriValue::No) => TriValue::No,
            _ => TriValue::Nei,
        }
    }

    /// Kleene negation: swaps `Yes` and `No`, fixes `Nei`.
    pub const fn negate(self) -> TriValue {
        match self {
            TriValue::Yes => TriValue::No,
            TriValue::No => TriValue::Yes,
            TriValue::Nei => TriValue::Nei,
        }
    }
}

impl std::ops::Not for TriValue {
    type Output = TriValue;

    fn not(self) -> TriValue {
        self.negate()
    }
}

impl From<bool> for TriValue {
    fn from(b: bool) -> Self {
        if b {
            TriValue::Yes
        } else {
            TriValue::No
        }
    }
}

impl fmt::Display for TriValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid answer {0:?}: expected yes, no or nei")]
pub struct ParseTriValueError(pub String);

impl FromStr for TriValue {
    type Err = ParseTriValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("yes") {
            Ok(TriValue::Yes)
        } else if t.eq_ignore_ascii_case("no") {
            Ok(TriValue::No)
        } else if t.eq_ignore_ascii_case("nei") {
            Ok(TriValue::Nei)
        } else {
            Err(ParseTriValueError(s.to_string()))
        }
    }
}

impl Serialize for TriValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TriValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
