use serde::{Deserialize, Serialize};
use serde_json::Value;

use pcd_core::corpus::CorpusError;
use pcd_core::evaluation::PcdError;
use pcd_core::interview::InterviewError;
use pcd_core::oracles::ConfusionError;
use pcd_core::sharc::SharcError;
use pcd_core::ParseError;

/// Error body shared by the HTTP API and the CLI's one-line stderr report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Box<Value>>,
    /// HTTP status; not part of the body.
    #[serde(skip)]
    pub status: u16,
}

impl ApiError {
    pub fn new(status: u16, code: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError {
            code: code.into(),
            message: message.into(),
            detail: None,
            status,
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(Box::new(detail));
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(400, "bad_request", message)
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        ApiError::new(404, code, message)
    }

    /// Single-line JSON rendering.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<InterviewError> for ApiError {
    fn from(e: InterviewError) -> Self {
        let status = match e {
            InterviewError::UnknownPolicy(_) | InterviewError::UnknownSession(_) => 404,
            InterviewError::DuplicateAnswer(_)
            | InterviewError::AlreadyResolved
            | InterviewError::Abandoned => 409,
            InterviewError::UnknownQuestion(_)
            | InterviewError::IrrelevantQuestion(_)
            | InterviewError::NoTree(_)
            | InterviewError::TooManyQuestions(_) => 422,
            InterviewError::Store(_) => 500,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<ParseError> for ApiError {
    fn from(e: ParseError) -> Self {
        let err = ApiError::new(400, "syntax_error", e.to_string());
        match e.position() {
            Some(p) => err.with_detail(serde_json::json!({ "position": p })),
            None => err,
        }
    }
}

impl From<CorpusError> for ApiError {
    fn from(e: CorpusError) -> Self {
        let code = match &e {
            CorpusError::Io { .. } => "io_error",
            CorpusError::Malformed { .. } => "malformed_corpus",
            CorpusError::Invalid(_) => "invalid_corpus",
            CorpusError::Empty => "empty_corpus",
        };
        let err = ApiError::new(422, code, e.to_string());
        match e {
            CorpusError::Invalid(v) => {
                err.with_detail(serde_json::to_value(v).expect("violations serialize"))
            }
            _ => err,
        }
    }
}

impl From<SharcError> for ApiError {
    fn from(e: SharcError) -> Self {
        let code = match &e {
            SharcError::Io { .. } => "io_error",
            SharcError::Malformed { .. } => "malformed_input",
            SharcError::Conflicts(..) => "answer_conflicts",
        };
        ApiError::new(422, code, e.to_string())
    }
}

impl From<PcdError> for ApiError {
    fn from(e: PcdError) -> Self {
        let code = match &e {
            PcdError::PolicyWithoutTree(_) => "policy_without_tree",
            PcdError::UnknownPolicy(..) => "unknown_policy",
            PcdError::UnknownQuestion { .. } => "unknown_question",
            PcdError::Provider { .. } => "oracle_failure",
            PcdError::TreeTooLarge(..) => "tree_too_large",
            PcdError::Pool(_) => "internal",
        };
        ApiError::new(500, code, e.to_string())
    }
}

impl From<ConfusionError> for ApiError {
    fn from(e: ConfusionError) -> Self {
        ApiError::new(400, "invalid_confusion", e.to_string())
    }
}
