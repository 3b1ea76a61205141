//! Oracle selection and evaluation runs, shared by `pcd eval` and
//! `POST /evaluate`.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use pcd_core::corpus::Corpus;
use pcd_core::evaluation::{build_report, run_pcd, EvalReport, Mode, RunMetadata, RunOptions};
use pcd_core::oracles::{
    AnswerProvider, ConfusionSpec, FailurePolicy, GoldOracle, Incident, NoisyOracle, RemoteConfig,
    RemoteOracle,
};

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    #[default]
    Gold,
    Noisy,
    Remote,
}

/// Everything needed to run one evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRequest {
    #[serde(default)]
    pub oracle: OracleKind,
    #[serde(default)]
    pub mode: Mode,
    /// Confusion matrix for the noisy oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionSpec>,
    /// Overrides the seed inside `confusion`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retries: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_failure: Option<FailurePolicy>,
    #[serde(default)]
    pub workers: usize,
    /// Reference values copied into the report metadata.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reference: BTreeMap<String, f64>,
}

pub enum BuiltOracle {
    Gold(GoldOracle),
    Noisy(NoisyOracle),
    Remote(RemoteOracle),
}

impl BuiltOracle {
    pub fn provider(&self) -> &dyn AnswerProvider {
        match self {
            BuiltOracle::Gold(o) => o,
            BuiltOracle::Noisy(o) => o,
            BuiltOracle::Remote(o) => o,
        }
    }

    pub fn incidents(&self) -> Vec<Incident> {
        match self {
            BuiltOracle::Remote(o) => o.incidents(),
            _ => Vec::new(),
        }
    }
}

impl EvaluateRequest {
    fn effective_seed(&self) -> Option<u64> {
        match self.oracle {
            OracleKind::Noisy => self.seed.or(self.confusion.as_ref().map(|c| c.seed)),
            _ => None,
        }
    }

    /// Builds the oracle. Configuration errors surface here, before any
    /// question is asked.
    pub fn build_oracle(&self, corpus: &Corpus) -> Result<BuiltOracle, ApiError> {
        match self.oracle {
            OracleKind::Gold => Ok(BuiltOracle::Gold(GoldOracle::from_corpus(corpus))),
            OracleKind::Noisy => {
                let mut spec = self.confusion.clone().ok_or_else(|| {
                    ApiError::bad_request("the noisy oracle needs a confusion matrix")
                })?;
                if let Some(seed) = self.seed {
                    spec.seed = seed;
                }
                Ok(BuiltOracle::Noisy(NoisyOracle::new(
                    GoldOracle::from_corpus(corpus),
                    spec,
                )?))
            }
            OracleKind::Remote => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| ApiError::bad_request("the remote oracle needs an endpoint"))?;
                let mut config = RemoteConfig::new(endpoint);
                if let Some(ms) = self.timeout_ms {
                    config.timeout = Duration::from_millis(ms);
                }
                if let Some(r) = self.retries {
                    config.retries = r;
                }
                if let Some(p) = self.on_failure {
                    config.failure_policy = p;
                }
                Ok(BuiltOracle::Remote(RemoteOracle::new(config)))
            }
        }
    }

    /// Runs the evaluation synchronously with an already built oracle.
    pub fn run_with(&self, corpus: &Corpus, oracle: &BuiltOracle) -> Result<EvalReport, ApiError> {
        let provider = oracle.provider();
        let mut metadata = RunMetadata::new(provider.info(), self.mode, self.effective_seed());
        metadata.reference = self.reference.clone();
        let records = run_pcd(
            corpus,
            provider,
            RunOptions {
                mode: self.mode,
                workers: self.workers,
            },
        )?;
        metadata.finish();
        Ok(build_report(corpus, records, metadata))
    }

    pub fn run(&self, corpus: &Corpus) -> Result<EvalReport, ApiError> {
        let oracle = self.build_oracle(corpus)?;
        self.run_with(corpus, &oracle)
    }
}
