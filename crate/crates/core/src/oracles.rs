//! Answer providers: anything that can answer a (scenario, question) pair
//! with a [`TriValue`].

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use parking_lot::RwLock;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::logic::QuestionId;
use crate::TriValue;

/// One question about one scenario.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub scenario_text: &'a str,
    pub question_text: &'a str,
    pub scenario_id: Option<&'a str>,
    pub question_id: Option<QuestionId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub value: TriValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl From<TriValue> for Answer {
    fn from(value: TriValue) -> Self {
        Answer {
            value,
            confidence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub name: String,
    pub deterministic: bool,
    pub requires_network: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("no gold answer for scenario {scenario_id:?}, question {question_id}")]
    NoGold {
        scenario_id: String,
        question_id: QuestionId,
    },
    #[error("provider needs scenario and question ids")]
    MissingIds,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// The contract every answer source implements. Implementations must be
/// callable from several threads at once.
pub trait AnswerProvider: Send + Sync {
    fn info(&self) -> ProviderInfo;

    fn answer(&self, query: &Query<'_>) -> Result<Answer, OracleError>;
}

fn ids<'a>(query: &Query<'a>) -> Result<(&'a str, QuestionId), OracleError> {
    match (query.scenario_id, query.question_id) {
        (Some(s), Some(q)) => Ok((s, q)),
        _ => Err(OracleError::MissingIds),
    }
}

/// Returns the annotated answer for each (scenario, question).
#[derive(Debug, Clone, Default)]
pub struct GoldOracle {
    answers: HashMap<(String, QuestionId), TriValue>,
}

impl GoldOracle {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let answers = corpus
            .qa_instances()
            .into_iter()
            .map(|qa| ((qa.scenario_id, qa.question_id), qa.answer))
            .collect();
        GoldOracle { answers }
    }

    pub fn from_answers(
        answers: impl IntoIterator<Item = ((String, QuestionId), TriValue)>,
    ) -> Self {
        GoldOracle {
            answers: answers.into_iter().collect(),
        }
    }

    pub fn gold(
        &self,
        scenario_id: &str,
        question_id: QuestionId,
    ) -> Result<TriValue, OracleError> {
        self.answers
            .get(&(scenario_id.to_string(), question_id))
            .copied()
            .ok_or_else(|| OracleError::NoGold {
                scenario_id: scenario_id.to_string(),
                question_id,
            })
    }
}

impl AnswerProvider for GoldOracle {
    fn info(&self) -> ProviderInfo {
        ProviderInfo {
            name: "gold".into(),
            deterministic: true,
            requires_network: false,
        }
    }

    fn answer(&self, query: &Query<'_>) -> Result<Answer, OracleError> {
        let (s, q) = ids(query)?;
        self.gold(s, q).map(Answer::from)
    }
}

/// Answers every question with the same value.
#[derive(Debug, Clone, Copy)]
pub struct ConstantOracle(pub TriValue);

impl AnswerProvider for ConstantOracle {
    fn info(&self) -> ProviderInfo {
        ProviderInfo {
            name: format!("constant-{}", self.0),
            deterministic: true,
            requires_network: false,
        }
    }

    fn answer(&self, _query: &Query<'_>) -> Result<Answer, OracleError> {
        Ok(self.0.into())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfusionError {
    #[error("row {row} has a negative or non-finite entry")]
    BadEntry { row: usize },
    #[error("row {row} sums to {sum}, expected 1")]
    NotStochastic { row: usize, sum: f64 },
}

/// Row-stochastic 3x3 matrix: `matrix[truth][predicted]` is the probability
/// of predicting `predicted` when the gold answer is `truth`. Rows and
/// columns follow [`TriValue::ALL`] order (yes, no, nei).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSpec {
    pub matrix: [[f64; 3]; 3],
    #[serde(default)]
    pub seed: u64,
}

impl ConfusionSpec {
    pub fn new(matrix: [[f64; 3]; 3], seed: u64) -> Result<Self, ConfusionError> {
        let spec = ConfusionSpec { matrix, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn identity(seed: u64) -> Self {
        ConfusionSpec {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            seed,
        }
    }

    pub fn uniform(seed: u64) -> Self {
        ConfusionSpec {
            matrix: [[1.0 / 3.0; 3]; 3],
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfusionError> {
        for (row, r) in self.matrix.iter().enumerate() {
            if r.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(ConfusionError::BadEntry { row });
            }
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(ConfusionError::NotStochastic { row, sum });
            }
        }
        Ok(())
    }

    /// Maps a uniform draw in [0, 1) to a prediction for `truth`.
    pub fn sample(&self, truth: TriValue, u: f64) -> TriValue {
        let row = &self.matrix[truth.index()];
        let mut acc = 0.0;
        for (i, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return TriValue::from_index(i).unwrap();
            }
        }
        // rounding left u above the cumulative sum; take the last nonzero column
        let last = row.iter().rposition(|p| *p > 0.0).unwrap_or(truth.index());
        TriValue::from_index(last).unwrap()
    }
}

/// Stable 64-bit key for (seed, scenario, question); FNV-1a.
fn draw_key(seed: u64, scenario_id: &str, question_id: QuestionId) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(PRIME);
        }
    };
    feed(&seed.to_le_bytes());
    feed(scenario_id.as_bytes());
    feed(&[0xff]);
    feed(&question_id.number().to_le_bytes());
    h
}

/// The uniform draw used for one (seed, scenario, question) triple.
pub fn keyed_uniform(seed: u64, scenario_id: &str, question_id: QuestionId) -> f64 {
    ChaCha8Rng::seed_from_u64(draw_key(seed, scenario_id, question_id)).random::<f64>()
}

/// Gold answers passed through a confusion matrix. Each prediction depends
/// only on (seed, scenario id, question id), so runs replay exactly and call
/// order does not matter.
#[derive(Debug, Clone)]
pub struct NoisyOracle {
    gold: GoldOracle,
    spec: ConfusionSpec,
}

impl NoisyOracle {
    pub fn new(gold: GoldOracle, spec: ConfusionSpec) -> Result<Self, ConfusionError> {
        spec.validate()?;
        Ok(NoisyOracle { gold, spec })
    }

    pub fn spec(&self) -> &ConfusionSpec {
        &self.spec
    }
}

impl AnswerProvider for NoisyOracle {
    fn info(&self) -> ProviderInfo {
        ProviderInfo {
            name: "noisy".into(),
            deterministic: true,
            requires_network: false,
        }
    }

    fn answer(&self, query: &Query<'_>) -> Result<Answer, OracleError> {
        let (s, q) = ids(query)?;
        let truth = self.gold.gold(s, q)?;
        let u = keyed_uniform(self.spec.seed, s, q);
        Ok(self.spec.sample(truth, u).into())
    }
}

/// What the remote oracle does when a request ultimately fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    #[default]
    Abort,
    /// Answer `nei` and record an incident.
    SubstituteNei,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL; requests go to `{endpoint}/answer` and `{endpoint}/answers`.
    pub endpoint: String,
    #[serde(with = "duration_ms")]
    pub timeout: Duration,
    pub retries: u32,
    pub failure_policy: FailurePolicy,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(10),
            retries: 2,
            failure_policy: FailurePolicy::Abort,
            max_in_flight: 8,
        }
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub scenario_id: Option<String>,
    pub question_id: Option<QuestionId>,
    pub error: String,
}

#[derive(Serialize)]
struct AnswerRequest<'a> {
    scenario: &'a str,
    question: &'a str,
}

#[derive(Deserialize)]
struct AnswerResponse {
    answer: String,
    #[serde(default)]
    confidence: Option<f64>,
}

#[derive(Serialize)]
struct BatchRequest<'a> {
    scenarios: Vec<&'a str>,
    questions: Vec<&'a str>,
}

#[derive(Deserialize)]
struct BatchResponse {
    answers: Vec<AnswerResponse>,
}

/// Counting semaphore bounding concurrent HTTP requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Client for a model server speaking the `/answer` JSON protocol.
pub struct RemoteOracle {
    config: RemoteConfig,
    agent: ureq::Agent,
    cache: RwLock<HashMap<(String, QuestionId), Answer>>,
    incidents: Mutex<Vec<Incident>>,
    gate: Gate,
}

impl RemoteOracle {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .new_agent();
        let gate = Gate {
            free: Mutex::new(config.max_in_flight.max(1)),
            cv: Condvar::new(),
        };
        RemoteOracle {
            config,
            agent,
            cache: RwLock::new(HashMap::new()),
            incidents: Mutex::new(Vec::new()),
            gate,
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn incidents(&self) -> Vec<Incident> {
        self.incidents.lock().unwrap().clone()
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R, OracleError> {
        let url = self.url(path);
        let mut last = String::new();
        for _ in 0..=self.config.retries {
            let _slot = self.gate.enter();
            match self.agent.post(&url).send_json(body) {
                Ok(mut resp) => {
                    return resp
                        .body_mut()
                        .read_json::<R>()
                        .map_err(|e| OracleError::Protocol(format!("malformed response: {e}")));
                }
                Err(ureq::Error::StatusCode(code)) if (400..500).contains(&code) => {
                    return Err(OracleError::Protocol(format!(
                        "server answered HTTP {code}"
                    )));
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(OracleError::Transport(format!("{url}: {last}")))
    }

    fn convert(resp: AnswerResponse) -> Result<Answer, OracleError> {
        let value = resp
            .answer
            .parse::<TriValue>()
            .map_err(|_| OracleError::Protocol(format!("unknown label {:?}", resp.answer)))?;
        if let Some(c) = resp.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(OracleError::Protocol(format!(
                    "confidence {c} outside [0, 1]"
                )));
            }
        }
        Ok(Answer {
            value,
            confidence: resp.confidence,
        })
    }

    fn fail(&self, query: &Query<'_>, err: OracleError) -> Result<Answer, OracleError> {
        match self.config.failure_policy {
            FailurePolicy::Abort => Err(err),
            FailurePolicy::SubstituteNei => {
                self.incidents.lock().unwrap().push(Incident {
                    scenario_id: query.scenario_id.map(str::to_string),
                    question_id: query.question_id,
                    error: err.to_string(),
                });
                Ok(TriValue::Nei.into())
            }
        }
    }

    fn cache_key(query: &Query<'_>) -> Option<(String, QuestionId)> {
        Some((query.scenario_id?.to_string(), query.question_id?))
    }

    /// Answers several queries with one `/answers` request; results are
    /// aligned with `queries`. Cached entries are not re-sent.
    pub fn answer_batch(&self, queries: &[Query<'_>]) -> Result<Vec<Answer>, OracleError> {
        let mut out: Vec<Option<Answer>> = queries
            .iter()
            .map(|q| Self::cache_key(q).and_then(|k| self.cache.read().get(&k).copied()))
            .collect();
        let pending: Vec<usize> = (0..queries.len()).filter(|&i| out[i].is_none()).collect();
        if !pending.is_empty() {
            let body = BatchRequest {
                scenarios: pending.iter().map(|&i| queries[i].scenario_text).collect(),
                questions: pending.iter().map(|&i| queries[i].question_text).collect(),
            };
            let result = self
                .post::<_, BatchResponse>("answers", &body)
                .and_then(|r| {
                    if r.answers.len() != pending.len() {
                        return Err(OracleError::Protocol(format!(
                            "expected {} answers, got {}",
                            pending.len(),
                            r.answers.len()
                        )));
                    }
                    r.answers
                        .into_iter()
                        .map(Self::convert)
                        .collect::<Result<Vec<_>, _>>()
                });
            match result {
                Ok(answers) => {
                    for (&i, a) in pending.iter().zip(answers) {
                        if let Some(k) = Self::cache_key(&queries[i]) {
                            self.cache.write().insert(k, a);
                        }
                        out[i] = Some(a);
                    }
                }
                Err(e) => {
                    for &i in &pending {
                        out[i] = Some(self.fail(&queries[i], e.clone())?);
                    }
                }
            }
        }
        Ok(out.into_iter().map(|a| a.expect("filled")).collect())
    }
}

impl AnswerProvider for RemoteOracle {
    fn info(&self) -> ProviderInfo {
        ProviderInfo {
            name: "remote".into(),
            deterministic: false,
            requires_network: true,
        }
    }

    fn answer(&self, query: &Query<'_>) -> Result<Answer, OracleError> {
        let key = Self::cache_key(query);
        if let Some(hit) = key.as_ref().and_then(|k| self.cache.read().get(k).copied()) {
            return Ok(hit);
        }
        let body = AnswerRequest {
            scenario: query.scenario_text,
            question: query.question_text,
        };
        match self
            .post::<_, AnswerResponse>("answer", &body)
            .and_then(Self::convert)
        {
            Ok(a) => {
                if let Some(k) = key {
                    // first writer wins so concurrent misses agree within a run
                    return Ok(*self.cache.write().entry(k).or_insert(a));
                }
                Ok(a)
            }
            Err(e) => self.fail(query, e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q<'a>(s: &'a str, n: u32) -> Query<'a> {
        Query {
            scenario_text: "text",
            question_text: "q?",
            scenario_id: Some(s),
            question_id: Some(QuestionId(n)),
        }
    }

    fn gold() -> GoldOracle {
        GoldOracle::from_answers([
            (("s1".to_string(), QuestionId(0)), TriValue::Yes),
            (("s1".to_string(), QuestionId(1)), TriValue::No),
        ])
    }

    #[test]
    fn gold_answers_and_errors() {
        let g = gold();
        assert_eq!(g.answer(&q("s1", 0)).unwrap().value, TriValue::Yes);
        assert_eq!(
            g.answer(&q("s1", 0)).unwrap(),
            g.answer(&q("s1", 0)).unwrap()
        );
        assert!(matches!(
            g.answer(&q("s1", 5)),
            Err(OracleError::NoGold { .. })
        ));
        let anon = Query {
            scenario_text: "",
            question_text: "",
            scenario_id: None,
            question_id: None,
        };
        assert_eq!(g.answer(&anon), Err(OracleError::MissingIds));
    }

    #[test]
    fn identity_confusion_equals_gold() {
        let n = NoisyOracle::new(gold(), ConfusionSpec::identity(7)).unwrap();
        for i in 0..2 {
            assert_eq!(
                n.answer(&q("s1", i)).unwrap(),
                gold().answer(&q("s1", i)).unwrap()
            );
        }
    }

    #[test]
    fn confusion_validation() {
        assert!(ConfusionSpec::new([[0.5, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], 0).is_ok());
        assert!(matches!(
            ConfusionSpec::new([[0.5, 0.4, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], 0),
            Err(ConfusionError::NotStochastic { row: 0, .. })
        ));
        assert!(matches!(
            ConfusionSpec::new([[1.0, 0.0, 0.0], [1.5, -0.5, 0.0], [0.0, 0.0, 1.0]], 0),
            Err(ConfusionError::BadEntry { row: 1 })
        ));
    }

    #[test]
    fn sample_never_picks_zero_probability_column() {
        let spec =
            ConfusionSpec::new([[0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], 0).unwrap();
        for u in [0.0, 0.5, 0.999_999_999_999] {
            assert_eq!(spec.sample(TriValue::Yes, u), TriValue::No);
        }
    }

    #[test]
    fn keyed_draws_replay() {
        let a = keyed_uniform(3, "s1", QuestionId(2));
        assert_eq!(a, keyed_uniform(3, "s1", QuestionId(2)));
        assert_ne!(a, keyed_uniform(4, "s1", QuestionId(2)));
        assert_ne!(a, keyed_uniform(3, "s1", QuestionId(3)));
        assert!((0.0..1.0).contains(&a));
    }
}
