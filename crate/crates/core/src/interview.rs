//! Guided interviews: ask one relevant question at a time and stop as soon
//! as the compliance label is determined.
//!
//! Sessions are persisted as an append-only event log (`created`, `answer`,
//! `resolution`, `abandoned`); replaying the log rebuilds every session.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Policy};
use crate::logic::{Analysis, CompiledTree, ExprTree, QuestionId};
use crate::TriValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// First relevant question in tree order.
    #[default]
    Order,
    /// Relevant question minimizing the expected number of further questions.
    Greedy,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "order" => Ok(Strategy::Order),
            "greedy" => Ok(Strategy::Greedy),
            other => Err(format!(
                "unknown strategy {other:?}: expected order or greedy"
            )),
        }
    }
}

pub const UNIFORM_PRIOR: [f64; 3] = [1.0 / 3.0; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SessionStatus {
    InProgress,
    Resolved { label: TriValue },
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub question_id: QuestionId,
    pub answer: TriValue,
    pub at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Next {
    Question {
        question_id: QuestionId,
        text: String,
    },
    Resolved {
        label: TriValue,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InterviewError {
    #[error("policy {0:?} has no expression tree")]
    NoTree(String),
    #[error("unknown policy {0:?}")]
    UnknownPolicy(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session is already resolved")]
    AlreadyResolved,
    #[error("session was abandoned")]
    Abandoned,
    #[error("question {0} was already answered")]
    DuplicateAnswer(QuestionId),
    #[error("question {0} is not part of this policy")]
    UnknownQuestion(QuestionId),
    #[error("question {0} cannot change the outcome any more")]
    IrrelevantQuestion(QuestionId),
    #[error("policy has {0} questions, more than the interview engine enumerates")]
    TooManyQuestions(usize),
    #[error("session log: {0}")]
    Store(String),
}

impl InterviewError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            InterviewError::NoTree(_) => "policy_without_tree",
            InterviewError::UnknownPolicy(_) => "unknown_policy",
            InterviewError::UnknownSession(_) => "unknown_session",
            InterviewError::AlreadyResolved => "session_resolved",
            InterviewError::Abandoned => "session_abandoned",
            InterviewError::DuplicateAnswer(_) => "duplicate_answer",
            InterviewError::UnknownQuestion(_) => "unknown_question",
            InterviewError::IrrelevantQuestion(_) => "irrelevant_question",
            InterviewError::TooManyQuestions(_) => "too_many_questions",
            InterviewError::Store(_) => "session_store",
        }
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// One interview over one policy.
#[derive(Debug, Clone)]
pub struct Session {
    session_id: String,
    policy_id: String,
    strategy: Strategy,
    prior: [f64; 3],
    transcript: Vec<TranscriptEntry>,
    status: SessionStatus,
    created_at: String,
    updated_at: String,
    tree: ExprTree,
    question_text: HashMap<QuestionId, String>,
    compiled: CompiledTree,
    lookahead: Option<Arc<Lookahead>>,
}

/// Largest tree the engine accepts.
pub const MAX_INTERVIEW_QUESTIONS: usize = 12;

/// Largest tree the greedy strategy accepts; its lookahead tabulates 4^k
/// partial answer states.
pub const MAX_GREEDY_QUESTIONS: usize = 10;

/// Exact lookahead over every partial answer state of one tree.
///
/// A state packs one base-4 digit per tree position: the answer's index, or
/// 3 while unanswered. Fixing a free position lowers its digit, so every
/// child state has a smaller index and one ascending pass fills the tables.
#[derive(Debug)]
pub struct Lookahead {
    arity: usize,
    prior: [f64; 3],
    /// Bitmask of reachable labels.
    possible: Vec<u8>,
    /// Bitmask of positions whose answer can still change the label.
    relevant: Vec<u16>,
    /// Expected further questions when asking optimally.
    expected: Vec<f64>,
}

impl Lookahead {
    pub fn build(compiled: &CompiledTree, prior: [f64; 3]) -> Lookahead {
        let table = compiled.truth_table();
        let k = compiled.arity();
        let size = 1usize << (2 * k);
        let mut l = Lookahead {
            arity: k,
            prior,
            possible: vec![0; size],
            relevant: vec![0; size],
            expected: vec![0.0; size],
        };
        for s in 0..size {
            let mut free = (0..k).filter(|&i| (s >> (2 * i)) & 3 == 3);
            match (free.next(), free.next()) {
                (None, _) => {
                    let idx = (0..k)
                        .rev()
                        .fold(0, |acc, i| acc * 3 + ((s >> (2 * i)) & 3));
                    l.possible[s] = 1 << table[idx].index();
                }
                (Some(p1), second) => {
                    let c1 = Self::children(s, p1);
                    l.possible[s] = c1.iter().fold(0, |m, &c| m | l.possible[c]);
                    let mut rel = c1.iter().fold(0, |m, &c| m | l.relevant[c]);
                    let p1_matters = match second {
                        None => l.possible[s].count_ones() > 1,
                        Some(p2) => Self::children(s, p2)
                            .iter()
                            .any(|&c| l.relevant[c] & (1 << p1) != 0),
                    };
                    if p1_matters {
                        rel |= 1 << p1;
                    }
                    l.relevant[s] = rel;
                    if l.possible[s].count_ones() > 1 {
                        l.expected[s] = (0..k)
                            .filter(|&i| rel & (1 << i) != 0)
                            .map(|i| l.ask_cost(s, i))
                            .fold(f64::INFINITY, f64::min);
                    }
                }
            }
        }
        l
    }

    fn children(s: usize, i: usize) -> [usize; 3] {
        let base = s & !(3 << (2 * i));
        [base, base | (1 << (2 * i)), base | (2 << (2 * i))]
    }

    fn state(values: &[Option<TriValue>]) -> usize {
        values
            .iter()
            .rev()
            .fold(0, |acc, v| acc * 4 + v.map_or(3, |x| x.index()))
    }

    /// One for asking position `i`, plus the prior-weighted expectation of
    /// what remains after its answer.
    fn ask_cost(&self, s: usize, i: usize) -> f64 {
        let children = Self::children(s, i);
        1.0 + TriValue::ALL
            .iter()
            .filter(|v| self.prior[v.index()] > 0.0)
            .map(|v| self.prior[v.index()] * self.expected[children[v.index()]])
            .sum::<f64>()
    }

    fn analysis(&self, s: usize) -> Analysis {
        let relevant = if self.possible[s].count_ones() > 1 {
            (0..self.arity)
                .filter(|&i| self.relevant[s] & (1 << i) != 0)
                .collect()
        } else {
            Vec::new()
        };
        Analysis {
            possible: self.possible[s],
            relevant,
        }
    }
}

impl Session {
    pub fn id(&self) -> &str {
        &self.session_id
    }

    pub fn policy_id(&self) -> &str {
        &self.policy_id
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn status(&self) -> &SessionStatus {
        &self.status
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn tree(&self) -> &ExprTree {
        &self.tree
    }

    pub fn created_at(&self) -> &str {
        &self.created_at
    }

    pub fn updated_at(&self) -> &str {
        &self.updated_at
    }

    /// Current answers by tree position.
    fn values(&self) -> Vec<Option<TriValue>> {
        let mut v = vec![None; self.tree.questions().len()];
        for e in &self.transcript {
            let i = self.position(e.question_id).expect("validated on record");
            v[i] = Some(e.answer);
        }
        v
    }

    fn position(&self, q: QuestionId) -> Option<usize> {
        self.tree.questions().iter().position(|x| *x == q)
    }

    fn analysis(&self) -> Analysis {
        self.analyze(&self.values())
    }

    fn analyze(&self, values: &[Option<TriValue>]) -> Analysis {
        match &self.lookahead {
            Some(l) => l.analysis(Lookahead::state(values)),
            None => self.compiled.analyze(values),
        }
    }

    /// Relevant unanswered questions in tree order; empty once resolved.
    pub fn relevant(&self) -> Vec<QuestionId> {
        let a = self.analysis();
        if a.resolved().is_some() {
            return Vec::new();
        }
        a.relevant
            .iter()
            .map(|&i| self.tree.questions()[i])
            .collect()
    }

    fn refresh_status(&mut self) {
        if let Some(label) = self.analysis().resolved() {
            self.status = SessionStatus::Resolved { label };
        }
    }

    fn question_text(&self, q: QuestionId) -> String {
        self.question_text.get(&q).cloned().unwrap_or_default()
    }

    fn ensure_lookahead(&mut self) -> Arc<Lookahead> {
        self.lookahead
            .get_or_insert_with(|| Arc::new(Lookahead::build(&self.compiled, self.prior)))
            .clone()
    }

    /// Expected number of questions each relevant candidate leads to
    /// (including itself), in tree order. Empty once resolved.
    pub fn lookahead_costs(&mut self) -> Vec<(QuestionId, f64)> {
        let l = self.ensure_lookahead();
        let state = Lookahead::state(&self.values());
        if l.possible[state].count_ones() == 1 {
            return Vec::new();
        }
        (0..self.tree.questions().len())
            .filter(|&i| l.relevant[state] & (1 << i) != 0)
            .map(|i| (self.tree.questions()[i], l.ask_cost(state, i)))
            .collect()
    }

    fn choose(&mut self) -> Option<QuestionId> {
        match self.strategy {
            Strategy::Order => self.relevant().first().copied(),
            Strategy::Greedy => {
                let costs = self.lookahead_costs();
                let mut best: Option<(QuestionId, f64)> = None;
                for (q, c) in costs {
                    // ties go to the earlier question in tree order
                    if best.is_none_or(|(_, b)| c < b - 1e-12) {
                        best = Some((q, c));
                    }
                }
                best.map(|(q, _)| q)
            }
        }
    }

    /// The question the engine would ask next, without changing state.
    pub fn peek_next(&mut self) -> Option<Next> {
        match self.status {
            SessionStatus::Resolved { label } => Some(Next::Resolved { label }),
            SessionStatus::Abandoned => None,
            SessionStatus::InProgress => {
                if let Some(label) = self.analysis().resolved() {
                    return Some(Next::Resolved { label });
                }
                self.choose().map(|q| Next::Question {
                    question_id: q,
                    text: self.question_text(q),
                })
            }
        }
    }

    pub fn snapshot(&mut self) -> SessionView {
        SessionView {
            session_id: self.session_id.clone(),
            policy_id: self.policy_id.clone(),
            strategy: self.strategy,
            status: self.status.clone(),
            transcript: self.transcript.clone(),
            next: self.peek_next(),
            missing_information: missing_information(self),
            created_at: self.created_at.clone(),
            updated_at: self.updated_at.clone(),
        }
    }
}

/// Serializable view of a session, as exposed over HTTP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub policy_id: String,
    pub strategy: Strategy,
    pub status: SessionStatus,
    pub transcript: Vec<TranscriptEntry>,
    pub next: Option<Next>,
    pub missing_information: Vec<QuestionId>,
    pub created_at: String,
    pub updated_at: String,
}

fn new_session_id() -> String {
    let mut bytes = [0u8; 16];
    rand::rng().fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Starts an interview with a uniform answer prior.
pub fn start_session(policy: &Policy, strategy: Strategy) -> Result<Session, InterviewError> {
    start_session_with(policy, strategy, UNIFORM_PRIOR, new_session_id(), now())
}

/// Starts an interview with an explicit prior over (yes, no, nei), id and
/// creation time.
pub fn start_session_with(
    policy: &Policy,
    strategy: Strategy,
    prior: [f64; 3],
    session_id: String,
    created_at: String,
) -> Result<Session, InterviewError> {
    let tree = policy
        .tree
        .clone()
        .ok_or_else(|| InterviewError::NoTree(policy.id.clone()))?;
    let k = tree.questions().len();
    let limit = match strategy {
        Strategy::Order => MAX_INTERVIEW_QUESTIONS,
        Strategy::Greedy => MAX_GREEDY_QUESTIONS,
    };
    if k > limit {
        return Err(InterviewError::TooManyQuestions(k));
    }
    let compiled = tree.compile();
    let question_text = policy
        .questions
        .iter()
        .map(|q| (q.id, q.text.clone()))
        .collect();
    let mut s = Session {
        session_id,
        policy_id: policy.id.clone(),
        strategy,
        prior,
        transcript: Vec::new(),
        status: SessionStatus::InProgress,
        updated_at: created_at.clone(),
        created_at,
        tree,
        question_text,
        compiled,
        lookahead: None,
    };
    s.refresh_status();
    Ok(s)
}

/// Returns the next question to ask, or the label once it is determined.
pub fn next_question(session: &mut Session) -> Result<Next, InterviewError> {
    match session.status {
        SessionStatus::Resolved { .. } => Err(InterviewError::AlreadyResolved),
        SessionStatus::Abandoned => Err(InterviewError::Abandoned),
        SessionStatus::InProgress => {
            session.refresh_status();
            Ok(session
                .peek_next()
                .expect("in-progress session always has a next step"))
        }
    }
}

fn check_answer(session: &Session, question_id: QuestionId) -> Result<(), InterviewError> {
    match session.status {
        SessionStatus::Resolved { .. } => return Err(InterviewError::AlreadyResolved),
        SessionStatus::Abandoned => return Err(InterviewError::Abandoned),
        SessionStatus::InProgress => {}
    }
    if session.position(question_id).is_none() {
        return Err(InterviewError::UnknownQuestion(question_id));
    }
    if session
        .transcript
        .iter()
        .any(|e| e.question_id == question_id)
    {
        return Err(InterviewError::DuplicateAnswer(question_id));
    }
    if !session.relevant().contains(&question_id) {
        return Err(InterviewError::IrrelevantQuestion(question_id));
    }
    Ok(())
}

/// Appends an answer and recomputes the status.
pub fn record_answer(
    session: &mut Session,
    question_id: QuestionId,
    value: TriValue,
) -> Result<(), InterviewError> {
    record_answer_at(session, question_id, value, now())
}

fn record_answer_at(
    session: &mut Session,
    question_id: QuestionId,
    value: TriValue,
    at: String,
) -> Result<(), InterviewError> {
    check_answer(session, question_id)?;
    session.transcript.push(TranscriptEntry {
        question_id,
        answer: value,
        at: at.clone(),
    });
    session.updated_at = at;
    session.refresh_status();
    Ok(())
}

pub fn abandon(session: &mut Session) -> Result<(), InterviewError> {
    match session.status {
        SessionStatus::Resolved { .. } => Err(InterviewError::AlreadyResolved),
        SessionStatus::Abandoned => Err(InterviewError::Abandoned),
        SessionStatus::InProgress => {
            session.status = SessionStatus::Abandoned;
            session.updated_at = now();
            Ok(())
        }
    }
}

/// Questions whose answers are still needed. For an open session these are
/// the relevant unanswered questions; for a session resolved to `nei`, the
/// questions answered `nei` whose change to yes or no (all else fixed) would
/// move the label off `nei`; for a yes/no verdict, nothing.
pub fn missing_information(session: &Session) -> Vec<QuestionId> {
    match session.status {
        SessionStatus::Resolved {
            label: TriValue::Nei,
        } => {
            let values = session.values();
            let mut out = Vec::new();
            for (i, v) in values.iter().enumerate() {
                if *v != Some(TriValue::Nei) {
                    continue;
                }
                let pivotal = [TriValue::Yes, TriValue::No].into_iter().any(|flip| {
                    let mut alt = values.clone();
                    alt[i] = Some(flip);
                    session.analyze(&alt).resolved() != Some(TriValue::Nei)
                });
                if pivotal {
                    out.push(session.tree.questions()[i]);
                }
            }
            out
        }
        SessionStatus::Resolved { .. } => Vec::new(),
        SessionStatus::InProgress | SessionStatus::Abandoned => session.relevant(),
    }
}

/// A persisted session event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Created {
        session_id: String,
        policy_id: String,
        strategy: Strategy,
        prior: [f64; 3],
        at: String,
    },
    Answer {
        session_id: String,
        question_id: QuestionId,
        answer: TriValue,
        at: String,
    },
    Resolution {
        session_id: String,
        label: TriValue,
        at: String,
    },
    Abandoned {
        session_id: String,
        at: String,
    },
}

impl SessionEvent {
    pub fn session_id(&self) -> &str {
        match self {
            SessionEvent::Created { session_id, .. }
            | SessionEvent::Answer { session_id, .. }
            | SessionEvent::Resolution { session_id, .. }
            | SessionEvent::Abandoned { session_id, .. } => session_id,
        }
    }
}

/// Rebuilds sessions from events in log order. A `resolution` event must
/// agree with the status recomputed from the answers.
/// Lookaheads shared by greedy sessions over the same policy and prior.
#[derive(Debug, Default)]
struct LookaheadCache(Mutex<HashMap<LookaheadKey, Arc<Lookahead>>>);

/// Policy id and the prior's bit patterns.
type LookaheadKey = (String, [u64; 3]);

impl LookaheadCache {
    fn attach(&self, s: &mut Session) {
        if s.strategy != Strategy::Greedy {
            return;
        }
        let key = (s.policy_id.clone(), s.prior.map(f64::to_bits));
        let l = self
            .0
            .lock()
            .entry(key)
            .or_insert_with(|| Arc::new(Lookahead::build(&s.compiled, s.prior)))
            .clone();
        s.lookahead = Some(l);
    }
}

pub fn replay(corpus: &Corpus, events: &[SessionEvent]) -> Result<Vec<Session>, InterviewError> {
    replay_with(corpus, events, &LookaheadCache::default())
}

fn replay_with(
    corpus: &Corpus,
    events: &[SessionEvent],
    cache: &LookaheadCache,
) -> Result<Vec<Session>, InterviewError> {
    let mut order: Vec<String> = Vec::new();
    let mut sessions: HashMap<String, Session> = HashMap::new();
    fn get<'a>(
        sessions: &'a mut HashMap<String, Session>,
        id: &str,
    ) -> Result<&'a mut Session, InterviewError> {
        sessions
            .get_mut(id)
            .ok_or_else(|| InterviewError::Store(format!("event for unknown session {id}")))
    }
    for ev in events {
        match ev {
            SessionEvent::Created {
                session_id,
                policy_id,
                strategy,
                prior,
                at,
            } => {
                let policy = corpus
                    .policy(policy_id)
                    .ok_or_else(|| InterviewError::UnknownPolicy(policy_id.clone()))?;
                let mut s =
                    start_session_with(policy, *strategy, *prior, session_id.clone(), at.clone())?;
                cache.attach(&mut s);
                if sessions.insert(session_id.clone(), s).is_some() {
                    return Err(InterviewError::Store(format!(
                        "session {session_id} created twice"
                    )));
                }
                order.push(session_id.clone());
            }
            SessionEvent::Answer {
                session_id,
                question_id,
                answer,
                at,
            } => {
                let s = get(&mut sessions, session_id)?;
                record_answer_at(s, *question_id, *answer, at.clone())?;
            }
            SessionEvent::Resolution {
                session_id, label, ..
            } => {
                let s = get(&mut sessions, session_id)?;
                if s.status != (SessionStatus::Resolved { label: *label }) {
                    return Err(InterviewError::Store(format!(
                        "session {session_id}: logged resolution {label} disagrees with replayed status"
                    )));
                }
            }
            SessionEvent::Abandoned { session_id, at } => {
                let s = get(&mut sessions, session_id)?;
                abandon(s)?;
                s.updated_at = at.clone();
            }
        }
    }
    Ok(order
        .into_iter()
        .map(|id| sessions.remove(&id).unwrap())
        .collect())
}

/// Append-only JSON-lines session log.
#[derive(Debug)]
pub struct SessionStore {
    path: PathBuf,
    file: File,
}

impl SessionStore {
    pub fn open(path: &Path) -> Result<Self, InterviewError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| InterviewError::Store(format!("{}: {e}", path.display())))?;
        Ok(SessionStore {
            path: path.into(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &SessionEvent) -> Result<(), InterviewError> {
        let mut line = serde_json::to_vec(event).expect("events serialize");
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.flush())
            .map_err(|e| InterviewError::Store(e.to_string()))
    }

    pub fn read_events(path: &Path) -> Result<Vec<SessionEvent>, InterviewError> {
        if !path.exists() {
            return Ok(Vec::new());
        }
        let f = File::open(path).map_err(|e| InterviewError::Store(e.to_string()))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| InterviewError::Store(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str(&line)
                    .map_err(|e| InterviewError::Store(format!("line {}: {e}", i + 1)))?,
            );
        }
        Ok(out)
    }
}

/// Concurrent session registry. Each session has its own lock, so writes to
/// one session are serialized while different sessions proceed in parallel.
pub struct SessionRegistry {
    corpus: Arc<Corpus>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    store: Option<Mutex<SessionStore>>,
    lookaheads: LookaheadCache,
}

impl SessionRegistry {
    pub fn new(corpus: Arc<Corpus>) -> Self {
        SessionRegistry {
            corpus,
            sessions: RwLock::new(HashMap::new()),
            store: None,
            lookaheads: LookaheadCache::default(),
        }
    }

    /// Replays any existing log at `path`, then appends new events to it.
    pub fn with_store(corpus: Arc<Corpus>, path: &Path) -> Result<Self, InterviewError> {
        let events = SessionStore::read_events(path)?;
        let lookaheads = LookaheadCache::default();
        let sessions = replay_with(&corpus, &events, &lookaheads)?
            .into_iter()
            .map(|s| (s.session_id.clone(), Arc::new(Mutex::new(s))))
            .collect();
        Ok(SessionRegistry {
            corpus,
            sessions: RwLock::new(sessions),
            store: Some(Mutex::new(SessionStore::open(path)?)),
            lookaheads,
        })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    fn log(&self, event: SessionEvent) -> Result<(), InterviewError> {
        match &self.store {
            Some(store) => store.lock().append(&event),
            None => Ok(()),
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, InterviewError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| InterviewError::UnknownSession(id.to_string()))
    }

    pub fn create(
        &self,
        policy_id: &str,
        strategy: Strategy,
    ) -> Result<SessionView, InterviewError> {
        let policy = self
            .corpus
            .policy(policy_id)
            .ok_or_else(|| InterviewError::UnknownPolicy(policy_id.into()))?;
        let mut s = start_session(policy, strategy)?;
        self.lookaheads.attach(&mut s);
        self.log(SessionEvent::Created {
            session_id: s.session_id.clone(),
            policy_id: s.policy_id.clone(),
            strategy,
            prior: s.prior,
            at: s.created_at.clone(),
        })?;
        let view = s.snapshot();
        self.sessions
            .write()
            .insert(s.session_id.clone(), Arc::new(Mutex::new(s)));
        Ok(view)
    }

    pub fn get(&self, id: &str) -> Result<SessionView, InterviewError> {
        Ok(self.session(id)?.lock().snapshot())
    }

    pub fn answer(
        &self,
        id: &str,
        question_id: QuestionId,
        value: TriValue,
    ) -> Result<SessionView, InterviewError> {
        let handle = self.session(id)?;
        let mut s = handle.lock();
        let at = now();
        check_answer(&s, question_id)?;
        self.log(SessionEvent::Answer {
            session_id: id.into(),
            question_id,
            answer: value,
            at: at.clone(),
        })?;
        record_answer_at(&mut s, question_id, value, at.clone())?;
        if let SessionStatus::Resolved { label } = s.status {
            self.log(SessionEvent::Resolution {
                session_id: id.into(),
                label,
                at,
            })?;
        }
        Ok(s.snapshot())
    }

    pub fn abandon(&self, id: &str) -> Result<SessionView, InterviewError> {
        let handle = self.session(id)?;
        let mut s = handle.lock();
        abandon(&mut s)?;
        self.log(SessionEvent::Abandoned {
            session_id: id.into(),
            at: s.updated_at.clone(),
        })?;
        Ok(s.snapshot())
    }

    pub fn len(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Question;
    use crate::logic::parse_tree;
    use serde_json::Map;
    use TriValue::*;

    fn policy(tree: &str) -> Policy {
        let tree = parse_tree(tree).unwrap();
        Policy {
            id: "p".into(),
            text: "policy".into(),
            source_url: None,
            questions: tree
                .questions()
                .iter()
                .map(|q| Question {
                    id: *q,
                    text: format!("{q}?"),
                })
                .collect(),
            tree: Some(tree),
            extra: Map::new(),
        }
    }

    fn q(n: u32) -> QuestionId {
        QuestionId(n)
    }

    #[test]
    fn start_and_single_question() {
        let mut s = start_session(&policy("Q0"), Strategy::Order).unwrap();
        assert_eq!(s.status(), &SessionStatus::InProgress);
        assert!(s.transcript().is_empty());
        assert_eq!(
            next_question(&mut s).unwrap(),
            Next::Question {
                question_id: q(0),
                text: "Q0?".into()
            }
        );
        assert_eq!(s.id().len(), 32);
    }

    #[test]
    fn policy_without_tree() {
        let mut p = policy("Q0");
        p.tree = None;
        assert_eq!(
            start_session(&p, Strategy::Order).unwrap_err(),
            InterviewError::NoTree("p".into())
        );
    }

    #[test]
    fn no_resolves_conjunction_immediately() {
        let mut s = start_session(&policy("Q0 AND Q1"), Strategy::Order).unwrap();
        record_answer(&mut s, q(0), No).unwrap();
        assert_eq!(s.status(), &SessionStatus::Resolved { label: No });
        assert_eq!(next_question(&mut s), Err(InterviewError::AlreadyResolved));
        assert_eq!(
            record_answer(&mut s, q(1), Yes),
            Err(InterviewError::AlreadyResolved)
        );
    }

    #[test]
    fn nei_keeps_disjunction_open() {
        let mut s = start_session(&policy("Q0 OR Q1"), Strategy::Order).unwrap();
        record_answer(&mut s, q(0), Nei).unwrap();
        assert_eq!(
            next_question(&mut s).unwrap(),
            Next::Question {
                question_id: q(1),
                text: "Q1?".into()
            }
        );
    }

    #[test]
    fn answer_errors() {
        let mut s = start_session(&policy("(Q0 OR Q1) AND Q2"), Strategy::Order).unwrap();
        record_answer(&mut s, q(0), Yes).unwrap();
        assert_eq!(
            record_answer(&mut s, q(0), No),
            Err(InterviewError::DuplicateAnswer(q(0)))
        );
        assert_eq!(
            record_answer(&mut s, q(1), No),
            Err(InterviewError::IrrelevantQuestion(q(1)))
        );
        assert_eq!(
            record_answer(&mut s, q(9), No),
            Err(InterviewError::UnknownQuestion(q(9)))
        );
        record_answer(&mut s, q(2), Yes).unwrap();
        assert_eq!(s.status(), &SessionStatus::Resolved { label: Yes });
    }

    #[test]
    fn all_nei_resolves_nei() {
        let mut s = start_session(&policy("Q0 AND Q1"), Strategy::Order).unwrap();
        record_answer(&mut s, q(0), Nei).unwrap();
        record_answer(&mut s, q(1), Nei).unwrap();
        assert_eq!(s.status(), &SessionStatus::Resolved { label: Nei });
        assert_eq!(missing_information(&s), vec![q(0), q(1)]);
    }

    #[test]
    fn missing_information_cases() {
        let mut s = start_session(&policy("Q0 AND Q1"), Strategy::Order).unwrap();
        record_answer(&mut s, q(0), Yes).unwrap();
        assert_eq!(missing_information(&s), vec![q(1)]);
        record_answer(&mut s, q(1), Nei).unwrap();
        assert_eq!(missing_information(&s), vec![q(1)]);

        let mut rent = start_session(&policy("(Q0 OR Q1 OR Q2) AND Q3"), Strategy::Order).unwrap();
        record_answer(&mut rent, q(0), No).unwrap();
        record_answer(&mut rent, q(1), Yes).unwrap();
        record_answer(&mut rent, q(3), Nei).unwrap();
        assert_eq!(rent.status(), &SessionStatus::Resolved { label: Nei });
        assert_eq!(missing_information(&rent), vec![q(3)]);

        let mut yes = start_session(&policy("Q0"), Strategy::Order).unwrap();
        record_answer(&mut yes, q(0), Yes).unwrap();
        assert!(missing_information(&yes).is_empty());
    }

    #[test]
    fn greedy_prefers_q3() {
        let mut s = start_session(&policy("(Q0 OR Q1 OR Q2) AND Q3"), Strategy::Greedy).unwrap();
        assert_eq!(
            next_question(&mut s).unwrap(),
            Next::Question {
                question_id: q(3),
                text: "Q3?".into()
            }
        );
    }

    #[test]
    fn replay_reproduces_status() {
        let corpus = Corpus::new(vec![policy("Q0 AND Q1")], vec![], None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sessions.jsonl");
        let reg = SessionRegistry::with_store(Arc::new(corpus.clone()), &path).unwrap();
        let v = reg.create("p", Strategy::Order).unwrap();
        reg.answer(&v.session_id, q(0), Yes).unwrap();
        let done = reg.answer(&v.session_id, q(1), No).unwrap();
        assert_eq!(done.status, SessionStatus::Resolved { label: No });
        drop(reg);

        let events = SessionStore::read_events(&path).unwrap();
        assert_eq!(events.len(), 4);
        let reg = SessionRegistry::with_store(Arc::new(corpus), &path).unwrap();
        assert_eq!(reg.get(&v.session_id).unwrap(), done);
    }

    #[test]
    fn replay_rejects_inconsistent_resolution() {
        let corpus = Corpus::new(vec![policy("Q0 AND Q1")], vec![], None);
        let events = vec![
            SessionEvent::Created {
                session_id: "s".into(),
                policy_id: "p".into(),
                strategy: Strategy::Order,
                prior: UNIFORM_PRIOR,
                at: "t".into(),
            },
            SessionEvent::Answer {
                session_id: "s".into(),
                question_id: q(0),
                answer: No,
                at: "t".into(),
            },
            SessionEvent::Resolution {
                session_id: "s".into(),
                label: Yes,
                at: "t".into(),
            },
        ];
        assert!(matches!(
            replay(&corpus, &events),
            Err(InterviewError::Store(_))
        ));
    }

    #[test]
    fn registry_errors() {
        let reg = SessionRegistry::new(Arc::new(Corpus::new(vec![policy("Q0")], vec![], None)));
        assert_eq!(
            reg.create("nope", Strategy::Order).unwrap_err().code(),
            "unknown_policy"
        );
        assert_eq!(reg.get("nope").unwrap_err().code(), "unknown_session");
        let v = reg.create("p", Strategy::Order).unwrap();
        reg.answer(&v.session_id, q(0), Yes).unwrap();
        assert_eq!(
            reg.answer(&v.session_id, q(0), Yes).unwrap_err().code(),
            "session_resolved"
        );
    }

    #[test]
    fn size_limits_depend_on_strategy() {
        let tree = (0..11)
            .map(|i| format!("Q{i}"))
            .collect::<Vec<_>>()
            .join(" AND ");
        let p = policy(&tree);
        assert!(start_session(&p, Strategy::Order).is_ok());
        assert_eq!(
            start_session(&p, Strategy::Greedy).unwrap_err(),
            InterviewError::TooManyQuestions(11)
        );
        let tree = (0..13)
            .map(|i| format!("Q{i}"))
            .collect::<Vec<_>>()
            .join(" OR ");
        assert_eq!(
            start_session(&policy(&tree), Strategy::Order).unwrap_err(),
            InterviewError::TooManyQuestions(13)
        );
    }

    #[test]
    fn lookahead_matches_direct_analysis() {
        let p = policy("(Q0 OR NOT Q1) AND (Q2 OR Q0) AND NOT (Q3 AND Q1)");
        let compiled = p.tree.as_ref().unwrap().compile();
        let l = Lookahead::build(&compiled, UNIFORM_PRIOR);
        for s in 0..(1usize << 8) {
            let values: Vec<Option<TriValue>> = (0..4)
                .map(|i| TriValue::from_index((s >> (2 * i)) & 3))
                .collect();
            let a = compiled.analyze(&values);
            let b = l.analysis(Lookahead::state(&values));
            assert_eq!(a.possible, b.possible, "{values:?}");
            assert_eq!(a.relevant, b.relevant, "{values:?}");
        }
    }
}
