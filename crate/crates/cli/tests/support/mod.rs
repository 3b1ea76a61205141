//! Recorded gateway exchanges, each paired with the bytes the matching
//! direct module call serializes to.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde::Serialize;
use serde_json::{json, Value};
use tower::ServiceExt;

use pcd_core::corpus::{load_corpus_dir, Corpus, LoadMode};
use pcd_core::interview::{InterviewError, SessionRegistry};
use pcd_core::QuestionId;
use pcd_gateway::evaluate::{EvaluateRequest, OracleKind};
use pcd_gateway::http::{router, AnswerBody, AppState, CreateSession, JobAccepted};
use pcd_gateway::ApiError;

pub fn consistent_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/consistent")
}

pub fn state(store: Option<&Path>) -> AppState {
    let (corpus, _) = load_corpus_dir(&consistent_dir(), LoadMode::Strict).unwrap();
    let corpus = Arc::new(corpus);
    let sessions = match store {
        Some(p) => SessionRegistry::with_store(corpus.clone(), p).unwrap(),
        None => SessionRegistry::new(corpus.clone()),
    };
    AppState::new(corpus, Arc::new(sessions), 1)
}

pub async fn call(
    app: &Router,
    method: Method,
    path: &str,
    body: Option<&str>,
) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(path)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (
        status,
        res.into_body().collect().await.unwrap().to_bytes().to_vec(),
    )
}

pub struct Pair {
    pub request: String,
    pub status: u16,
    pub expected_status: u16,
    pub http: Vec<u8>,
    pub direct: Vec<u8>,
}

impl Pair {
    pub fn holds(&self) -> bool {
        self.status == self.expected_status && self.http == self.direct
    }
}

fn bytes<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).unwrap()
}

struct Recorder {
    app: Router,
    state: AppState,
    pairs: Vec<Pair>,
}

impl Recorder {
    async fn send(&mut self, method: Method, path: &str, body: Option<&str>) -> (u16, Vec<u8>) {
        let (status, http) = call(&self.app, method, path, body).await;
        (status.as_u16(), http)
    }

    fn record(
        &mut self,
        request: String,
        (status, http): (u16, Vec<u8>),
        expected_status: u16,
        direct: Vec<u8>,
    ) {
        self.pairs.push(Pair {
            request,
            status,
            expected_status,
            http,
            direct,
        });
    }

    async fn exchange<F>(
        &mut self,
        method: Method,
        path: &str,
        body: Option<&str>,
        expected_status: u16,
        direct: F,
    ) -> Value
    where
        F: FnOnce(&AppState, &Value) -> Vec<u8>,
    {
        let (status, http) = self.send(method.clone(), path, body).await;
        let parsed: Value = serde_json::from_slice(&http).unwrap_or(Value::Null);
        let d = direct(&self.state, &parsed);
        self.record(
            format!("{method} {path} {}", body.unwrap_or(""))
                .trim_end()
                .to_string(),
            (status, http),
            expected_status,
            d,
        );
        parsed
    }

    async fn answer(
        &mut self,
        id: &str,
        q: &str,
        a: &str,
        expected_status: u16,
        err: Option<InterviewError>,
    ) {
        let path = format!("/sessions/{id}/answer");
        let body = format!(r#"{{"question_id":"{q}","answer":"{a}"}}"#);
        let id = id.to_string();
        self.exchange(
            Method::POST,
            &path,
            Some(&body),
            expected_status,
            move |s, _| match err {
                Some(e) => bytes(&ApiError::from(e)),
                None => bytes(&s.sessions.get(&id).unwrap()),
            },
        )
        .await;
    }

    /// Polls a job to completion, then records the report against a direct
    /// run of the same request, aligning only the run timestamps.
    async fn evaluation(&mut self, request: &str) {
        let accepted = self
            .exchange(Method::POST, "/evaluate", Some(request), 202, |_, v| {
                bytes(&JobAccepted {
                    job_id: v["job_id"].as_str().unwrap_or("").into(),
                    status: "running".into(),
                })
            })
            .await;
        let path = format!("/evaluate/{}", accepted["job_id"].as_str().unwrap_or(""));
        let mut reply = self.send(Method::GET, &path, None).await;
        for _ in 0..500 {
            if reply.0 != 202 {
                break;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
            reply = self.send(Method::GET, &path, None).await;
        }
        let parsed: Value = serde_json::from_slice(&reply.1).unwrap_or(Value::Null);
        let req: EvaluateRequest = serde_json::from_str(request).unwrap();
        let mut direct = req.run(&self.state.corpus).unwrap();
        direct.metadata.started_at = parsed["metadata"]["started_at"]
            .as_str()
            .unwrap_or("")
            .into();
        direct.metadata.finished_at = parsed["metadata"]["finished_at"]
            .as_str()
            .unwrap_or("")
            .into();
        self.record(format!("GET {path}"), reply, 200, bytes(&direct));
    }
}

fn corpus_of(s: &AppState) -> &Corpus {
    &s.corpus
}

/// Replays the recorded exchanges against a fresh gateway.
pub async fn record_pairs() -> Vec<Pair> {
    let state = state(None);
    let mut r = Recorder {
        app: router(state.clone()),
        state,
        pairs: Vec::new(),
    };
    use Method as M;

    r.exchange(M::GET, "/healthz", None, 200, |_, _| {
        bytes(&json!({"status": "ok"}))
    })
    .await;
    r.exchange(M::GET, "/policies", None, 200, |s, _| {
        bytes(&corpus_of(s).policies())
    })
    .await;
    for id in ["housing-benefit", "travel-grant"] {
        r.exchange(M::GET, &format!("/policies/{id}"), None, 200, |s, _| {
            bytes(corpus_of(s).policy(id).unwrap())
        })
        .await;
    }
    r.exchange(M::GET, "/policies/nope", None, 404, |_, _| {
        bytes(&ApiError::not_found(
            "unknown_policy",
            "unknown policy \"nope\"",
        ))
    })
    .await;

    // order session: nei, then a duplicate and an unknown question
    let a = r
        .exchange(
            M::POST,
            "/sessions",
            Some(r#"{"policy_id":"housing-benefit"}"#),
            201,
            |s, v| {
                bytes(
                    &s.sessions
                        .get(v["session_id"].as_str().unwrap_or(""))
                        .unwrap(),
                )
            },
        )
        .await["session_id"]
        .as_str()
        .unwrap()
        .to_string();
    r.exchange(M::GET, &format!("/sessions/{a}"), None, 200, |s, _| {
        bytes(&s.sessions.get(&a).unwrap())
    })
    .await;
    r.answer(&a, "Q0", "nei", 200, None).await;
    r.answer(
        &a,
        "Q0",
        "yes",
        409,
        Some(InterviewError::DuplicateAnswer(QuestionId(0))),
    )
    .await;
    r.answer(
        &a,
        "Q9",
        "yes",
        422,
        Some(InterviewError::UnknownQuestion(QuestionId(9))),
    )
    .await;

    // greedy session resolved by Q3 alone
    let b = r
        .exchange(
            M::POST,
            "/sessions",
            Some(r#"{"policy_id":"housing-benefit","strategy":"greedy"}"#),
            201,
            |s, v| {
                bytes(
                    &s.sessions
                        .get(v["session_id"].as_str().unwrap_or(""))
                        .unwrap(),
                )
            },
        )
        .await["session_id"]
        .as_str()
        .unwrap()
        .to_string();
    r.answer(&b, "Q3", "no", 200, None).await;
    r.exchange(M::GET, &format!("/sessions/{b}"), None, 200, |s, _| {
        bytes(&s.sessions.get(&b).unwrap())
    })
    .await;
    r.answer(&b, "Q0", "yes", 409, Some(InterviewError::AlreadyResolved))
        .await;

    // travel grant to a yes verdict
    let c = r
        .exchange(
            M::POST,
            "/sessions",
            Some(r#"{"policy_id":"travel-grant","strategy":"order"}"#),
            201,
            |s, v| {
                bytes(
                    &s.sessions
                        .get(v["session_id"].as_str().unwrap_or(""))
                        .unwrap(),
                )
            },
        )
        .await["session_id"]
        .as_str()
        .unwrap()
        .to_string();
    r.answer(&c, "Q0", "yes", 200, None).await;
    r.answer(&c, "Q1", "no", 200, None).await;

    // a satisfied disjunct makes its siblings irrelevant; then abandon
    let d = r
        .exchange(
            M::POST,
            "/sessions",
            Some(r#"{"policy_id":"housing-benefit"}"#),
            201,
            |s, v| {
                bytes(
                    &s.sessions
                        .get(v["session_id"].as_str().unwrap_or(""))
                        .unwrap(),
                )
            },
        )
        .await["session_id"]
        .as_str()
        .unwrap()
        .to_string();
    r.answer(&d, "Q0", "yes", 200, None).await;
    r.answer(
        &d,
        "Q1",
        "no",
        422,
        Some(InterviewError::IrrelevantQuestion(QuestionId(1))),
    )
    .await;
    r.exchange(
        M::POST,
        &format!("/sessions/{d}/abandon"),
        None,
        200,
        |s, _| bytes(&s.sessions.get(&d).unwrap()),
    )
    .await;
    r.answer(&d, "Q3", "yes", 409, Some(InterviewError::Abandoned))
        .await;

    // lookup and request errors
    r.exchange(M::GET, "/sessions/nope", None, 404, |_, _| {
        bytes(&ApiError::from(InterviewError::UnknownSession(
            "nope".into(),
        )))
    })
    .await;
    r.exchange(M::POST, "/sessions/nope/abandon", None, 404, |_, _| {
        bytes(&ApiError::from(InterviewError::UnknownSession(
            "nope".into(),
        )))
    })
    .await;
    r.exchange(
        M::POST,
        "/sessions",
        Some(r#"{"policy_id":"ghost"}"#),
        404,
        |_, _| {
            bytes(&ApiError::from(InterviewError::UnknownPolicy(
                "ghost".into(),
            )))
        },
    )
    .await;
    let malformed = r#"{"policy":"housing-benefit"}"#;
    r.exchange(M::POST, "/sessions", Some(malformed), 400, |_, _| {
        let e = serde_json::from_str::<CreateSession>(malformed).unwrap_err();
        bytes(&ApiError::bad_request(format!("invalid request body: {e}")))
    })
    .await;
    let bad_answer = r#"{"question_id":"Q1","answer":"maybe"}"#;
    r.exchange(
        M::POST,
        &format!("/sessions/{a}/answer"),
        Some(bad_answer),
        400,
        |_, _| {
            let e = serde_json::from_str::<AnswerBody>(bad_answer).unwrap_err();
            bytes(&ApiError::bad_request(format!("invalid request body: {e}")))
        },
    )
    .await;

    // evaluations
    r.evaluation(r#"{"oracle":"gold","mode":"short-circuit"}"#)
        .await;
    r.evaluation(r#"{"oracle":"noisy","confusion":{"matrix":[[0.7,0.2,0.1],[0.2,0.7,0.1],[0.3,0.3,0.4]]},"seed":4}"#)
        .await;
    for (body, kind) in [
        (r#"{"oracle":"noisy"}"#, OracleKind::Noisy),
        (r#"{"oracle":"remote"}"#, OracleKind::Remote),
    ] {
        r.exchange(M::POST, "/evaluate", Some(body), 400, |s, _| {
            let req = EvaluateRequest {
                oracle: kind,
                ..Default::default()
            };
            bytes(&req.build_oracle(&s.corpus).err().unwrap())
        })
        .await;
    }
    let bad_matrix =
        r#"{"oracle":"noisy","confusion":{"matrix":[[0.5,0.2,0.1],[0.2,0.7,0.1],[0.3,0.3,0.4]]}}"#;
    r.exchange(M::POST, "/evaluate", Some(bad_matrix), 400, |s, _| {
        let req: EvaluateRequest = serde_json::from_str(bad_matrix).unwrap();
        bytes(&req.build_oracle(&s.corpus).err().unwrap())
    })
    .await;
    r.exchange(M::GET, "/evaluate/nope", None, 404, |s, _| {
        bytes(&s.jobs.report("nope").unwrap_err())
    })
    .await;
    r.exchange(M::GET, "/no/such/endpoint", None, 404, |_, _| {
        bytes(&ApiError::not_found("not_found", "no such endpoint"))
    })
    .await;
    r.pairs
}
