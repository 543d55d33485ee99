//! Scripted model endpoint for tests and offline runs.
//!
//! A script is a list of entries, each answering one call either in sequence
//! order or whenever the incoming prompt's digest matches. Digest-matched
//! entries are reusable and make concurrent runs reproducible; sequence
//! entries are consumed in order and read best in golden scenario fixtures.
//! The same script can serve in-process (as an [`Oracle`]) or over a
//! loopback HTTP server speaking the gateway's wire protocol; callers cannot
//! tell the two apart.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::Json;
use axum::routing::post;
use axum::Router;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::text_digest;
use crate::gateway::{
    wire, GatewayError, GenerationRequest, GenerationResult, Oracle, PositionLogprobs,
    TokenLogprob,
};
use crate::tagparse::answer_letter_offset;
use crate::types::Label;

/// How an entry is matched to incoming calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Matcher {
    /// Answers the next otherwise-unmatched call, in script order. Consumed.
    BySequence,
    /// Answers any call whose prompt digest matches. Reusable.
    ByPromptDigest { digest: String },
}

/// Synthetic A/B log-probabilities to expose at the answer position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerLogprobs {
    pub a: f64,
    pub b: f64,
}

/// One canned completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptResponse {
    pub text: String,
    pub token_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_logprobs: Option<AnswerLogprobs>,
}

impl ScriptResponse {
    pub fn new(text: impl Into<String>, token_count: u64) -> Self {
        ScriptResponse {
            text: text.into(),
            token_count,
            answer_logprobs: None,
        }
    }

    pub fn with_answer_logprobs(mut self, a: f64, b: f64) -> Self {
        self.answer_logprobs = Some(AnswerLogprobs { a, b });
        self
    }
}

/// One scripted reply: the matcher, the completions returned for the call
/// (cycled when the caller asks for more than are listed), and a simulated
/// latency served as a real sleep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub matcher: Matcher,
    pub responses: Vec<ScriptResponse>,
    #[serde(default)]
    pub latency_ms: u64,
}

/// A whole scripted endpoint, loadable from a JSON fixture file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub entries: Vec<ScriptEntry>,
    #[serde(default = "default_true")]
    pub supports_logprobs: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("failed to read script {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse script {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("script entry has no responses")]
    EmptyEntry,
}

impl Script {
    pub fn new() -> Self {
        Script {
            entries: Vec::new(),
            supports_logprobs: true,
        }
    }

    pub fn push_sequence(&mut self, responses: Vec<ScriptResponse>) -> &mut Self {
        self.entries.push(ScriptEntry {
            matcher: Matcher::BySequence,
            responses,
            latency_ms: 0,
        });
        self
    }

    /// Register a reusable entry matched on the digest of `prompt_text`.
    pub fn push_for_prompt(&mut self, prompt_text: &str, responses: Vec<ScriptResponse>) -> &mut Self {
        self.entries.push(ScriptEntry {
            matcher: Matcher::ByPromptDigest {
                digest: text_digest(prompt_text),
            },
            responses,
            latency_ms: 0,
        });
        self
    }

    pub fn with_latency(mut self, latency_ms: u64) -> Self {
        for entry in &mut self.entries {
            entry.latency_ms = latency_ms;
        }
        self
    }

    pub fn load(path: &Path) -> Result<Script, ScriptError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let script: Script = serde_json::from_str(&raw).map_err(|source| ScriptError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        script.validate()?;
        Ok(script)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScriptError> {
        let body = serde_json::to_string_pretty(self).expect("script serialization");
        std::fs::write(path, body).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        if self.entries.iter().any(|e| e.responses.is_empty()) {
            return Err(ScriptError::EmptyEntry);
        }
        Ok(())
    }
}

/// One observed call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub prompt_digest: String,
    pub n: u32,
    pub temperature: f64,
    /// Milliseconds since the oracle was created.
    pub at_ms: u64,
    /// Calls in flight at arrival, including this one.
    pub in_flight_at_arrival: usize,
}

struct MockState {
    by_digest: HashMap<String, ScriptEntry>,
    sequence: Vec<ScriptEntry>,
    cursor: Mutex<usize>,
    trace: Mutex<Vec<TraceEntry>>,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    started: Instant,
    supports_logprobs: bool,
}

/// Deterministic scripted endpoint. Cheap to clone; clones share state.
#[derive(Clone)]
pub struct ScriptedOracle {
    state: Arc<MockState>,
    claims_logprobs: bool,
}

struct InFlightGuard<'a>(&'a MockState);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

impl ScriptedOracle {
    pub fn new(script: Script) -> Self {
        let mut by_digest = HashMap::new();
        let mut sequence = Vec::new();
        for entry in script.entries {
            match &entry.matcher {
                Matcher::ByPromptDigest { digest } => {
                    by_digest.insert(digest.clone(), entry);
                }
                Matcher::BySequence => sequence.push(entry),
            }
        }
        ScriptedOracle {
            state: Arc::new(MockState {
                by_digest,
                sequence,
                cursor: Mutex::new(0),
                trace: Mutex::new(Vec::new()),
                in_flight: AtomicUsize::new(0),
                peak_in_flight: AtomicUsize::new(0),
                started: Instant::now(),
                supports_logprobs: script.supports_logprobs,
            }),
            claims_logprobs: true,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ScriptError> {
        Ok(ScriptedOracle::new(Script::load(path)?))
    }

    /// A handle that reports no logprobs capability, regardless of what the
    /// script allows. Lets an endpoint config mask the capability exactly as
    /// it would for a live endpoint.
    pub fn without_logprobs(mut self) -> Self {
        self.claims_logprobs = false;
        self
    }

    /// Ordered record of every call served so far.
    pub fn trace(&self) -> Vec<TraceEntry> {
        self.state.trace.lock().unwrap().clone()
    }

    /// Highest number of overlapping calls observed.
    pub fn peak_in_flight(&self) -> usize {
        self.state.peak_in_flight.load(Ordering::SeqCst)
    }

    async fn respond(
        &self,
        prompt_text: &str,
        n: u32,
        temperature: f64,
        want_logprobs: bool,
    ) -> Result<Vec<GenerationResult>, GatewayError> {
        let state = &*self.state;
        let now_in_flight = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlightGuard(state);
        state.peak_in_flight.fetch_max(now_in_flight, Ordering::SeqCst);

        let digest = text_digest(prompt_text);
        state.trace.lock().unwrap().push(TraceEntry {
            prompt_digest: digest.clone(),
            n,
            temperature,
            at_ms: state.started.elapsed().as_millis() as u64,
            in_flight_at_arrival: now_in_flight,
        });

        let entry = match state.by_digest.get(&digest) {
            Some(entry) => entry.clone(),
            None => {
                let mut cursor = state.cursor.lock().unwrap();
                match state.sequence.get(*cursor) {
                    Some(entry) => {
                        *cursor += 1;
                        entry.clone()
                    }
                    None => {
                        return Err(GatewayError::ProviderRefusal(format!(
                            "script exhausted (prompt digest {digest})"
                        )))
                    }
                }
            }
        };

        if entry.latency_ms > 0 {
            tokio::time::sleep(Duration::from_millis(entry.latency_ms)).await;
        }

        Ok((0..n as usize)
            .map(|i| {
                let resp = &entry.responses[i % entry.responses.len()];
                GenerationResult {
                    text: resp.text.clone(),
                    completion_tokens: resp.token_count,
                    logprobs: want_logprobs.then(|| synth_logprobs(resp)),
                    choice_index: i,
                }
            })
            .collect())
    }

    /// Serve this script over loopback HTTP with the gateway's wire
    /// protocol. Trace and sequence state are shared with `self`.
    pub async fn serve_loopback(&self) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let app = Router::new()
            .route("/v1/chat/completions", post(loopback_completions))
            .with_state(self.clone());
        let handle = tokio::spawn(async move {
            if let Err(err) = axum::serve(listener, app).await {
                tracing::debug!(error = %err, "loopback mock server stopped");
            }
        });
        Ok((addr, handle))
    }
}

/// Per-token logprobs for a scripted response: one synthetic token per
/// character, with A/B alternatives exposed at the answer-letter position
/// when the script declares them.
fn synth_logprobs(resp: &ScriptResponse) -> Vec<PositionLogprobs> {
    let answer_offset = resp
        .answer_logprobs
        .as_ref()
        .and_then(|_| answer_letter_offset(&resp.text));
    let mut positions = Vec::new();
    let mut offset = 0usize;
    for ch in resp.text.chars() {
        let token: String = ch.to_string();
        let top = match (answer_offset, resp.answer_logprobs) {
            (Some(at), Some(lp)) if at == offset => vec![
                TokenLogprob { token: Label::A.as_str().into(), logprob: lp.a },
                TokenLogprob { token: Label::B.as_str().into(), logprob: lp.b },
            ],
            _ => vec![TokenLogprob { token: token.clone(), logprob: 0.0 }],
        };
        offset += token.len();
        positions.push(PositionLogprobs { token, top });
    }
    positions
}

#[async_trait]
impl Oracle for ScriptedOracle {
    async fn generate(&self, req: &GenerationRequest) -> Result<Vec<GenerationResult>, GatewayError> {
        if req.n < 1 {
            return Err(GatewayError::InvalidRequest("n must be >= 1".into()));
        }
        self.respond(&req.prompt.text, req.n, req.temperature, req.want_logprobs)
            .await
    }

    fn supports_logprobs(&self) -> bool {
        self.claims_logprobs && self.state.supports_logprobs
    }
}

async fn loopback_completions(
    State(oracle): State<ScriptedOracle>,
    Json(body): Json<wire::OwnedRequest>,
) -> Result<Json<serde_json::Value>, (StatusCode, Json<serde_json::Value>)> {
    let prompt = body
        .messages
        .first()
        .map(|m| m.content.as_str())
        .unwrap_or_default();
    let want_logprobs = body.logprobs.unwrap_or(false);
    let results = oracle
        .respond(prompt, body.n, body.temperature, want_logprobs)
        .await
        .map_err(|err| {
            (
                StatusCode::BAD_REQUEST,
                Json(serde_json::json!({ "error": { "message": err.to_string() } })),
            )
        })?;

    let completion_tokens: u64 = results.iter().map(|r| r.completion_tokens).sum();
    let choices: Vec<wire::Choice> = results
        .into_iter()
        .map(|r| wire::Choice {
            index: Some(r.choice_index as u32),
            message: wire::ResponseMessage {
                role: "assistant".into(),
                content: Some(r.text),
            },
            logprobs: r.logprobs.map(|positions| wire::Logprobs {
                content: Some(
                    positions
                        .into_iter()
                        .map(|p| {
                            let own = p
                                .top
                                .iter()
                                .find(|t| t.token == p.token)
                                .map(|t| t.logprob)
                                .unwrap_or(0.0);
                            wire::TokenEntry {
                                token: p.token,
                                logprob: own,
                                top_logprobs: p
                                    .top
                                    .into_iter()
                                    .map(|t| wire::TopEntry { token: t.token, logprob: t.logprob })
                                    .collect(),
                            }
                        })
                        .collect(),
                ),
            }),
        })
        .collect();

    let response = wire::Response {
        choices,
        usage: Some(wire::Usage { completion_tokens }),
    };
    Ok(Json(serde_json::to_value(response).expect("wire response serializes")))
}
