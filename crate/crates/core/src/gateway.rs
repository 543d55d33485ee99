//! Uniform access to generation and label-probability scoring over model
//! endpoints.
//!
//! Everything that talks to a model goes through the [`Oracle`] trait, so
//! pipelines run identically against a live chat-completions server
//! ([`HttpOracle`]) or the scripted test endpoint in [`crate::mock_oracle`].
//! Prompts are sent as a single user-role message; the templates are
//! self-contained instructions and need no system message.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::digest::{stream_rng, text_digest};
use crate::prompts::RenderedPrompt;
use crate::tagparse::{answer_letter_offset, extract_answer};
use crate::types::Label;

/// One remote model binding: where it lives and how hard we may push it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEndpoint {
    pub base_address: String,
    pub model_id: String,
    /// Name of the environment variable holding the API secret, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_ref: Option<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub supports_logprobs: bool,
    /// Request path of the chat-completions route.
    #[serde(default = "default_api_path")]
    pub api_path: String,
    /// Provider cap on requested alternatives per position.
    #[serde(default = "default_top_logprobs_cap")]
    pub top_logprobs_cap: u8,
}

fn default_timeout_s() -> f64 {
    60.0
}
fn default_max_in_flight() -> usize {
    4
}
fn default_api_path() -> String {
    "/v1/chat/completions".to_string()
}
fn default_top_logprobs_cap() -> u8 {
    20
}

impl OracleEndpoint {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_in_flight < 1 {
            return Err(GatewayError::InvalidRequest("max_in_flight must be >= 1".into()));
        }
        if self.timeout_s.is_nan() || self.timeout_s <= 0.0 {
            return Err(GatewayError::InvalidRequest("timeout_s must be positive".into()));
        }
        Ok(())
    }
}

/// One generation call.
#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub prompt: RenderedPrompt,
    pub temperature: f64,
    pub n: u32,
    pub max_new_tokens: u32,
    pub seed: Option<u64>,
    pub want_logprobs: bool,
    pub top_logprobs: u8,
}

impl GenerationRequest {
    pub fn new(prompt: RenderedPrompt, temperature: f64, n: u32, max_new_tokens: u32) -> Self {
        GenerationRequest {
            prompt,
            temperature,
            n,
            max_new_tokens,
            seed: None,
            want_logprobs: false,
            top_logprobs: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_logprobs(mut self, top: u8) -> Self {
        self.want_logprobs = true;
        self.top_logprobs = top;
        self
    }
}

/// Alternative token at one emitted position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// The emitted token at one position plus its top alternatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionLogprobs {
    pub token: String,
    pub top: Vec<TokenLogprob>,
}

/// One completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub completion_tokens: u64,
    /// One entry per emitted token, when requested and supported.
    pub logprobs: Option<Vec<PositionLogprobs>>,
    /// Index of this completion within its request, so callers can reorder
    /// deterministically.
    pub choice_index: usize,
}

/// How a label distribution was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionMethod {
    /// Read A/B alternatives at the answer position of a greedy decode.
    Scored,
    /// Count parsed answers over sampled completions, with additive smoothing.
    MonteCarlo,
}

/// Verifier probability over the two labels; strictly interior and summing
/// to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub p_a: f64,
    pub p_b: f64,
    pub method: DistributionMethod,
    /// Total samples drawn (monte_carlo only), including unparseable ones.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support_samples: Option<u32>,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after retries: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("provider refused the request: {0}")]
    ProviderRefusal(String),
    #[error("request timed out")]
    Timeout,
    #[error("endpoint does not support per-position logprobs")]
    ScoringUnsupported,
    #[error("greedy decode never emitted a readable answer tag")]
    NoAnswerPosition,
    #[error("no sample produced a readable answer")]
    AllSamplesUnparseable,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    fn retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_) | GatewayError::Timeout)
    }
}

/// Anything that can serve completions.
#[async_trait]
pub trait Oracle: Send + Sync {
    async fn generate(&self, req: &GenerationRequest) -> Result<Vec<GenerationResult>, GatewayError>;

    fn supports_logprobs(&self) -> bool;

    fn top_logprobs_cap(&self) -> u8 {
        default_top_logprobs_cap()
    }
}

/// Retry schedule for transient transport failures: exponential backoff with
/// full jitter drawn from the seeded stream, so batch runs are reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 1000,
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32, seed: u64, prompt_digest: &str) -> Duration {
        let ceiling_ms =
            (self.base_delay_ms as f64 * self.factor.powi(attempt as i32 - 1)).max(1.0);
        let mut rng = stream_rng(
            seed,
            "gateway.retry",
            &[prompt_digest.as_bytes(), &attempt.to_le_bytes()],
        );
        Duration::from_millis(rng.random_range(0..ceiling_ms as u64 + 1))
    }
}

/// Chat-completions client for one endpoint, with a per-endpoint in-flight
/// cap enforced internally.
pub struct HttpOracle {
    endpoint: OracleEndpoint,
    client: reqwest::Client,
    limiter: Arc<Semaphore>,
    retry: RetryPolicy,
    seed: u64,
}

impl HttpOracle {
    pub fn new(endpoint: OracleEndpoint, retry: RetryPolicy, seed: u64) -> Result<Self, GatewayError> {
        endpoint.validate()?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(endpoint.timeout_s))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let limiter = Arc::new(Semaphore::new(endpoint.max_in_flight));
        Ok(HttpOracle {
            endpoint,
            client,
            limiter,
            retry,
            seed,
        })
    }

    pub fn endpoint(&self) -> &OracleEndpoint {
        &self.endpoint
    }

    fn url(&self) -> String {
        format!(
            "{}{}",
            self.endpoint.base_address.trim_end_matches('/'),
            self.endpoint.api_path
        )
    }

    fn bearer_token(&self) -> Result<Option<String>, GatewayError> {
        match &self.endpoint.credential_ref {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                GatewayError::Auth(format!("environment variable `{var}` is not set"))
            }),
        }
    }

    async fn send_once(
        &self,
        body: &wire::Request<'_>,
        token: Option<&str>,
    ) -> Result<wire::Response, GatewayError> {
        let mut builder = self.client.post(self.url()).json(body);
        if let Some(token) = token {
            builder = builder.bearer_auth(token);
        }
        let resp = builder.send().await.map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout
            } else {
                GatewayError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.is_success() {
            return resp
                .json::<wire::Response>()
                .await
                .map_err(|e| GatewayError::ProviderRefusal(format!("malformed response body: {e}")));
        }
        let detail = resp.text().await.unwrap_or_default();
        let detail = format!("{status}: {}", truncate(&detail, 300));
        match status.as_u16() {
            401 | 403 => Err(GatewayError::Auth(detail)),
            408 | 429 => Err(GatewayError::Transport(detail)),
            s if s >= 500 => Err(GatewayError::Transport(detail)),
            _ => Err(GatewayError::ProviderRefusal(detail)),
        }
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

#[async_trait]
impl Oracle for HttpOracle {
    async fn generate(&self, req: &GenerationRequest) -> Result<Vec<GenerationResult>, GatewayError> {
        if req.n < 1 {
            return Err(GatewayError::InvalidRequest("n must be >= 1".into()));
        }
        if req.top_logprobs > self.endpoint.top_logprobs_cap {
            return Err(GatewayError::InvalidRequest(format!(
                "top_logprobs {} exceeds endpoint cap {}",
                req.top_logprobs, self.endpoint.top_logprobs_cap
            )));
        }
        // Resolve the credential before any network traffic.
        let token = self.bearer_token()?;

        let body = wire::Request {
            model: &self.endpoint.model_id,
            messages: vec![wire::Message {
                role: "user",
                content: &req.prompt.text,
            }],
            temperature: req.temperature,
            n: req.n,
            max_tokens: req.max_new_tokens,
            seed: req.seed,
            logprobs: req.want_logprobs.then_some(true),
            top_logprobs: req.want_logprobs.then_some(req.top_logprobs as u32),
        };

        let _permit = self
            .limiter
            .acquire()
            .await
            .expect("gateway semaphore closed");

        let prompt_digest = text_digest(&req.prompt.text);
        let mut attempt = 1;
        let response = loop {
            tracing::debug!(
                endpoint = %self.endpoint.base_address,
                model = %self.endpoint.model_id,
                prompt_digest = %prompt_digest,
                n = req.n,
                attempt,
                "chat completion request"
            );
            match self.send_once(&body, token.as_deref()).await {
                Ok(resp) => break resp,
                Err(err) if err.retryable() && attempt < self.retry.max_attempts => {
                    let delay = self.retry.delay(attempt, self.seed, &prompt_digest);
                    tracing::debug!(attempt, ?delay, error = %err, "retrying after transient failure");
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        };

        Ok(wire::into_results(response, req.n))
    }

    fn supports_logprobs(&self) -> bool {
        self.endpoint.supports_logprobs
    }

    fn top_logprobs_cap(&self) -> u8 {
        self.endpoint.top_logprobs_cap
    }
}

/// Chat-completions wire bodies, shared with the loopback mock server.
pub(crate) mod wire {
    use serde::{Deserialize, Serialize};

    use super::{GenerationResult, PositionLogprobs, TokenLogprob};

    #[derive(Debug, Serialize)]
    pub(crate) struct Request<'a> {
        pub model: &'a str,
        pub messages: Vec<Message<'a>>,
        pub temperature: f64,
        pub n: u32,
        pub max_tokens: u32,
        #[serde(skip_serializing_if = "Option::is_none")]
        pub seed: Option<u64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        pub logprobs: Option<bool>,
        #[serde(skip_serializing_if = "Option::is_none")]
        pub top_logprobs: Option<u32>,
    }

    #[derive(Debug, Serialize)]
    pub(crate) struct Message<'a> {
        pub role: &'a str,
        pub content: &'a str,
    }

    /// Owned request shape for the loopback server side.
    #[derive(Debug, Serialize, Deserialize)]
    pub(crate) struct OwnedRequest {
        #[serde(default)]
        pub model: String,
        pub messages: Vec<OwnedMessage>,
        #[serde(default)]
        pub temperature: f64,
        #[serde(default = "one")]
        pub n: u32,
        #[serde(default)]
        pub max_tokens: u32,
        #[serde(default)]
        pub seed: Option<u64>,
        #[serde(default)]
        pub logprobs: Option<bool>,
        #[serde(default)]
        pub top_logprobs: Option<u32>,
    }

    fn one() -> u32 {
        1
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub(crate) struct OwnedMessage {
        pub role: String,
        pub content: String,
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub(crate) struct Response {
        pub choices: Vec<Choice>,
        #[serde(default)]
        pub usage: Option<Usage>,
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub(crate) struct Choice {
        #[serde(default)]
        pub index: Option<u32>,
        pub message: ResponseMessage,
        #[serde(default)]
        pub logprobs: Option<Logprobs>,
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub(crate) struct ResponseMessage {
        pub role: String,
        #[serde(default)]
        pub content: Option<String>,
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub(crate) struct Logprobs {
        #[serde(default)]
        pub content: Option<Vec<TokenEntry>>,
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub(crate) struct TokenEntry {
        pub token: String,
        pub logprob: f64,
        #[serde(default)]
        pub top_logprobs: Vec<TopEntry>,
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub(crate) struct TopEntry {
        pub token: String,
        pub logprob: f64,
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub(crate) struct Usage {
        #[serde(default)]
        pub completion_tokens: u64,
    }

    /// Convert a wire response to results ordered by choice index. The wire
    /// carries one aggregate completion-token count; it is split evenly over
    /// choices (remainder to the earliest) since per-choice counts are not
    /// part of the protocol.
    pub(crate) fn into_results(resp: Response, n: u32) -> Vec<GenerationResult> {
        let mut choices = resp.choices;
        choices.sort_by_key(|c| c.index.unwrap_or(0));
        let total_tokens = resp.usage.map(|u| u.completion_tokens);
        let count = choices.len().max(1) as u64;

        choices
            .into_iter()
            .enumerate()
            .map(|(i, choice)| {
                let logprobs = choice.logprobs.and_then(|lp| lp.content).map(|entries| {
                    entries
                        .into_iter()
                        .map(|e| PositionLogprobs {
                            token: e.token,
                            top: e
                                .top_logprobs
                                .into_iter()
                                .map(|t| TokenLogprob {
                                    token: t.token,
                                    logprob: t.logprob,
                                })
                                .collect(),
                        })
                        .collect()
                });
                let completion_tokens = match total_tokens {
                    Some(total) => {
                        let base = total / count;
                        let rem = total % count;
                        base + u64::from((i as u64) < rem)
                    }
                    None => 0,
                };
                GenerationResult {
                    text: choice.message.content.unwrap_or_default(),
                    completion_tokens,
                    logprobs,
                    choice_index: i,
                }
            })
            .take(n as usize)
            .collect()
    }
}

/// Sum of completion tokens over a batch of results.
pub fn count_tokens(results: &[GenerationResult]) -> u64 {
    results.iter().map(|r| r.completion_tokens).sum()
}

const INTERIOR_EPS: f64 = 1e-12;

fn interior(p_a: f64) -> (f64, f64) {
    let p_a = p_a.clamp(INTERIOR_EPS, 1.0 - INTERIOR_EPS);
    (p_a, 1.0 - p_a)
}

/// Probability the verifier assigns to each label for one prompt.
///
/// `Scored` greedily decodes the full response (the prompts mandate analysis
/// before the answer), locates the emitted answer token inside
/// `<answer>...</answer>`, and renormalizes the log-probabilities of the
/// literal tokens `A` and `B` at that position. When those tokens are not
/// among the alternatives (tokenizer variance), the call falls back to
/// `MonteCarlo` and the returned method records the downgrade.
///
/// `MonteCarlo` draws `mc_samples` completions at temperature 1.0, counts
/// recoverable answers, and applies additive smoothing `smoothing` to both
/// labels. Unparseable samples are excluded from counts but still counted in
/// `support_samples`.
pub async fn label_distribution(
    oracle: &dyn Oracle,
    prompt: &RenderedPrompt,
    method: DistributionMethod,
    mc_samples: u32,
    smoothing: f64,
    seed: Option<u64>,
    max_new_tokens: u32,
) -> Result<LabelDistribution, GatewayError> {
    match method {
        DistributionMethod::Scored => {
            if !oracle.supports_logprobs() {
                return Err(GatewayError::ScoringUnsupported);
            }
            let top = oracle.top_logprobs_cap().min(20);
            let mut req = GenerationRequest::new(prompt.clone(), 0.0, 1, max_new_tokens)
                .with_logprobs(top);
            req.seed = seed;
            let results = oracle.generate(&req).await?;
            let result = results
                .first()
                .ok_or_else(|| GatewayError::ProviderRefusal("no choices returned".into()))?;

            let offset = answer_letter_offset(&result.text).ok_or(GatewayError::NoAnswerPosition)?;
            let scored = result.logprobs.as_ref().and_then(|positions| {
                let mut cursor = 0usize;
                let position = positions.iter().find(|p| {
                    let start = cursor;
                    cursor += p.token.len();
                    offset >= start && offset < cursor
                })?;
                let lp = |label: Label| {
                    position
                        .top
                        .iter()
                        .find(|t| t.token == label.as_str())
                        .map(|t| t.logprob)
                };
                Some((lp(Label::A)?, lp(Label::B)?))
            });

            match scored {
                Some((lp_a, lp_b)) => {
                    let m = lp_a.max(lp_b);
                    let ea = (lp_a - m).exp();
                    let eb = (lp_b - m).exp();
                    let (p_a, p_b) = interior(ea / (ea + eb));
                    Ok(LabelDistribution {
                        p_a,
                        p_b,
                        method: DistributionMethod::Scored,
                        support_samples: None,
                    })
                }
                None => {
                    tracing::debug!(
                        prompt_digest = %text_digest(&prompt.text),
                        "A/B alternatives unavailable at answer position; downgrading to monte_carlo"
                    );
                    Box::pin(label_distribution(
                        oracle,
                        prompt,
                        DistributionMethod::MonteCarlo,
                        mc_samples,
                        smoothing,
                        seed,
                        max_new_tokens,
                    ))
                    .await
                }
            }
        }
        DistributionMethod::MonteCarlo => {
            if mc_samples < 1 {
                return Err(GatewayError::InvalidRequest("mc_samples must be >= 1".into()));
            }
            let mut req = GenerationRequest::new(prompt.clone(), 1.0, mc_samples, max_new_tokens);
            req.seed = seed;
            let results = oracle.generate(&req).await?;
            let mut count_a = 0u32;
            let mut count_b = 0u32;
            for result in &results {
                match extract_answer(&result.text) {
                    Some(Label::A) => count_a += 1,
                    Some(Label::B) => count_b += 1,
                    None => {}
                }
            }
            if count_a + count_b == 0 {
                return Err(GatewayError::AllSamplesUnparseable);
            }
            let denom = f64::from(count_a + count_b) + 2.0 * smoothing;
            let (p_a, p_b) = interior((f64::from(count_a) + smoothing) / denom);
            Ok(LabelDistribution {
                p_a,
                p_b,
                method: DistributionMethod::MonteCarlo,
                support_samples: Some(results.len() as u32),
            })
        }
    }
}
