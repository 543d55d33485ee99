//! Run configuration: endpoint bindings, seeds, and method parameters.
//!
//! The config file is TOML. Every output record is stamped with
//! [`RunConfig::core_digest`], a hash over the outcome-relevant settings, so
//! downstream commands can detect mixed-config pipelines. Concurrency and
//! I/O paths are deliberately outside the digest: they change throughput,
//! never bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::hex_digest;
use crate::eval::OrderPolicy;
use crate::gateway::{DistributionMethod, GatewayError, HttpOracle, Oracle, OracleEndpoint, RetryPolicy};
use crate::mock_oracle::{ScriptError, ScriptedOracle};
use crate::reward::{PresetSpec, RewardWeights};
use crate::synthesis::SynthesisParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse config {path}: {source}")]
    Parse {
        path: String,
        source: Box<toml::de::Error>,
    },
    #[error("no endpoint configured for role `{0}`")]
    UnknownRole(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Script(#[from] ScriptError),
}

/// Synthesis section (everything but the run seed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisSettings {
    pub k: u32,
    pub retry_cap: u32,
    pub temperature: f64,
    pub margin_method: DistributionMethod,
    pub mc_samples: u32,
    pub smoothing: f64,
    pub max_new_tokens: u32,
}

impl Default for SynthesisSettings {
    fn default() -> Self {
        let d = SynthesisParams::default();
        SynthesisSettings {
            k: d.k,
            retry_cap: d.retry_cap,
            temperature: d.temperature,
            margin_method: d.margin_method,
            mc_samples: d.mc_samples,
            smoothing: d.smoothing,
            max_new_tokens: d.max_new_tokens,
        }
    }
}

impl SynthesisSettings {
    pub fn params(&self, seed: u64) -> SynthesisParams {
        SynthesisParams {
            k: self.k,
            retry_cap: self.retry_cap,
            temperature: self.temperature,
            margin_method: self.margin_method,
            mc_samples: self.mc_samples,
            smoothing: self.smoothing,
            max_new_tokens: self.max_new_tokens,
            seed,
        }
    }
}

/// Inference-time temperatures and budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceSettings {
    pub rubric_temperature: f64,
    pub verifier_temperature: f64,
    pub max_new_tokens: u32,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        InferenceSettings {
            rubric_temperature: 1.0,
            verifier_temperature: 0.0,
            max_new_tokens: 2048,
        }
    }
}

/// Reward weighting: an explicit weight triple or a named preset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardSettings {
    pub weights: Option<RewardWeights>,
    pub preset: Option<PresetSpec>,
}

/// Evaluation defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub order_policy: OrderPolicy,
    pub bin_width: f64,
    pub warmup: u32,
    pub votes: u32,
    pub n_candidates: u32,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            order_policy: OrderPolicy::BothOrders,
            bin_width: 0.1,
            warmup: 2,
            votes: 5,
            n_candidates: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrySettings {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub factor: f64,
}

impl Default for RetrySettings {
    fn default() -> Self {
        let d = RetryPolicy::default();
        RetrySettings {
            max_attempts: d.max_attempts,
            base_delay_ms: d.base_delay_ms,
            factor: d.factor,
        }
    }
}

impl RetrySettings {
    pub fn policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            base_delay_ms: self.base_delay_ms,
            factor: self.factor,
        }
    }
}

/// Full run configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub concurrency: Option<usize>,
    /// Role name (generator, verifier, scorer, policy) to endpoint.
    pub endpoints: BTreeMap<String, OracleEndpoint>,
    pub retry: RetrySettings,
    pub synthesis: SynthesisSettings,
    pub inference: InferenceSettings,
    pub reward: RewardSettings,
    pub eval: EvalSettings,
    /// Directory mock:// script paths resolve against; set at load time.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// The digest-relevant view: everything that can change output bytes.
#[derive(Serialize)]
struct DigestView<'c> {
    seed: u64,
    endpoints: &'c BTreeMap<String, OracleEndpoint>,
    retry: &'c RetrySettings,
    synthesis: &'c SynthesisSettings,
    inference: &'c InferenceSettings,
    reward: &'c RewardSettings,
    eval: &'c EvalSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: RunConfig = toml::from_str(&raw).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source: Box::new(source),
        })?;
        config.base_dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(config)
    }

    pub fn concurrency(&self) -> usize {
        self.concurrency.unwrap_or(4).max(1)
    }

    pub fn endpoint(&self, role: &str) -> Result<&OracleEndpoint, ConfigError> {
        self.endpoints
            .get(role)
            .ok_or_else(|| ConfigError::UnknownRole(role.to_string()))
    }

    /// Hash over outcome-relevant settings; stamped into every output record.
    pub fn core_digest(&self) -> String {
        let view = DigestView {
            seed: self.seed,
            endpoints: &self.endpoints,
            retry: &self.retry,
            synthesis: &self.synthesis,
            inference: &self.inference,
            reward: &self.reward,
            eval: &self.eval,
        };
        let canonical = serde_json::to_string(&serde_json::to_value(&view).expect("config serializes"))
            .expect("canonical json");
        hex_digest(&[canonical.as_bytes()])
    }

    /// Construct the oracle bound to `role`. `mock://path` base addresses
    /// load a script fixture (relative paths resolve against the config
    /// file's directory); anything else is a live HTTP endpoint.
    pub fn build_oracle(&self, role: &str) -> Result<Arc<dyn Oracle>, ConfigError> {
        let endpoint = self.endpoint(role)?;
        if let Some(script_path) = endpoint.base_address.strip_prefix("mock://") {
            let mut path = PathBuf::from(script_path);
            if path.is_relative() {
                path = self.base_dir.join(path);
            }
            let mut oracle = ScriptedOracle::from_file(&path)?;
            if !endpoint.supports_logprobs {
                oracle = oracle.without_logprobs();
            }
            return Ok(Arc::new(oracle));
        }
        let oracle = HttpOracle::new(endpoint.clone(), self.retry.policy(), self.seed)?;
        Ok(Arc::new(oracle))
    }
}
