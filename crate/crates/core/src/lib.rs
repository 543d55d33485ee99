//! Pipeline for rubric-guided reward modeling over binary preference data.
//!
//! The library covers the full loop around an external RL/DPO trainer:
//! contrastive rubric synthesis from preference examples, training-data
//! emission, a rule-based reward scoring service, selective rubric-augmented
//! judging with fallback, and the evaluation/analysis harness. All model
//! access goes through [`gateway::Oracle`], so every pipeline stage runs
//! unchanged against live endpoints or the scripted [`mock_oracle`].

pub mod config;
pub mod datasets;
pub mod digest;
pub mod eval;
pub mod exec;
pub mod gateway;
pub mod inference;
pub mod margin;
pub mod mock_oracle;
pub mod prompts;
pub mod records;
pub mod reward;
pub mod service;
pub mod synthesis;
pub mod tagparse;
pub mod tournament;
pub mod types;

pub use types::{Assessment, Label, TaskKind};
