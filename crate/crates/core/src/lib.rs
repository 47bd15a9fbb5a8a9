//! Context-fidelity boosting: a decoding-time intervention that adds a bias
//! to the logits of tokens found in the source context, so generation stays
//! closer to the evidence it was given.
//!
//! Three strategies are provided:
//!
//! * **static**: a fixed boost `delta` on every source-supported token;
//! * **context-aware**: the boost is interpolated between `delta_min` and
//!   `delta_max` by the Jensen-Shannon divergence between the next-token
//!   distributions with and without the context;
//! * **token-aware**: the context-aware boost is redistributed per token by
//!   attention over the token's source positions and its mean cosine
//!   similarity to the source span.
//!
//! The engine runs over any [`backend::LanguageModel`]. Two desk-scale
//! backends ship with the crate: a scripted table-driven model and a
//! smoothed bigram model.

pub mod backend;
pub mod boosting;
pub mod cli;
pub mod config;
pub mod cost;
pub mod decode;
pub mod error;
pub mod eval;
pub mod support;
pub mod types;

pub use config::{validate_config, BoostConfig, ConfigError, ConfigFile, SamplerKind};
pub use decode::{generate, generate_unboosted, GenerationResult, StopReason};
pub use error::{Error, Result};
pub use types::{BoostMode, Distribution, StepRecord, TokenId, TokenSequence};
