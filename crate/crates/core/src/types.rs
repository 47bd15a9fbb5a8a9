//! Domain types shared by every stage of the decoding pipeline.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability vectors must sum to one within this tolerance.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Index into a backend vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(i as u32)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Prompt,
    Generated,
}

/// An ordered run of token ids, tagged with where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<TokenId>,
    pub origin: Origin,
}

impl TokenSequence {
    pub fn prompt(tokens: Vec<TokenId>) -> Self {
        Self { tokens, origin: Origin::Prompt }
    }

    pub fn generated(tokens: Vec<TokenId>) -> Self {
        Self { tokens, origin: Origin::Generated }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.tokens
    }
}

/// Which boosting strategy shapes the logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostMode {
    /// Fixed additive boost `delta` on every source-supported token.
    Static,
    /// Boost interpolated between `delta_min` and `delta_max` by the
    /// with/without-context divergence.
    #[serde(alias = "context")]
    ContextAware,
    /// Context-aware boost redistributed per token by attention and
    /// semantic relevance.
    #[serde(alias = "token")]
    TokenAware,
}

impl BoostMode {
    pub fn needs_divergence(self) -> bool {
        !matches!(self, BoostMode::Static)
    }
}

impl fmt::Display for BoostMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoostMode::Static => "static",
            BoostMode::ContextAware => "context_aware",
            BoostMode::TokenAware => "token_aware",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistKind {
    Logits,
    Probabilities,
}

/// A score vector over the whole vocabulary at one decoding step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    values: Vec<f64>,
    kind: DistKind,
}

impl Distribution {
    pub fn logits(values: Vec<f64>) -> Self {
        Self { values, kind: DistKind::Logits }
    }

    /// Wraps a probability vector, checking non-negativity and unit mass.
    pub fn probabilities(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDistribution("empty probability vector".into()));
        }
        if let Some((i, p)) = values.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {i} is {p}")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("mass sums to {sum}")));
        }
        Ok(Self { values, kind: DistKind::Probabilities })
    }

    pub(crate) fn probabilities_unchecked(values: Vec<f64>) -> Self {
        Self { values, kind: DistKind::Probabilities }
    }

    pub fn kind(&self) -> DistKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, token: TokenId) -> Option<f64> {
        self.values.get(token.index()).copied()
    }
}

/// Audit record for one iteration of the decoding loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: usize,
    /// JSD reading used this step; absent in static mode.
    pub divergence_used: Option<f64>,
    pub delta_effective: f64,
    pub boosted_token_count: usize,
    pub boost_vector_sparse: BTreeMap<TokenId, f64>,
    pub chosen_token: TokenId,
    /// Probability of `chosen_token` under the softmax of the shaped logits.
    pub chosen_prob: f64,
}
