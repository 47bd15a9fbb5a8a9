//! The language-model interface the decoder drives, and the desk-scale
//! backends that implement it.
//!
//! A backend always supplies next-token logits. Attention over requested
//! prompt positions and token embeddings are optional and advertised through
//! [`BackendCapabilities`]; asking for an undeclared capability is an error,
//! never a fabricated answer.

mod bigram;
mod scripted;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use bigram::{build_bigram_backend, BigramModel, BigramParams};
pub use scripted::{ScriptedModel, ScriptedModelSpec, ScriptedStep};

use crate::error::{Error, Result};
use crate::types::{Distribution, TokenId, TokenSequence};

pub const EOS_TOKEN: &str = "</s>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendCapabilities {
    pub provides_logits: bool,
    pub provides_attention: bool,
    pub provides_embeddings: bool,
    pub vocab_size: usize,
    pub embedding_dim: Option<usize>,
    pub eos_id: TokenId,
    pub special_token_ids: BTreeSet<TokenId>,
}

impl BackendCapabilities {
    pub fn supports_token_aware(&self) -> bool {
        self.provides_attention && self.provides_embeddings
    }

    pub fn is_special(&self, token: TokenId) -> bool {
        self.special_token_ids.contains(&token)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub next_token_logits: Distribution,
    /// Attention from the final position to each requested position. Values
    /// are a restriction of a full attention row and need not sum to one.
    pub attention_to_positions: Option<BTreeMap<usize, f64>>,
}

/// A causal language model as seen by the decoding loop.
pub trait LanguageModel {
    fn capabilities(&self) -> &BackendCapabilities;

    /// Called once at the start of every generation. Stateless backends
    /// ignore it; the scripted backend rewinds its script.
    fn begin_sequence(&mut self) {}

    /// Next-token logits for the full sequence, plus attention mass from the
    /// last position to each of `attention_positions` when that set is
    /// non-empty.
    fn forward(&mut self, tokens: &TokenSequence, attention_positions: &[usize]) -> Result<ForwardOutput>;

    fn embed(&self, token: TokenId) -> Result<Vec<f64>>;

    fn tokenize(&self, text: &str) -> Result<TokenSequence>;

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String>;
}

impl<M: LanguageModel + ?Sized> LanguageModel for Box<M> {
    fn capabilities(&self) -> &BackendCapabilities {
        (**self).capabilities()
    }

    fn begin_sequence(&mut self) {
        (**self).begin_sequence()
    }

    fn forward(&mut self, tokens: &TokenSequence, attention_positions: &[usize]) -> Result<ForwardOutput> {
        (**self).forward(tokens, attention_positions)
    }

    fn embed(&self, token: TokenId) -> Result<Vec<f64>> {
        (**self).embed(token)
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        (**self).tokenize(text)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        (**self).detokenize(tokens)
    }
}

/// Closed whitespace-delimited vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new(words: Vec<String>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::Input("vocabulary is empty".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::Input(format!("vocabulary entry {i} ({w:?}) is not a single word")));
            }
            if index.insert(w.clone(), TokenId::from(i)).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        Ok(Self { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id.index()).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        let mut tokens = Vec::new();
        let mut unknown: Vec<String> = Vec::new();
        for word in text.split_whitespace() {
            match self.id(word) {
                Some(id) => tokens.push(id),
                None => {
                    if !unknown.iter().any(|u| u == word) {
                        unknown.push(word.to_string());
                    }
                }
            }
        }
        if !unknown.is_empty() {
            return Err(Error::OutOfVocabulary(unknown));
        }
        Ok(TokenSequence::prompt(tokens))
    }

    pub fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let words = tokens
            .iter()
            .map(|&t| self.word(t).ok_or_else(|| Error::Input(format!("token id {t} out of range"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }

    pub(crate) fn check_ids(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        if let Some(bad) = tokens.iter().find(|t| t.index() >= self.len()) {
            return Err(Error::Input(format!("token id {bad} >= vocab size {}", self.len())));
        }
        Ok(())
    }
}
