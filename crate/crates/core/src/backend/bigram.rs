//! Smoothed bigram model built from a plain-text corpus.
//!
//! Each non-empty corpus line is a sentence terminated by `</s>`. The model
//! has no attention of its own: requested positions each receive `1/n` mass.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};

use super::{BackendCapabilities, ForwardOutput, LanguageModel, Vocabulary, EOS_TOKEN};
use crate::error::{Error, Result};
use crate::types::{Distribution, TokenId, TokenSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct BigramParams {
    pub embedding_dim: usize,
    pub seed: u64,
    pub smoothing: f64,
    /// Words added to the vocabulary without corpus counts, e.g. prompt
    /// template scaffolding.
    pub extra_tokens: Vec<String>,
}

impl Default for BigramParams {
    fn default() -> Self {
        Self { embedding_dim: 16, seed: 0, smoothing: 0.1, extra_tokens: Vec::new() }
    }
}

#[derive(Debug, Clone)]
pub struct BigramModel {
    vocab: Vocabulary,
    counts: Vec<Vec<u32>>,
    logits: Vec<Vec<f64>>,
    embeddings: Vec<Vec<f64>>,
    caps: BackendCapabilities,
}

/// `logit(next | prev) = ln(count(prev, next) + smoothing)`.
pub fn build_bigram_backend(corpus: &str, embedding_dim: usize, seed: u64, smoothing: f64) -> Result<BigramModel> {
    BigramModel::build(corpus, &BigramParams { embedding_dim, seed, smoothing, extra_tokens: Vec::new() })
}

impl BigramModel {
    pub fn build(corpus: &str, params: &BigramParams) -> Result<Self> {
        if params.embedding_dim == 0 {
            return Err(Error::Input("embedding_dim must be positive".into()));
        }
        if !(params.smoothing.is_finite() && params.smoothing > 0.0) {
            return Err(Error::Input(format!("smoothing must be > 0, got {}", params.smoothing)));
        }

        let sentences: Vec<Vec<&str>> =
            corpus.lines().map(|l| l.split_whitespace().collect::<Vec<_>>()).filter(|s| !s.is_empty()).collect();
        let distinct: BTreeSet<&str> = sentences.iter().flatten().copied().collect();
        if distinct.len() < 2 {
            return Err(Error::Corpus(format!("corpus needs at least 2 distinct tokens, found {}", distinct.len())));
        }

        let mut words = vec![EOS_TOKEN.to_string()];
        let mut seen: BTreeSet<String> = BTreeSet::from([EOS_TOKEN.to_string()]);
        let extra = params.extra_tokens.iter().map(String::as_str);
        for w in extra.chain(sentences.iter().flatten().copied()) {
            if seen.insert(w.to_string()) {
                words.push(w.to_string());
            }
        }
        let vocab = Vocabulary::new(words)?;
        let n = vocab.len();
        let eos_id = TokenId(0);

        let mut counts = vec![vec![0u32; n]; n];
        for sentence in &sentences {
            let ids: Vec<usize> = sentence.iter().map(|w| vocab.id(w).expect("word was inserted").index()).collect();
            for pair in ids.windows(2) {
                counts[pair[0]][pair[1]] += 1;
            }
            counts[*ids.last().expect("non-empty sentence")][eos_id.index()] += 1;
        }
        let logits =
            counts.iter().map(|row| row.iter().map(|&c| (f64::from(c) + params.smoothing).ln()).collect()).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let embeddings =
            (0..n).map(|_| (0..params.embedding_dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();

        let caps = BackendCapabilities {
            provides_logits: true,
            provides_attention: true,
            provides_embeddings: true,
            vocab_size: n,
            embedding_dim: Some(params.embedding_dim),
            eos_id,
            special_token_ids: BTreeSet::from([eos_id]),
        };
        Ok(Self { vocab, counts, logits, embeddings, caps })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn count(&self, prev: TokenId, next: TokenId) -> u32 {
        self.counts[prev.index()][next.index()]
    }
}

impl LanguageModel for BigramModel {
    fn capabilities(&self) -> &BackendCapabilities {
        &self.caps
    }

    fn forward(&mut self, tokens: &TokenSequence, attention_positions: &[usize]) -> Result<ForwardOutput> {
        self.vocab.check_ids(&tokens.tokens)?;
        let last = *tokens.tokens.last().expect("checked non-empty");
        let attention_to_positions = if attention_positions.is_empty() {
            None
        } else {
            if let Some(p) = attention_positions.iter().find(|&&p| p >= tokens.len()) {
                return Err(Error::Input(format!("attention position {p} beyond sequence length {}", tokens.len())));
            }
            let mass = 1.0 / attention_positions.len() as f64;
            Some(attention_positions.iter().map(|&p| (p, mass)).collect())
        };
        Ok(ForwardOutput {
            next_token_logits: Distribution::logits(self.logits[last.index()].clone()),
            attention_to_positions,
        })
    }

    fn embed(&self, token: TokenId) -> Result<Vec<f64>> {
        self.embeddings
            .get(token.index())
            .cloned()
            .ok_or_else(|| Error::Input(format!("token id {token} out of range")))
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        self.vocab.tokenize(text)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        self.vocab.detokenize(tokens)
    }
}
