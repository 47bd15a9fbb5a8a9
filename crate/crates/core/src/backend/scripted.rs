//! Table-driven backend whose outputs are fixed in advance.
//!
//! Forward calls are answered from `steps` in call order. A generation in an
//! adaptive mode makes two calls before the loop (with-context prompt, then
//! query-only prompt); static mode makes none. `begin_sequence` rewinds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendCapabilities, ForwardOutput, LanguageModel, Vocabulary, EOS_TOKEN};
use crate::error::{Error, Result};
use crate::types::{Distribution, TokenId, TokenSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedStep {
    pub logits: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<BTreeMap<usize, f64>>,
    /// Replaces the embedding table from this call onward.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<Vec<Vec<f64>>>,
}

impl ScriptedStep {
    pub fn logits(logits: Vec<f64>) -> Self {
        Self { logits, attention: None, embeddings: None }
    }

    pub fn with_attention(mut self, attention: BTreeMap<usize, f64>) -> Self {
        self.attention = Some(attention);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedModelSpec {
    pub vocab: Vec<String>,
    pub steps: Vec<ScriptedStep>,
    #[serde(default, rename = "embeddings", skip_serializing_if = "Option::is_none")]
    pub default_embeddings: Option<Vec<Vec<f64>>>,
    /// End-of-sequence word; defaults to `</s>` and must be in `vocab`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos: Option<String>,
}

impl ScriptedModelSpec {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("scripted model spec", e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedModel {
    vocab: Vocabulary,
    steps: Vec<ScriptedStep>,
    embeddings: Option<Vec<Vec<f64>>>,
    caps: BackendCapabilities,
    calls: usize,
}

fn check_table(table: &[Vec<f64>], vocab: usize, what: &str) -> Result<usize> {
    if table.len() != vocab {
        return Err(Error::Script(format!("{what} has {} rows, vocabulary has {vocab}", table.len())));
    }
    let dim = table[0].len();
    if dim == 0 {
        return Err(Error::Script(format!("{what} rows are empty")));
    }
    for (i, row) in table.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::Script(format!("{what} row {i} has length {}, expected {dim}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Script(format!("{what} row {i} is not finite")));
        }
    }
    Ok(dim)
}

impl ScriptedModel {
    pub fn new(spec: ScriptedModelSpec) -> Result<Self> {
        let vocab = Vocabulary::new(spec.vocab)?;
        let n = vocab.len();
        let eos_word = spec.eos.as_deref().unwrap_or(EOS_TOKEN);
        let eos_id = vocab
            .id(eos_word)
            .ok_or_else(|| Error::Script(format!("eos word {eos_word:?} is not in the vocabulary")))?;

        let embedding_dim = match &spec.default_embeddings {
            Some(t) => Some(check_table(t, n, "embeddings")?),
            None => None,
        };
        for (i, step) in spec.steps.iter().enumerate() {
            if step.logits.len() != n {
                return Err(Error::Script(format!("step {i} has {} logits, vocabulary has {n}", step.logits.len())));
            }
            if let Some(att) = &step.attention {
                if let Some((p, v)) = att.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
                    return Err(Error::Script(format!("step {i} attention at {p} is {v}")));
                }
            }
            if let Some(t) = &step.embeddings {
                let dim = check_table(t, n, &format!("step {i} embeddings"))?;
                if embedding_dim != Some(dim) {
                    return Err(Error::Script(format!(
                        "step {i} embedding override needs a default table of the same width"
                    )));
                }
            }
        }

        let caps = BackendCapabilities {
            provides_logits: true,
            provides_attention: !spec.steps.is_empty() && spec.steps.iter().all(|s| s.attention.is_some()),
            provides_embeddings: embedding_dim.is_some(),
            vocab_size: n,
            embedding_dim,
            eos_id,
            special_token_ids: BTreeSet::from([eos_id]),
        };
        Ok(Self { vocab, steps: spec.steps, embeddings: spec.default_embeddings, caps, calls: 0 })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::new(ScriptedModelSpec::from_json_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(ScriptedModelSpec::load(path)?)
    }

    /// Number of forward calls answered since the last rewind.
    pub fn calls_served(&self) -> usize {
        self.calls
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn active_embeddings(&self) -> Option<&Vec<Vec<f64>>> {
        self.steps[..self.calls.min(self.steps.len())]
            .iter()
            .rev()
            .find_map(|s| s.embeddings.as_ref())
            .or(self.embeddings.as_ref())
    }
}

impl LanguageModel for ScriptedModel {
    fn capabilities(&self) -> &BackendCapabilities {
        &self.caps
    }

    fn begin_sequence(&mut self) {
        self.calls = 0;
    }

    fn forward(&mut self, tokens: &TokenSequence, attention_positions: &[usize]) -> Result<ForwardOutput> {
        self.vocab.check_ids(&tokens.tokens)?;
        if !attention_positions.is_empty() && !self.caps.provides_attention {
            return Err(Error::Capability("scripted model was given no attention rows".into()));
        }
        let step = self.steps.get(self.calls).ok_or_else(|| {
            Error::Script(format!("script exhausted: {} steps, call {} requested", self.steps.len(), self.calls))
        })?;
        let attention_to_positions = if attention_positions.is_empty() {
            None
        } else {
            let row = step.attention.as_ref().expect("capability checked above");
            Some(attention_positions.iter().filter_map(|p| row.get(p).map(|v| (*p, *v))).collect())
        };
        let out =
            ForwardOutput { next_token_logits: Distribution::logits(step.logits.clone()), attention_to_positions };
        self.calls += 1;
        Ok(out)
    }

    fn embed(&self, token: TokenId) -> Result<Vec<f64>> {
        let table = self
            .active_embeddings()
            .ok_or_else(|| Error::Capability("scripted model has no embedding table".into()))?;
        table.get(token.index()).cloned().ok_or_else(|| Error::Input(format!("token id {token} out of range")))
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        self.vocab.tokenize(text)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        self.vocab.detokenize(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
    }

    fn spec() -> ScriptedModelSpec {
        ScriptedModelSpec {
            vocab: vec!["</s>".into(), "a".into(), "b".into()],
            steps: vec![ScriptedStep::logits(vec![1.0, 2.0, 3.0]), ScriptedStep::logits(vec![0.0, 0.0, 9.0])],
            default_embeddings: Some(identity(3)),
            eos: None,
        }
    }

    fn seq(ids: &[u32]) -> TokenSequence {
        TokenSequence::prompt(ids.iter().map(|&i| TokenId(i)).collect())
    }

    #[test]
    fn serves_steps_in_order_exactly() {
        let mut m = ScriptedModel::new(spec()).unwrap();
        let out = m.forward(&seq(&[1]), &[]).unwrap();
        assert_eq!(out.next_token_logits.values(), &[1.0, 2.0, 3.0]);
        assert!(out.attention_to_positions.is_none());
        assert_eq!(m.forward(&seq(&[1, 2]), &[]).unwrap().next_token_logits.values(), &[0.0, 0.0, 9.0]);
        assert!(matches!(m.forward(&seq(&[1]), &[]), Err(Error::Script(_))));
        m.begin_sequence();
        assert_eq!(m.forward(&seq(&[1]), &[]).unwrap().next_token_logits.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn attention_without_capability_is_rejected() {
        let mut m = ScriptedModel::new(spec()).unwrap();
        assert!(!m.capabilities().provides_attention);
        assert!(matches!(m.forward(&seq(&[1, 2]), &[0, 1]), Err(Error::Capability(_))));
    }

    #[test]
    fn identity_embeddings_and_determinism() {
        let m = ScriptedModel::new(spec()).unwrap();
        assert_eq!(m.embed(TokenId(2)).unwrap(), vec![0.0, 0.0, 1.0]);
        let a = m.embed(TokenId(1)).unwrap();
        let b = m.embed(TokenId(1)).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn missing_embeddings_is_a_capability_error() {
        let mut s = spec();
        s.default_embeddings = None;
        let m = ScriptedModel::new(s).unwrap();
        assert!(!m.capabilities().provides_embeddings);
        assert!(matches!(m.embed(TokenId(0)), Err(Error::Capability(_))));
    }

    #[test]
    fn attention_restricted_to_requested_positions() {
        let mut s = spec();
        for step in &mut s.steps {
            step.attention = Some(BTreeMap::from([(0, 0.5), (1, 0.25), (2, 0.25)]));
        }
        let mut m = ScriptedModel::new(s).unwrap();
        let out = m.forward(&seq(&[1, 2, 1]), &[0, 2]).unwrap();
        assert_eq!(out.attention_to_positions.unwrap(), BTreeMap::from([(0, 0.5), (2, 0.25)]));
    }

    #[test]
    fn embedding_override_takes_effect_after_its_step() {
        let mut s = spec();
        s.steps[0].embeddings = Some(vec![vec![2.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 2.0]]);
        let mut m = ScriptedModel::new(s).unwrap();
        assert_eq!(m.embed(TokenId(1)).unwrap(), vec![0.0, 1.0, 0.0]);
        m.forward(&seq(&[1]), &[]).unwrap();
        assert_eq!(m.embed(TokenId(1)).unwrap(), vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn parses_json_spec() {
        let m = ScriptedModel::from_json_str(
            r#"{"vocab": ["</s>", "x"], "steps": [{"logits": [0.0, 1.0], "attention": {"0": 0.5}}],
                "embeddings": [[1.0], [2.0]]}"#,
        )
        .unwrap();
        let caps = m.capabilities();
        assert!(caps.provides_attention && caps.provides_embeddings);
        assert_eq!(caps.embedding_dim, Some(1));
        assert_eq!(caps.eos_id, TokenId(0));
    }

    #[test]
    fn rejects_inconsistent_specs() {
        let mut s = spec();
        s.steps[1].logits.push(0.0);
        assert!(ScriptedModel::new(s).is_err());
        let mut s = spec();
        s.vocab[0] = "end".into();
        assert!(ScriptedModel::new(s).is_err());
        let mut s = spec();
        s.default_embeddings.as_mut().unwrap()[1].pop();
        assert!(ScriptedModel::new(s).is_err());
    }
}
