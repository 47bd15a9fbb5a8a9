//! Source-span resolution and the source-supported token set.
//!
//! A prompt is rendered from a template by tokenizing each literal segment,
//! the context and the query separately and concatenating the pieces, so the
//! context's token range inside the prompt is known exactly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::backend::LanguageModel;
use crate::error::{Error, Result};
use crate::types::{TokenId, TokenSequence};

pub const DEFAULT_TEMPLATE_ID: &str = "qa_v1";
pub const DEFAULT_TEMPLATE: &str = "Context: {C}\nQuestion: {Q}\nAnswer:";

const CONTEXT_SLOT: &str = "{C}";
const QUERY_SLOT: &str = "{Q}";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Context,
    Query,
}

/// A prompt template with exactly one `{C}` and one `{Q}` slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: String,
    text: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let text = text.into();
        for slot in [CONTEXT_SLOT, QUERY_SLOT] {
            let n = text.matches(slot).count();
            if n != 1 {
                return Err(Error::Template(format!("template `{id}` must contain {slot} exactly once, found {n}")));
            }
        }
        let mut segments = Vec::new();
        let mut rest = text.as_str();
        while !rest.is_empty() {
            let next = [(CONTEXT_SLOT, Segment::Context), (QUERY_SLOT, Segment::Query)]
                .into_iter()
                .filter_map(|(slot, seg)| rest.find(slot).map(|i| (i, slot.len(), seg)))
                .min_by_key(|(i, _, _)| *i);
            match next {
                Some((i, len, seg)) => {
                    if i > 0 {
                        segments.push(Segment::Literal(rest[..i].to_string()));
                    }
                    segments.push(seg);
                    rest = &rest[i + len..];
                }
                None => {
                    segments.push(Segment::Literal(rest.to_string()));
                    rest = "";
                }
            }
        }
        Ok(Self { id, text, segments })
    }

    pub fn default_qa() -> Self {
        Self::new(DEFAULT_TEMPLATE_ID, DEFAULT_TEMPLATE).expect("built-in template is well formed")
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Whitespace-delimited words of the literal scaffolding.
    pub fn scaffold_words(&self) -> Vec<String> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Literal(t) => Some(t.split_whitespace().map(String::from)),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Renders the template; returns the prompt and the context token range.
    /// With `include_context = false` the context slot is dropped entirely.
    fn render<M: LanguageModel + ?Sized>(
        &self,
        context: &str,
        query: &str,
        include_context: bool,
        backend: &M,
    ) -> Result<(Vec<TokenId>, Range<usize>)> {
        let mut tokens = Vec::new();
        let mut span = 0..0;
        for seg in &self.segments {
            match seg {
                Segment::Literal(t) => tokens.extend(backend.tokenize(t)?.tokens),
                Segment::Query => tokens.extend(backend.tokenize(query)?.tokens),
                Segment::Context if include_context => {
                    let start = tokens.len();
                    tokens.extend(backend.tokenize(context)?.tokens);
                    span = start..tokens.len();
                }
                Segment::Context => {}
            }
        }
        Ok((tokens, span))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptParts {
    pub context_text: String,
    pub query_text: String,
    pub template: PromptTemplate,
}

impl PromptParts {
    pub fn new(context: impl Into<String>, query: impl Into<String>, template: PromptTemplate) -> Self {
        Self { context_text: context.into(), query_text: query.into(), template }
    }
}

/// The context's tokens and where they sit inside the rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpan {
    pub tokens: TokenSequence,
    pub start_pos: usize,
    pub length: usize,
}

impl SourceSpan {
    pub fn range(&self) -> Range<usize> {
        self.start_pos..self.start_pos + self.length
    }

    pub fn positions(&self) -> Vec<usize> {
        self.range().collect()
    }
}

/// Renders the full prompt and locates the context span inside it.
pub fn resolve_source_span<M: LanguageModel + ?Sized>(
    parts: &PromptParts,
    backend: &M,
) -> Result<(TokenSequence, SourceSpan)> {
    let (tokens, range) = parts.template.render(&parts.context_text, &parts.query_text, true, backend)?;
    if range.is_empty() {
        return Err(Error::EmptyContext);
    }
    let span = SourceSpan {
        tokens: TokenSequence::prompt(tokens[range.clone()].to_vec()),
        start_pos: range.start,
        length: range.len(),
    };
    Ok((TokenSequence::prompt(tokens), span))
}

/// The same template rendered with the context slot removed.
pub fn query_only_prompt<M: LanguageModel + ?Sized>(parts: &PromptParts, backend: &M) -> Result<TokenSequence> {
    let (tokens, _) = parts.template.render("", &parts.query_text, false, backend)?;
    if tokens.is_empty() {
        return Err(Error::Template(format!("template `{}` renders an empty query-only prompt", parts.template.id)));
    }
    Ok(TokenSequence::prompt(tokens))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEntry {
    /// Prompt positions holding this token, all inside the source span.
    pub positions: Vec<usize>,
    /// Mean cosine similarity to the span's tokens; absent when the backend
    /// has no embeddings.
    pub semantic_score: Option<f64>,
}

/// The source-supported vocabulary: distinct non-special span tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    pub span_start: usize,
    pub span_length: usize,
    pub entries: BTreeMap<TokenId, SupportEntry>,
}

impl SupportSet {
    pub fn members(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.entries.keys().copied()
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.entries.contains_key(&token)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positions(&self, token: TokenId) -> Option<&[usize]> {
        self.entries.get(&token).map(|e| e.positions.as_slice())
    }

    pub fn semantic_score(&self, token: TokenId) -> Option<f64> {
        self.entries.get(&token).and_then(|e| e.semantic_score)
    }

    pub fn has_semantic_scores(&self) -> bool {
        self.entries.values().all(|e| e.semantic_score.is_some())
    }
}

/// Collects the distinct span tokens (minus special tokens), their prompt
/// positions, and their semantic scores when embeddings are available.
pub fn build_support_set<M: LanguageModel + ?Sized>(
    prompt: &TokenSequence,
    span: &SourceSpan,
    backend: &M,
) -> Result<SupportSet> {
    let range = span.range();
    if range.end > prompt.len() || prompt.tokens[range.clone()] != span.tokens.tokens[..] {
        return Err(Error::SupportMismatch(format!("span {range:?} does not match the prompt's tokens")));
    }
    let caps = backend.capabilities();
    let mut entries: BTreeMap<TokenId, SupportEntry> = BTreeMap::new();
    for pos in range {
        let token = prompt.tokens[pos];
        if caps.is_special(token) {
            continue;
        }
        entries
            .entry(token)
            .or_insert_with(|| SupportEntry { positions: Vec::new(), semantic_score: None })
            .positions
            .push(pos);
    }
    if caps.provides_embeddings {
        let members: BTreeSet<TokenId> = entries.keys().copied().collect();
        let scores = compute_semantic_scores(&members, span, backend)?;
        for (token, score) in scores {
            entries.get_mut(&token).expect("scored members come from entries").semantic_score = Some(score);
        }
    }
    Ok(SupportSet { span_start: span.start_pos, span_length: span.length, entries })
}

/// `s(w)`: mean over every span occurrence `c` of `cosine(e_w, e_c)`.
/// Each distinct token is embedded once.
pub fn compute_semantic_scores<M: LanguageModel + ?Sized>(
    members: &BTreeSet<TokenId>,
    span: &SourceSpan,
    backend: &M,
) -> Result<BTreeMap<TokenId, f64>> {
    if !backend.capabilities().provides_embeddings {
        return Err(Error::Capability("backend provides no token embeddings".into()));
    }
    if span.tokens.is_empty() {
        return Err(Error::EmptyContext);
    }
    // Unit-normalised embedding per distinct token.
    let mut unit: HashMap<TokenId, Vec<f64>> = HashMap::new();
    for &token in members.iter().chain(span.tokens.tokens.iter()) {
        if unit.contains_key(&token) {
            continue;
        }
        let e = backend.embed(token)?;
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm(token));
        }
        unit.insert(token, e.into_iter().map(|x| x / norm).collect());
    }
    let n = span.tokens.len() as f64;
    Ok(members
        .iter()
        .map(|w| {
            let ew = &unit[w];
            let total: f64 =
                span.tokens.tokens.iter().map(|c| ew.iter().zip(&unit[c]).map(|(a, b)| a * b).sum::<f64>()).sum();
            (*w, total / n)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptedModel, ScriptedModelSpec};

    fn model(vocab: &[&str], embeddings: Option<Vec<Vec<f64>>>) -> ScriptedModel {
        ScriptedModel::new(ScriptedModelSpec {
            vocab: vocab.iter().map(|s| s.to_string()).collect(),
            steps: vec![],
            default_embeddings: embeddings,
            eos: None,
        })
        .unwrap()
    }

    fn qa_vocab() -> Vec<&'static str> {
        vec!["</s>", "Context:", "Question:", "Answer:", "paris", "hosts", "games", "where", "a", "b"]
    }

    #[test]
    fn span_covers_exactly_the_context() {
        let m = model(&qa_vocab(), None);
        let parts = PromptParts::new("paris hosts games", "where", PromptTemplate::default_qa());
        let (prompt, span) = resolve_source_span(&parts, &m).unwrap();
        assert_eq!(m.detokenize(&prompt.tokens).unwrap(), "Context: paris hosts games Question: where Answer:");
        assert_eq!(span.start_pos, 1);
        assert_eq!(span.length, 3);
        assert_eq!(m.detokenize(&span.tokens.tokens).unwrap(), "paris hosts games");
        assert_eq!(&prompt.tokens[span.range()], &span.tokens.tokens[..]);

        let q = query_only_prompt(&parts, &m).unwrap();
        assert_eq!(m.detokenize(&q.tokens).unwrap(), "Context: Question: where Answer:");
    }

    #[test]
    fn empty_context_is_rejected() {
        let m = model(&qa_vocab(), None);
        let parts = PromptParts::new("", "where", PromptTemplate::default_qa());
        assert!(matches!(resolve_source_span(&parts, &m), Err(Error::EmptyContext)));
        let parts = PromptParts::new("   ", "where", PromptTemplate::default_qa());
        assert!(matches!(resolve_source_span(&parts, &m), Err(Error::EmptyContext)));
    }

    #[test]
    fn templates_need_both_slots_once() {
        assert!(PromptTemplate::new("x", "{C}").is_err());
        assert!(PromptTemplate::new("x", "{C} {Q} {C}").is_err());
        let t = PromptTemplate::new("x", "{Q} then {C}").unwrap();
        assert_eq!(t.scaffold_words(), vec!["then"]);
        assert_eq!(PromptTemplate::default_qa().scaffold_words(), vec!["Context:", "Question:", "Answer:"]);
    }

    #[test]
    fn occurrences_and_members() {
        let m = model(&qa_vocab(), None);
        let parts = PromptParts::new("a a b", "where", PromptTemplate::default_qa());
        let (prompt, span) = resolve_source_span(&parts, &m).unwrap();
        let support = build_support_set(&prompt, &span, &m).unwrap();
        let a = m.vocab().id("a").unwrap();
        let b = m.vocab().id("b").unwrap();
        assert_eq!(support.members().collect::<Vec<_>>(), vec![a, b]);
        assert_eq!(support.positions(a).unwrap(), &[1, 2]);
        assert_eq!(support.positions(b).unwrap(), &[3]);
        assert_eq!(support.semantic_score(a), None);
    }

    #[test]
    fn eos_in_span_is_excluded() {
        let m = model(&qa_vocab(), None);
        let parts = PromptParts::new("a </s> b", "where", PromptTemplate::default_qa());
        let (prompt, span) = resolve_source_span(&parts, &m).unwrap();
        let support = build_support_set(&prompt, &span, &m).unwrap();
        assert!(!support.contains(TokenId(0)));
        assert_eq!(support.len(), 2);
    }

    #[test]
    fn mismatched_span_is_rejected() {
        let m = model(&qa_vocab(), None);
        let parts = PromptParts::new("a b", "where", PromptTemplate::default_qa());
        let (prompt, mut span) = resolve_source_span(&parts, &m).unwrap();
        span.start_pos += 1;
        assert!(matches!(build_support_set(&prompt, &span, &m), Err(Error::SupportMismatch(_))));
    }

    fn span_of(tokens: &[u32]) -> SourceSpan {
        SourceSpan {
            tokens: TokenSequence::prompt(tokens.iter().map(|&t| TokenId(t)).collect()),
            start_pos: 0,
            length: tokens.len(),
        }
    }

    #[test]
    fn self_similarity_is_one() {
        let m = model(&["</s>", "w"], Some(vec![vec![1.0, 0.0], vec![3.0, 4.0]]));
        let s = compute_semantic_scores(&BTreeSet::from([TokenId(1)]), &span_of(&[1]), &m).unwrap();
        assert!((s[&TokenId(1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_pair_averages_to_half() {
        let m = model(&["</s>", "u", "v"], Some(vec![vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]));
        let members = BTreeSet::from([TokenId(1), TokenId(2)]);
        let s = compute_semantic_scores(&members, &span_of(&[1, 2]), &m).unwrap();
        assert_eq!(s[&TokenId(1)], 0.5);
        assert_eq!(s[&TokenId(2)], 0.5);
    }

    #[test]
    fn three_term_sum_matches_hand_evaluation() {
        // e_a = (1, 2, 0), e_b = (0, 1, 3); span [a, b, a].
        let m = model(&["</s>", "a", "b"], Some(vec![vec![1.0, 0.0, 0.0], vec![1.0, 2.0, 0.0], vec![0.0, 1.0, 3.0]]));
        let members = BTreeSet::from([TokenId(1), TokenId(2)]);
        let s = compute_semantic_scores(&members, &span_of(&[1, 2, 1]), &m).unwrap();
        // cos(a, b) = 2 / (sqrt(5) * sqrt(10)) = 2 / sqrt(50)
        let cab = 2.0 / 50f64.sqrt();
        let want_a = (1.0 + cab + 1.0) / 3.0;
        let want_b = (cab + 1.0 + cab) / 3.0;
        assert!((s[&TokenId(1)] - want_a).abs() < 1e-12);
        assert!((s[&TokenId(2)] - want_b).abs() < 1e-12);
        // Frozen golden values for the same instance.
        assert!((s[&TokenId(1)] - 0.760947570824873).abs() < 1e-12);
        assert!((s[&TokenId(2)] - 0.521895141649746).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_embedding_is_an_error() {
        let m = model(&["</s>", "a", "b"], Some(vec![vec![1.0], vec![1.0], vec![0.0]]));
        let err = compute_semantic_scores(&BTreeSet::from([TokenId(1)]), &span_of(&[1, 2]), &m).unwrap_err();
        assert!(matches!(err, Error::ZeroNorm(TokenId(2))));
    }

    #[test]
    fn scores_need_embeddings() {
        let m = model(&["</s>", "a"], None);
        let err = compute_semantic_scores(&BTreeSet::from([TokenId(1)]), &span_of(&[1]), &m).unwrap_err();
        assert!(matches!(err, Error::Capability(_)));
    }
}
