//! The generation loop: forward, shape, softmax, sample, append.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::LanguageModel;
use crate::boosting::{
    aggregate_attention, assemble_boost, divergence_from_logits, fuse_relevance, shape_logits, BoostVector,
    DivergenceReading,
};
use crate::config::{validate_config, BoostConfig, SamplerKind};
use crate::error::{Error, Result};
use crate::support::{build_support_set, query_only_prompt, resolve_source_span, PromptParts, SupportSet};
use crate::types::{BoostMode, Distribution, StepRecord, TokenId, TokenSequence};

/// Cumulative mass counts as reaching `top_p` within this slack.
const NUCLEUS_SLACK: f64 = 1e-12;

/// Numerically stable softmax.
pub fn softmax(logits: &Distribution) -> Result<Distribution> {
    let values = logits.values();
    if values.is_empty() {
        return Err(Error::InvalidDistribution("empty logits".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(Distribution::probabilities_unchecked(exps.into_iter().map(|e| e / sum).collect()))
}

/// Highest-probability token, lowest id on ties.
pub fn argmax(probs: &Distribution) -> TokenId {
    let mut best = 0;
    for (i, &p) in probs.values().iter().enumerate() {
        if p > probs.values()[best] {
            best = i;
        }
    }
    TokenId::from(best)
}

/// Smallest descending-probability prefix whose mass reaches `top_p`; ties
/// in probability keep the lower id first.
pub fn nucleus(probs: &Distribution, top_p: f64) -> Vec<(TokenId, f64)> {
    let mut order: Vec<(TokenId, f64)> =
        probs.values().iter().enumerate().map(|(i, &p)| (TokenId::from(i), p)).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut mass = 0.0;
    let mut keep = order.len();
    for (i, (_, p)) in order.iter().enumerate() {
        mass += p;
        if mass >= top_p - NUCLEUS_SLACK {
            keep = i + 1;
            break;
        }
    }
    order.truncate(keep);
    order
}

/// Draws from the renormalised nucleus using `rng`.
pub fn sample_top_p<R: Rng + ?Sized>(probs: &Distribution, top_p: f64, rng: &mut R) -> TokenId {
    let nucleus = nucleus(probs, top_p);
    let mass: f64 = nucleus.iter().map(|(_, p)| p).sum();
    let mut u = rng.random::<f64>() * mass;
    for &(token, p) in &nucleus {
        if u < p {
            return token;
        }
        u -= p;
    }
    // Rounding left `u` past the end: fall back to the last token with mass.
    nucleus.iter().rev().find(|(_, p)| *p > 0.0).unwrap_or(&nucleus[0]).0
}

fn select_token<R: Rng + ?Sized>(probs: &Distribution, cfg: &BoostConfig, rng: &mut R) -> TokenId {
    match cfg.sampler {
        SamplerKind::Greedy => argmax(probs),
        SamplerKind::TopP => sample_top_p(probs, cfg.top_p, rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    MaxTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    /// Sampled tokens, excluding a terminating EOS.
    pub generated_tokens: TokenSequence,
    /// One record per loop iteration, including the one that sampled EOS.
    pub trace: Vec<StepRecord>,
    pub stop_reason: StopReason,
    pub prompt_tokens: TokenSequence,
    pub support: SupportSet,
    /// The once-per-example reading; absent in static mode, unboosted runs,
    /// and when the divergence is re-read each step.
    pub divergence: Option<DivergenceReading>,
}

/// Runs context-fidelity boosted decoding for one example.
pub fn generate<M: LanguageModel + ?Sized>(
    parts: &PromptParts,
    backend: &mut M,
    cfg: &BoostConfig,
) -> Result<GenerationResult> {
    run(parts, backend, cfg, true)
}

/// The same loop with no logit shaping, for baseline comparisons. Sampling
/// consumes the generator exactly as [`generate`] does.
pub fn generate_unboosted<M: LanguageModel + ?Sized>(
    parts: &PromptParts,
    backend: &mut M,
    cfg: &BoostConfig,
) -> Result<GenerationResult> {
    run(parts, backend, cfg, false)
}

fn run<M: LanguageModel + ?Sized>(
    parts: &PromptParts,
    backend: &mut M,
    cfg: &BoostConfig,
    boosted: bool,
) -> Result<GenerationResult> {
    let cfg = validate_config(cfg.clone())?;
    let mode = cfg.mode;
    let caps = backend.capabilities().clone();
    if boosted && mode == BoostMode::TokenAware && !caps.supports_token_aware() {
        return Err(Error::Capability(format!(
            "token_aware mode needs attention and embeddings (attention: {}, embeddings: {})",
            caps.provides_attention, caps.provides_embeddings
        )));
    }

    backend.begin_sequence();
    let (prompt, span) = resolve_source_span(parts, backend)?;
    let support = build_support_set(&prompt, &span, backend)?;

    let adaptive = boosted && mode.needs_divergence();
    let query_prompt = if adaptive { Some(query_only_prompt(parts, backend)?) } else { None };
    let once_reading = match &query_prompt {
        Some(q) if !cfg.divergence_per_step => {
            let with_context = backend.forward(&prompt, &[])?.next_token_logits;
            let without_context = backend.forward(q, &[])?.next_token_logits;
            Some(divergence_from_logits(&with_context, &without_context, &cfg)?)
        }
        _ => None,
    };
    let attention_positions = if boosted && mode == BoostMode::TokenAware { span.positions() } else { Vec::new() };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut context = prompt.clone();
    let mut generated: Vec<TokenId> = Vec::new();
    let mut trace = Vec::new();
    let mut stop_reason = StopReason::MaxTokens;

    for step_index in 0..cfg.max_new_tokens {
        let out = backend.forward(&context, &attention_positions)?;
        if out.next_token_logits.len() != caps.vocab_size {
            return Err(Error::Dimension { left: out.next_token_logits.len(), right: caps.vocab_size });
        }

        let reading = match (&query_prompt, once_reading) {
            (_, Some(r)) => Some(r),
            (Some(q), None) => {
                let mut q_ctx = q.clone();
                q_ctx.tokens.extend_from_slice(&generated);
                let without_context = backend.forward(&q_ctx, &[])?.next_token_logits;
                Some(divergence_from_logits(&out.next_token_logits, &without_context, &cfg)?)
            }
            (None, None) => None,
        };

        let boost = if !boosted {
            BoostVector { boosts: Default::default(), mode }
        } else if mode == BoostMode::TokenAware {
            let attention = out
                .attention_to_positions
                .as_ref()
                .ok_or_else(|| Error::Capability("backend returned no attention for source positions".into()))?;
            let alpha = aggregate_attention(attention, &support)?;
            let relevance = fuse_relevance(&alpha, &support, &cfg)?;
            assemble_boost(mode, &cfg, reading.as_ref(), Some(&relevance), &support)?
        } else {
            assemble_boost(mode, &cfg, reading.as_ref(), None, &support)?
        };

        let shaped = shape_logits(&out.next_token_logits, &boost);
        let probs = softmax(&shaped)?;
        let token = select_token(&probs, &cfg, &mut rng);

        let delta_effective = match (boosted, mode) {
            (false, _) => 0.0,
            (true, BoostMode::Static) => cfg.delta,
            (true, _) => reading.map(|r| r.delta_adaptive).unwrap_or(0.0),
        };
        trace.push(StepRecord {
            step_index,
            divergence_used: reading.map(|r| r.jsd),
            delta_effective,
            boosted_token_count: boost.boosts.values().filter(|v| **v != 0.0).count(),
            boost_vector_sparse: boost.boosts,
            chosen_token: token,
            chosen_prob: probs.get(token).expect("sampled token is in range"),
        });

        if token == caps.eos_id {
            stop_reason = StopReason::Eos;
            break;
        }
        generated.push(token);
        context.tokens.push(token);
        context.origin = crate::types::Origin::Generated;
    }

    Ok(GenerationResult {
        text: backend.detokenize(&generated)?,
        generated_tokens: TokenSequence::generated(generated),
        trace,
        stop_reason,
        prompt_tokens: prompt,
        support,
        divergence: once_reading,
    })
}
