//! Boost mathematics: divergence-scaled boost size, per-token relevance and
//! the additive logit boost for each mode.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::LanguageModel;
use crate::config::BoostConfig;
use crate::decode::softmax;
use crate::error::{Error, Result};
use crate::support::{query_only_prompt, resolve_source_span, PromptParts, SupportSet};
use crate::types::{BoostMode, DistKind, Distribution, TokenId};

/// Slack allowed on a divergence reading before it is rejected rather than
/// clamped into [0, 1].
pub const JSD_RANGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReading {
    /// Base-2 Jensen-Shannon divergence, in [0, 1].
    pub jsd: f64,
    /// `delta_min + (delta_max - delta_min) * jsd`.
    pub delta_adaptive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceVector {
    pub raw: BTreeMap<TokenId, f64>,
    pub normalized: BTreeMap<TokenId, f64>,
    pub attention_part: BTreeMap<TokenId, f64>,
    pub semantic_part: BTreeMap<TokenId, f64>,
    /// Every raw score was zero, so every normalized score was set to 1.
    pub all_zero_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostVector {
    /// Additive boost per source-supported token; other tokens get 0.
    pub boosts: BTreeMap<TokenId, f64>,
    pub mode: BoostMode,
}

fn require_probabilities(d: &Distribution) -> Result<()> {
    if d.kind() != DistKind::Probabilities {
        return Err(Error::InvalidDistribution("expected probabilities, got logits".into()));
    }
    Ok(())
}

/// `JSD(p || q)` with base-2 logarithms, so the result lies in [0, 1].
pub fn jensen_shannon_divergence(p: &Distribution, q: &Distribution) -> Result<f64> {
    require_probabilities(p)?;
    require_probabilities(q)?;
    if p.len() != q.len() {
        return Err(Error::Dimension { left: p.len(), right: q.len() });
    }
    let mut kl_p = 0.0;
    let mut kl_q = 0.0;
    for (&pi, &qi) in p.values().iter().zip(q.values()) {
        let mi = 0.5 * (pi + qi);
        if pi > 0.0 {
            kl_p += pi * (pi / mi).log2();
        }
        if qi > 0.0 {
            kl_q += qi * (qi / mi).log2();
        }
    }
    Ok((0.5 * kl_p + 0.5 * kl_q).clamp(0.0, 1.0))
}

/// Linear map of a divergence onto `[delta_min, delta_max]`.
pub fn adaptive_delta(jsd: f64, cfg: &BoostConfig) -> Result<f64> {
    if !(-JSD_RANGE_TOLERANCE..=1.0 + JSD_RANGE_TOLERANCE).contains(&jsd) {
        return Err(Error::Range(jsd));
    }
    let d = jsd.clamp(0.0, 1.0);
    Ok(cfg.delta_min + (cfg.delta_max - cfg.delta_min) * d)
}

/// Divergence reading from the with-context and without-context logits.
pub fn divergence_from_logits(
    with_context: &Distribution,
    without_context: &Distribution,
    cfg: &BoostConfig,
) -> Result<DivergenceReading> {
    let p = softmax(with_context)?;
    let q = softmax(without_context)?;
    let jsd = jensen_shannon_divergence(&p, &q)?;
    Ok(DivergenceReading { jsd, delta_adaptive: adaptive_delta(jsd, cfg)? })
}

/// Runs the full prompt and the query-only prompt through the backend and
/// compares their next-token distributions.
pub fn compute_divergence_reading<M: LanguageModel + ?Sized>(
    parts: &PromptParts,
    backend: &mut M,
    cfg: &BoostConfig,
) -> Result<DivergenceReading> {
    let (prompt, _) = resolve_source_span(parts, backend)?;
    let query_only = query_only_prompt(parts, backend)?;
    let with_context = backend.forward(&prompt, &[])?.next_token_logits;
    let without_context = backend.forward(&query_only, &[])?.next_token_logits;
    divergence_from_logits(&with_context, &without_context, cfg)
}

/// Sums attention over each supported token's source occurrences.
pub fn aggregate_attention(attention: &BTreeMap<usize, f64>, support: &SupportSet) -> Result<BTreeMap<TokenId, f64>> {
    support
        .entries
        .iter()
        .map(|(&token, entry)| {
            let mut total = 0.0;
            for &position in &entry.positions {
                total += attention.get(&position).ok_or(Error::MissingPosition { token, position })?;
            }
            Ok((token, total))
        })
        .collect()
}

/// Mixes attention and semantic relevance, then rescales so the mean over
/// the support set is 1.
pub fn fuse_relevance(
    alpha: &BTreeMap<TokenId, f64>,
    support: &SupportSet,
    cfg: &BoostConfig,
) -> Result<RelevanceVector> {
    if alpha.len() != support.len() || !support.members().all(|w| alpha.contains_key(&w)) {
        return Err(Error::SupportMismatch("attention keys differ from support members".into()));
    }
    let mut semantic_part = BTreeMap::new();
    for (&token, entry) in &support.entries {
        let s = entry.semantic_score.ok_or(Error::ModeArgument {
            mode: BoostMode::TokenAware.to_string(),
            missing: "semantic scores (backend embeddings)",
        })?;
        semantic_part.insert(token, if cfg.clamp_semantic { s.clamp(0.0, 1.0) } else { s });
    }
    let raw: BTreeMap<TokenId, f64> =
        alpha.iter().map(|(t, a)| (*t, cfg.lambda1 * a + cfg.lambda2 * semantic_part[t])).collect();

    let all_zero = raw.values().all(|&r| r == 0.0);
    let normalized = if all_zero {
        raw.keys().map(|&t| (t, 1.0)).collect()
    } else {
        let mean = raw.values().sum::<f64>() / raw.len() as f64;
        if mean <= 0.0 || !mean.is_finite() {
            return Err(Error::NegativeMean(mean));
        }
        raw.iter().map(|(&t, &r)| (t, r / mean)).collect()
    };
    Ok(RelevanceVector { raw, normalized, attention_part: alpha.clone(), semantic_part, all_zero_fallback: all_zero })
}

/// Builds the boost vector for `mode` over the support set.
pub fn assemble_boost(
    mode: BoostMode,
    cfg: &BoostConfig,
    reading: Option<&DivergenceReading>,
    relevance: Option<&RelevanceVector>,
    support: &SupportSet,
) -> Result<BoostVector> {
    let missing = |what| Error::ModeArgument { mode: mode.to_string(), missing: what };
    let boosts = match mode {
        BoostMode::Static => support.members().map(|w| (w, cfg.delta)).collect(),
        BoostMode::ContextAware => {
            let d = reading.ok_or_else(|| missing("a divergence reading"))?.delta_adaptive;
            support.members().map(|w| (w, d)).collect()
        }
        BoostMode::TokenAware => {
            let d = reading.ok_or_else(|| missing("a divergence reading"))?.delta_adaptive;
            let rel = relevance.ok_or_else(|| missing("a relevance vector"))?;
            support
                .members()
                .map(|w| {
                    rel.normalized
                        .get(&w)
                        .map(|r| (w, d * r))
                        .ok_or_else(|| Error::SupportMismatch(format!("no relevance for token {w}")))
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(BoostVector { boosts, mode })
}

/// Adds each token's boost to its logit; all other logits pass through.
pub fn shape_logits(logits: &Distribution, boost: &BoostVector) -> Distribution {
    let mut values = logits.values().to_vec();
    for (token, delta) in &boost.boosts {
        if let Some(v) = values.get_mut(token.index()) {
            *v += delta;
        }
    }
    Distribution::logits(values)
}
