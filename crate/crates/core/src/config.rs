//! Boost configuration, validation and the JSON config document.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::support::{PromptTemplate, DEFAULT_TEMPLATE, DEFAULT_TEMPLATE_ID};
use crate::types::BoostMode;

/// Allowed slack on `lambda1 + lambda2 = 1`.
pub const LAMBDA_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid config field `{field}`: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

impl ConfigError {
    fn new(field: &'static str, reason: impl Into<String>) -> Self {
        Self { field, reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    TopP,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostConfig {
    pub mode: BoostMode,
    /// Fixed boost for static mode.
    pub delta: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Weight on aggregated attention in token relevance.
    pub lambda1: f64,
    /// Weight on source-scoped semantic similarity in token relevance.
    pub lambda2: f64,
    pub top_p: f64,
    pub sampler: SamplerKind,
    pub max_new_tokens: usize,
    pub seed: u64,
    /// Re-read the divergence every step instead of once per example.
    pub divergence_per_step: bool,
    /// Clamp semantic scores into [0, 1] before fusing relevance.
    pub clamp_semantic: bool,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            mode: BoostMode::TokenAware,
            delta: 2.0,
            delta_min: 1.0,
            delta_max: 5.0,
            lambda1: 0.6,
            lambda2: 0.4,
            top_p: 0.9,
            sampler: SamplerKind::TopP,
            max_new_tokens: 64,
            seed: 0,
            divergence_per_step: false,
            clamp_semantic: false,
        }
    }
}

fn check_non_negative(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if !v.is_finite() || v < 0.0 {
        return Err(ConfigError::new(field, format!("must be a finite value >= 0, got {v}")));
    }
    Ok(())
}

/// Returns `cfg` unchanged when every field invariant holds.
pub fn validate_config(cfg: BoostConfig) -> Result<BoostConfig, ConfigError> {
    check_non_negative("delta", cfg.delta)?;
    check_non_negative("delta_min", cfg.delta_min)?;
    check_non_negative("delta_max", cfg.delta_max)?;
    if cfg.delta_min > cfg.delta_max {
        return Err(ConfigError::new(
            "delta_min",
            format!("delta_min {} exceeds delta_max {}", cfg.delta_min, cfg.delta_max),
        ));
    }
    for (field, v) in [("lambda1", cfg.lambda1), ("lambda2", cfg.lambda2)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(ConfigError::new(field, format!("must lie in [0, 1], got {v}")));
        }
    }
    let sum = cfg.lambda1 + cfg.lambda2;
    if (sum - 1.0).abs() > LAMBDA_SUM_TOLERANCE {
        return Err(ConfigError::new("lambda", format!("lambda1 + lambda2 = {sum}, expected 1")));
    }
    if !(cfg.top_p > 0.0 && cfg.top_p <= 1.0) {
        return Err(ConfigError::new("top_p", format!("must lie in (0, 1], got {}", cfg.top_p)));
    }
    if cfg.max_new_tokens == 0 {
        return Err(ConfigError::new("max_new_tokens", "must be positive"));
    }
    Ok(cfg)
}

/// The on-disk config document: every [`BoostConfig`] field at the top
/// level, plus named prompt templates and the id of the one to use.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub boost: BoostConfig,
    pub templates: BTreeMap<String, String>,
    pub template: String,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let mut templates = BTreeMap::new();
        templates.insert(DEFAULT_TEMPLATE_ID.to_string(), DEFAULT_TEMPLATE.to_string());
        Self { boost: BoostConfig::default(), templates, template: DEFAULT_TEMPLATE_ID.to_string() }
    }
}

impl ConfigFile {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::json("config", e))?;
        let serde_json::Value::Object(mut obj) = value else {
            return Err(ConfigError::new("config", "top level must be a JSON object").into());
        };
        let mut file = ConfigFile::default();
        if let Some(t) = obj.remove("templates") {
            let extra: BTreeMap<String, String> =
                serde_json::from_value(t).map_err(|e| Error::json("config.templates", e))?;
            file.templates.extend(extra);
        }
        if let Some(t) = obj.remove("template") {
            file.template = serde_json::from_value(t).map_err(|e| Error::json("config.template", e))?;
        }
        let boost: BoostConfig =
            serde_json::from_value(serde_json::Value::Object(obj)).map_err(|e| Error::json("config", e))?;
        file.boost = validate_config(boost)?;
        file.selected_template()?;
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn template(&self, id: &str) -> Result<PromptTemplate> {
        let text = self.templates.get(id).ok_or_else(|| Error::Template(format!("no template named `{id}`")))?;
        PromptTemplate::new(id, text)
    }

    pub fn selected_template(&self) -> Result<PromptTemplate> {
        self.template(&self.template)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_config() -> BoostConfig {
        BoostConfig { lambda1: 0.6, lambda2: 0.4, delta_min: 1.0, delta_max: 5.0, top_p: 0.9, ..Default::default() }
    }

    #[test]
    fn accepts_default_weights() {
        let cfg = reference_config();
        assert_eq!(validate_config(cfg.clone()).unwrap(), cfg);
    }

    #[test]
    fn accepts_even_split() {
        let cfg = BoostConfig { lambda1: 0.5, lambda2: 0.5, ..reference_config() };
        assert!(validate_config(cfg).is_ok());
    }

    #[test]
    fn rejects_lambda_sum() {
        let cfg = BoostConfig { lambda1: 0.7, lambda2: 0.7, ..reference_config() };
        assert_eq!(validate_config(cfg).unwrap_err().field, "lambda");
    }

    #[test]
    fn rejects_each_bad_field() {
        let base = reference_config();
        let cases = [
            (BoostConfig { delta_min: 6.0, ..base.clone() }, "delta_min"),
            (BoostConfig { top_p: 0.0, ..base.clone() }, "top_p"),
            (BoostConfig { top_p: 1.5, ..base.clone() }, "top_p"),
            (BoostConfig { max_new_tokens: 0, ..base.clone() }, "max_new_tokens"),
            (BoostConfig { delta: -1.0, ..base.clone() }, "delta"),
            (BoostConfig { delta_max: f64::NAN, ..base.clone() }, "delta_max"),
        ];
        for (cfg, field) in cases {
            assert_eq!(validate_config(cfg).unwrap_err().field, field);
        }
    }

    #[test]
    fn config_file_parses_templates_and_rejects_unknown_keys() {
        let file = ConfigFile::from_json_str(
            r#"{"mode": "static", "delta": 3.0, "templates": {"short": "{C} {Q}"}, "template": "short"}"#,
        )
        .unwrap();
        assert_eq!(file.boost.mode, BoostMode::Static);
        assert_eq!(file.boost.delta, 3.0);
        assert_eq!(file.boost.lambda1, 0.6);
        assert_eq!(file.selected_template().unwrap().id(), "short");
        assert!(file.templates.contains_key(DEFAULT_TEMPLATE_ID));

        let err = ConfigFile::from_json_str(r#"{"detla": 3.0}"#).unwrap_err();
        assert!(err.to_string().contains("detla"), "{err}");

        let err = ConfigFile::from_json_str(r#"{"template": "missing"}"#).unwrap_err();
        assert!(matches!(err, Error::Template(_)));
    }

    #[test]
    fn mode_aliases() {
        let a: BoostConfig = serde_json::from_str(r#"{"mode": "context"}"#).unwrap();
        let b: BoostConfig = serde_json::from_str(r#"{"mode": "token_aware"}"#).unwrap();
        assert_eq!(a.mode, BoostMode::ContextAware);
        assert_eq!(b.mode, BoostMode::TokenAware);
    }

    fn field_invariants_hold(c: &BoostConfig) -> bool {
        let nn = |v: f64| v.is_finite() && v >= 0.0;
        nn(c.delta)
            && nn(c.delta_min)
            && nn(c.delta_max)
            && c.delta_min <= c.delta_max
            && (0.0..=1.0).contains(&c.lambda1)
            && (0.0..=1.0).contains(&c.lambda2)
            && (c.lambda1 + c.lambda2 - 1.0).abs() <= LAMBDA_SUM_TOLERANCE
            && c.top_p > 0.0
            && c.top_p <= 1.0
            && c.max_new_tokens > 0
    }

    proptest! {
        #[test]
        fn validation_agrees_with_field_invariants(
            delta in -1.0f64..10.0,
            delta_min in -1.0f64..10.0,
            delta_max in -1.0f64..10.0,
            lambda1 in -0.2f64..1.2,
            lambda_exact in any::<bool>(),
            lambda2_free in -0.2f64..1.2,
            top_p in -0.2f64..1.2,
            max_new_tokens in 0usize..4,
        ) {
            let lambda2 = if lambda_exact { 1.0 - lambda1 } else { lambda2_free };
            let cfg = BoostConfig {
                delta, delta_min, delta_max, lambda1, lambda2, top_p, max_new_tokens,
                ..Default::default()
            };
            let expected = field_invariants_hold(&cfg);
            match validate_config(cfg.clone()) {
                Ok(out) => {
                    prop_assert!(expected);
                    prop_assert_eq!(out, cfg);
                }
                Err(_) => prop_assert!(!expected),
            }
        }
    }
}
