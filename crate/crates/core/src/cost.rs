//! Analytic FLOPs-per-decoding-step estimates.
//!
//! The base model term counts matrix-multiply work over the whole sequence
//! with two FLOPs per multiply-accumulate. Method overheads are modelled as a
//! per-method multiple of `context_len * vocab`; the multiples are a
//! calibration against published per-step figures for a Llama-like model
//! (batch 1, sequence 128, hidden 4096, 32 layers, context 512, vocabulary
//! assumed 32000), not a component-level derivation.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostScenario {
    pub batch: u64,
    pub seq_len: u64,
    pub hidden: u64,
    pub layers: u64,
    pub context_len: u64,
    pub vocab: u64,
}

impl Default for CostScenario {
    fn default() -> Self {
        Self { batch: 1, seq_len: 128, hidden: 4096, layers: 32, context_len: 512, vocab: 32000 }
    }
}

impl CostScenario {
    pub fn is_valid(&self) -> bool {
        [self.batch, self.seq_len, self.hidden, self.layers, self.context_len, self.vocab].iter().all(|&v| v > 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Cad,
    AdaCad,
    Coiecd,
    StaticCfb,
    ContextAwareCfb,
    TokenAwareCfb,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Cad,
        Method::AdaCad,
        Method::Coiecd,
        Method::StaticCfb,
        Method::ContextAwareCfb,
        Method::TokenAwareCfb,
    ];

    /// Overhead in units of `context_len * vocab`.
    pub fn coefficient(self) -> f64 {
        match self {
            Method::Cad => 3.0,
            Method::AdaCad => 7.0,
            Method::Coiecd => 8.0,
            Method::StaticCfb => 5.0,
            Method::ContextAwareCfb => 6.0,
            Method::TokenAwareCfb => 17.5,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Cad => "CAD",
            Method::AdaCad => "ADACAD",
            Method::Coiecd => "COIECD",
            Method::StaticCfb => "Static CFB",
            Method::ContextAwareCfb => "Context-aware CFB",
            Method::TokenAwareCfb => "Token-aware CFB",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Dense projections (`12 h^2` MACs per token per layer: QKV, output and a
/// 4x MLP) plus attention scores and weighted values against `context_len`
/// keys, for every sequence position, at 2 FLOPs per MAC.
pub fn base_model_flops(s: &CostScenario) -> f64 {
    let (b, n, h, l, c) = (s.batch as f64, s.seq_len as f64, s.hidden as f64, s.layers as f64, s.context_len as f64);
    let dense = 2.0 * 2.0 * 12.0 * h * h * l * n;
    let attention = 2.0 * 2.0 * n * c * h * l;
    b * (dense + attention)
}

pub fn method_overhead_flops(method: Method, s: &CostScenario) -> f64 {
    s.batch as f64 * method.coefficient() * s.context_len as f64 * s.vocab as f64
}

/// Rows of `(label, flops)`: the base model first, then every method.
pub fn flops_table(s: &CostScenario) -> Vec<(&'static str, f64)> {
    let mut rows = vec![("Base Model", base_model_flops(s))];
    rows.extend(Method::ALL.iter().map(|&m| (m.label(), method_overhead_flops(m, s))));
    rows
}

pub fn format_flops_table(s: &CostScenario) -> String {
    let rows = flops_table(s);
    let width = |label: &str| label.len().max(9);
    let mut head = String::from("      ");
    let mut body = String::from("FLOPS ");
    for (label, v) in &rows {
        let w = width(label);
        let _ = write!(head, " | {label:>w$}");
        let _ = write!(body, " | {:>w$}", format!("{v:.2e}"));
    }
    format!("{head}\n{body}\n")
}
