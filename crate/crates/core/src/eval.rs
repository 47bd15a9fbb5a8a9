//! Desk-scale evaluation: datasets, metrics, reports, δ sweeps and the
//! synthetic context-vs-parametric conflict suite.
//!
//! Faithfulness is measured by `support_rate` (share of generated tokens
//! that occur in the source span) and answer accuracy by `exact_match`.
//! Both are proxies: model-based faithfulness scorers and judge models are
//! not available at this scale.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{LanguageModel, ScriptedModel, ScriptedModelSpec, ScriptedStep, EOS_TOKEN};
use crate::config::{BoostConfig, SamplerKind};
use crate::decode::{generate, StopReason};
use crate::error::{Error, Result};
use crate::support::{PromptParts, PromptTemplate, SupportSet};
use crate::types::{BoostMode, TokenId};

pub const PROXY_NOTE: &str = "support_rate is a faithfulness proxy (share of generated tokens found in the \
source span); exact_match compares lowercased, whitespace-normalised text";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalExample {
    pub id: String,
    pub context: String,
    pub question: String,
    pub reference: String,
}

/// Parses a JSON-Lines dataset. Blank lines are skipped; ids must be unique
/// and contexts non-empty.
pub fn parse_dataset(text: &str) -> Result<Vec<EvalExample>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let ex: EvalExample = serde_json::from_str(line).map_err(|e| Error::Dataset(format!("line {line_no}: {e}")))?;
        if ex.context.trim().is_empty() {
            return Err(Error::Dataset(format!("line {line_no}: example `{}` has an empty context", ex.id)));
        }
        if !seen.insert(ex.id.clone()) {
            return Err(Error::Dataset(format!("line {line_no}: duplicate id `{}`", ex.id)));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<EvalExample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure over whitespace tokens, no stemming.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c: Vec<&str> = candidate.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&c, &r) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / c.len() as f64;
    let rec = lcs / r.len() as f64;
    2.0 * p * rec / (p + rec)
}

/// Fraction of generated tokens that belong to the support set.
pub fn support_rate(generated: &[TokenId], support: &SupportSet) -> f64 {
    if generated.is_empty() {
        return 0.0;
    }
    generated.iter().filter(|t| support.contains(**t)).count() as f64 / generated.len() as f64
}

fn normalise(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

pub fn exact_match(candidate: &str, reference: &str) -> bool {
    normalise(candidate) == normalise(reference)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExampleOutcome {
    Ok { rouge_l: f64, support_rate: f64, exact_match: bool, generated: String, stop_reason: StopReason },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub examples: usize,
    pub succeeded: usize,
    pub failed: usize,
    /// Means over succeeded examples; zero when there are none.
    pub rouge_l: f64,
    pub support_rate: f64,
    pub exact_match: f64,
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_example: BTreeMap<String, ExampleOutcome>,
    pub aggregate: Aggregate,
    pub config_echo: BoostConfig,
    pub template: String,
    pub note: String,
}

fn aggregate(per_example: &BTreeMap<String, ExampleOutcome>) -> Aggregate {
    let ok: Vec<(f64, f64, bool)> = per_example
        .values()
        .filter_map(|o| match o {
            ExampleOutcome::Ok { rouge_l, support_rate, exact_match, .. } => {
                Some((*rouge_l, *support_rate, *exact_match))
            }
            ExampleOutcome::Failed { .. } => None,
        })
        .collect();
    let n = ok.len();
    let mean =
        |f: &dyn Fn(&(f64, f64, bool)) -> f64| if n == 0 { 0.0 } else { ok.iter().map(f).sum::<f64>() / n as f64 };
    Aggregate {
        examples: per_example.len(),
        succeeded: n,
        failed: per_example.len() - n,
        rouge_l: mean(&|o| o.0),
        support_rate: mean(&|o| o.1),
        exact_match: mean(&|o| if o.2 { 1.0 } else { 0.0 }),
        empty: per_example.is_empty(),
    }
}

/// Generates one output per example and scores it. A failing example is
/// recorded with its error and excluded from the means.
pub fn run_eval<M: LanguageModel + ?Sized>(
    dataset: &[EvalExample],
    backend: &mut M,
    cfg: &BoostConfig,
    template: &PromptTemplate,
) -> Result<MetricReport> {
    let mut ids = BTreeSet::new();
    for ex in dataset {
        if !ids.insert(ex.id.as_str()) {
            return Err(Error::Dataset(format!("duplicate id `{}`", ex.id)));
        }
    }
    let mut per_example = BTreeMap::new();
    for ex in dataset {
        let parts = PromptParts::new(&ex.context, &ex.question, template.clone());
        let outcome = match generate(&parts, backend, cfg) {
            Ok(res) => ExampleOutcome::Ok {
                rouge_l: rouge_l(&res.text, &ex.reference),
                support_rate: support_rate(&res.generated_tokens.tokens, &res.support),
                exact_match: exact_match(&res.text, &ex.reference),
                generated: res.text,
                stop_reason: res.stop_reason,
            },
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => {
                log::warn!("example `{}` failed: {e}", ex.id);
                ExampleOutcome::Failed { error: e.to_string() }
            }
        };
        per_example.insert(ex.id.clone(), outcome);
    }
    Ok(MetricReport {
        aggregate: aggregate(&per_example),
        per_example,
        config_echo: cfg.clone(),
        template: template.id().to_string(),
        note: PROXY_NOTE.to_string(),
    })
}

/// Human-readable aligned table of a report.
pub fn format_report_table(report: &MetricReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>8} {:>8} {:>6}  status", "id", "rouge_l", "support", "em");
    for (id, o) in &report.per_example {
        match o {
            ExampleOutcome::Ok { rouge_l, support_rate, exact_match, .. } => {
                let _ = writeln!(out, "{id:<24} {rouge_l:>8.4} {support_rate:>8.4} {:>6}  ok", u8::from(*exact_match));
            }
            ExampleOutcome::Failed { error } => {
                let _ = writeln!(out, "{id:<24} {:>8} {:>8} {:>6}  failed: {error}", "-", "-", "-");
            }
        }
    }
    let a = &report.aggregate;
    let _ = writeln!(
        out,
        "{:<24} {:>8.4} {:>8.4} {:>6.4}  {} ok / {} failed",
        "MEAN", a.rouge_l, a.support_rate, a.exact_match, a.succeeded, a.failed
    );
    out
}

/// One grid point of a boost sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub delta: f64,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl SweepPoint {
    /// The same boost size in every mode.
    pub fn uniform(delta: f64) -> Self {
        Self { delta, delta_min: delta, delta_max: delta }
    }

    pub fn apply(&self, cfg: &BoostConfig) -> BoostConfig {
        BoostConfig { delta: self.delta, delta_min: self.delta_min, delta_max: self.delta_max, ..cfg.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub rouge_l: f64,
    pub support_rate: f64,
    pub exact_match: f64,
}

/// Evaluates every grid point over every seed and averages the aggregates.
pub fn run_sweep<M: LanguageModel + ?Sized>(
    dataset: &[EvalExample],
    backend: &mut M,
    base: &BoostConfig,
    template: &PromptTemplate,
    points: &[SweepPoint],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if points.len() < 2 {
        return Err(Error::Input(format!("a sweep needs at least 2 grid points, got {}", points.len())));
    }
    if seeds.is_empty() {
        return Err(Error::Input("a sweep needs at least one seed".into()));
    }
    points
        .iter()
        .map(|point| {
            let mut sums = (0.0, 0.0, 0.0);
            for &seed in seeds {
                let cfg = BoostConfig { seed, ..point.apply(base) };
                let a = run_eval(dataset, backend, &cfg, template)?.aggregate;
                sums.0 += a.rouge_l;
                sums.1 += a.support_rate;
                sums.2 += a.exact_match;
            }
            let n = seeds.len() as f64;
            Ok(SweepRow { point: *point, rouge_l: sums.0 / n, support_rate: sums.1 / n, exact_match: sums.2 / n })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("delta,delta_min,delta_max,rouge_l,support_rate,exact_match\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.point.delta, r.point.delta_min, r.point.delta_max, r.rouge_l, r.support_rate, r.exact_match
        );
    }
    out
}

const CONFLICT_CITIES: [&str; 8] = ["tokyo", "paris", "london", "madrid", "rome", "berlin", "sydney", "beijing"];
const CONFLICT_CONTEXT: [&str; 6] = ["the", "2020", "olympics", "were", "hosted", "by"];
const CONFLICT_QUESTION: &str = "where were the 2020 olympics held";

/// A two-answer case where the model's prior favours an answer that is not
/// in the context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictCase {
    pub spec: ScriptedModelSpec,
    pub example: EvalExample,
    /// Logit gap by which the parametric answer leads; a static boost flips
    /// the greedy choice iff it exceeds this value.
    pub expected_flip_delta: f64,
    pub context_answer: String,
    pub parametric_answer: String,
}

/// Builds `n` scripted conflict cases with gaps drawn uniformly from
/// `gap_range` (a degenerate range gives a fixed gap).
pub fn generate_conflict_suite(n: usize, gap_range: (f64, f64), seed: u64) -> Result<Vec<ConflictCase>> {
    let (lo, hi) = gap_range;
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
        return Err(Error::Input(format!("gap range ({lo}, {hi}) must be positive and ordered")));
    }
    let template = PromptTemplate::default_qa();
    let mut vocab: Vec<String> = vec![EOS_TOKEN.to_string()];
    vocab.extend(template.scaffold_words());
    vocab.extend(CONFLICT_CONTEXT.iter().map(|s| s.to_string()));
    vocab.extend(["where", "held"].map(String::from));
    vocab.extend(CONFLICT_CITIES.iter().map(|s| s.to_string()));
    let index = |w: &str| vocab.iter().position(|v| v == w).expect("word is in the conflict vocabulary");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let gap = if lo == hi { lo } else { rng.random_range(lo..hi) };
            let ctx = rng.random_range(0..CONFLICT_CITIES.len());
            let par = (ctx + rng.random_range(1..CONFLICT_CITIES.len())) % CONFLICT_CITIES.len();
            let (ctx_word, par_word) = (CONFLICT_CITIES[ctx], CONFLICT_CITIES[par]);

            // Every other token sits at least one logit below the context
            // answer, so only the two answers can win under any static boost.
            let mut logits: Vec<f64> = (0..vocab.len()).map(|_| rng.random_range(-6.0..-1.0)).collect();
            logits[index(EOS_TOKEN)] = -8.0;
            logits[index(ctx_word)] = 0.0;
            logits[index(par_word)] = gap;
            let mut stop = vec![-30.0; vocab.len()];
            stop[index(EOS_TOKEN)] = 0.0;

            let context = format!("{} {ctx_word}", CONFLICT_CONTEXT.join(" "));
            Ok(ConflictCase {
                spec: ScriptedModelSpec {
                    vocab: vocab.clone(),
                    steps: vec![ScriptedStep::logits(logits), ScriptedStep::logits(stop)],
                    default_embeddings: None,
                    eos: None,
                },
                example: EvalExample {
                    id: format!("conflict-{i:04}"),
                    context,
                    question: CONFLICT_QUESTION.to_string(),
                    reference: ctx_word.to_string(),
                },
                expected_flip_delta: gap,
                context_answer: ctx_word.to_string(),
                parametric_answer: par_word.to_string(),
            })
        })
        .collect()
}

/// Runs a case under greedy static boosting and reports whether the first
/// generated token is the context answer.
pub fn conflict_case_flips(case: &ConflictCase, delta: f64) -> Result<bool> {
    let mut model = ScriptedModel::new(case.spec.clone())?;
    let cfg = BoostConfig {
        mode: BoostMode::Static,
        delta,
        sampler: SamplerKind::Greedy,
        max_new_tokens: 1,
        ..Default::default()
    };
    let parts = PromptParts::new(&case.example.context, &case.example.question, PromptTemplate::default_qa());
    let res = generate(&parts, &mut model, &cfg)?;
    let chosen = res.trace.first().ok_or_else(|| Error::Invariant("empty trace".into()))?.chosen_token;
    Ok(Some(chosen) == model.vocab().id(&case.context_answer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::support::SupportEntry;
    use proptest::prelude::*;

    #[test]
    fn rouge_l_examples() {
        assert_eq!(rouge_l("the cat sat", "the cat sat"), 1.0);
        assert!((rouge_l("a b c", "a c d") - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rouge_l("x y", "p q"), 0.0);
        assert_eq!(rouge_l("", ""), 0.0);
        assert_eq!(rouge_l("a", ""), 0.0);
        // LCS 3 of 4 and 3 of 5: P = 3/4, R = 3/5, F = 2/3.
        assert!((rouge_l("a b c d", "a x b c y") - 2.0 / 3.0).abs() < 1e-15);
    }

    fn support_of(tokens: &[u32]) -> SupportSet {
        SupportSet {
            span_start: 0,
            span_length: tokens.len(),
            entries: tokens
                .iter()
                .enumerate()
                .map(|(i, &t)| (TokenId(t), SupportEntry { positions: vec![i], semantic_score: None }))
                .collect(),
        }
    }

    #[test]
    fn support_rate_examples() {
        let s = support_of(&[1, 2, 3]);
        assert_eq!(support_rate(&[TokenId(1), TokenId(2)], &s), 1.0);
        assert_eq!(support_rate(&[TokenId(7), TokenId(8)], &s), 0.0);
        assert_eq!(support_rate(&[TokenId(1), TokenId(2), TokenId(3), TokenId(9)], &s), 0.75);
        assert_eq!(support_rate(&[], &s), 0.0);
    }

    #[test]
    fn exact_match_normalises_case_and_space() {
        assert!(exact_match("  Paris ", "paris"));
        assert!(exact_match("new  york", "New York"));
        assert!(!exact_match("paris", "tokyo"));
    }

    #[test]
    fn dataset_parsing_and_errors() {
        let ok = parse_dataset(
            "{\"id\":\"a\",\"context\":\"x\",\"question\":\"q\",\"reference\":\"r\"}\n\n\
             {\"id\":\"b\",\"context\":\"y\",\"question\":\"q\",\"reference\":\"r\"}\n",
        )
        .unwrap();
        assert_eq!(ok.len(), 2);
        assert!(parse_dataset("").unwrap().is_empty());

        let dup = "{\"id\":\"a\",\"context\":\"x\",\"question\":\"q\",\"reference\":\"r\"}\n\
                   {\"id\":\"a\",\"context\":\"y\",\"question\":\"q\",\"reference\":\"r\"}";
        let err = parse_dataset(dup).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("`a`"), "{err}");

        let err = parse_dataset("{\"id\":\"a\"}").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
        let err = parse_dataset("not json").unwrap_err();
        assert!(matches!(err, Error::Dataset(_)));
        let err = parse_dataset("{\"id\":\"a\",\"context\":\" \",\"question\":\"q\",\"reference\":\"r\"}").unwrap_err();
        assert!(err.to_string().contains("empty context"));
    }

    #[test]
    fn empty_dataset_report() {
        let mut m = crate::backend::build_bigram_backend("a b", 2, 0, 1.0).unwrap();
        let r = run_eval(&[], &mut m, &BoostConfig::default(), &PromptTemplate::default_qa()).unwrap();
        assert!(r.per_example.is_empty());
        assert!(r.aggregate.empty);
        assert_eq!(r.aggregate.examples, 0);
        assert_eq!(r.aggregate.rouge_l, 0.0);
    }

    #[test]
    fn conflict_suite_fixed_gap() {
        let suite = generate_conflict_suite(1, (1.0, 1.0), 3).unwrap();
        let case = &suite[0];
        assert_eq!(case.expected_flip_delta, 1.0);
        assert_ne!(case.context_answer, case.parametric_answer);
        assert!(!conflict_case_flips(case, 0.5).unwrap());
        assert!(conflict_case_flips(case, 1.5).unwrap());
    }

    #[test]
    fn conflict_suite_is_deterministic_and_gapped() {
        let a = generate_conflict_suite(100, (0.5, 3.0), 13).unwrap();
        let b = generate_conflict_suite(100, (0.5, 3.0), 13).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|c| c.expected_flip_delta >= 0.5 && c.expected_flip_delta < 3.0));
        assert!(generate_conflict_suite(1, (0.0, 1.0), 0).is_err());
        assert!(generate_conflict_suite(1, (2.0, 1.0), 0).is_err());
    }

    #[test]
    fn sweep_needs_two_points() {
        let mut m = crate::backend::build_bigram_backend("a b", 2, 0, 1.0).unwrap();
        let err = run_sweep(
            &[],
            &mut m,
            &BoostConfig::default(),
            &PromptTemplate::default_qa(),
            &[SweepPoint::uniform(1.0)],
            &[0],
        );
        assert!(err.is_err());
    }

    proptest! {
        #[test]
        fn rouge_self_is_one_and_trims(words in prop::collection::vec("[a-z]{1,4}", 1..8), pad in "[ \t]{0,3}") {
            let x = words.join(" ");
            prop_assert_eq!(rouge_l(&x, &x), 1.0);
            let padded = format!("{pad}{x}{pad}");
            prop_assert_eq!(rouge_l(&padded, &x), 1.0);
        }

        #[test]
        fn support_rate_ignores_order(mut toks in prop::collection::vec(0u32..10, 0..12), seed in any::<u64>()) {
            let s = support_of(&[1, 3, 5]);
            let ids: Vec<TokenId> = toks.iter().map(|&t| TokenId(t)).collect();
            let before = support_rate(&ids, &s);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            toks.shuffle(&mut rng);
            let ids: Vec<TokenId> = toks.iter().map(|&t| TokenId(t)).collect();
            prop_assert_eq!(before, support_rate(&ids, &s));
        }
    }
}
