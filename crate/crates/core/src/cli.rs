//! Command-line front end. [`run`] is the whole program minus logger setup,
//! so it can be driven in-process.
//!
//! Every run that writes to `--out` also writes `manifest.json`, which
//! `cfb replay` uses to reproduce the outputs. Output files carry no
//! timestamps, so a replay is byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::backend::{BigramModel, BigramParams, LanguageModel, ScriptedModel};
use crate::config::{validate_config, BoostConfig, ConfigFile, SamplerKind};
use crate::cost::{flops_table, format_flops_table, CostScenario};
use crate::decode::{generate, GenerationResult};
use crate::error::{Error, Result};
use crate::eval::{
    conflict_case_flips, format_report_table, generate_conflict_suite, load_dataset, run_eval, run_sweep, sweep_csv,
    SweepPoint,
};
use crate::support::{PromptParts, PromptTemplate};
use crate::types::BoostMode;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "cfb", version, about = "Context-fidelity boosted decoding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate an answer for one context and question.
    Generate(GenerateArgs),
    /// Score a JSONL dataset.
    Eval(EvalArgs),
    /// Evaluate a dataset over a grid of boost values.
    Sweep(SweepArgs),
    /// Run the synthetic context-vs-prior conflict suite under static boosting.
    Conflict(ConflictArgs),
    /// Print the per-step FLOPs table.
    Flops(FlopsArgs),
    /// Summarise the trace of a saved generation result.
    InspectTrace(InspectArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Eval(_) => "eval",
            Command::Sweep(_) => "sweep",
            Command::Conflict(_) => "conflict",
            Command::Flops(_) => "flops",
            Command::InspectTrace(_) => "inspect-trace",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Static,
    ContextAware,
    TokenAware,
}

impl From<ModeArg> for BoostMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Static => BoostMode::Static,
            ModeArg::ContextAware => BoostMode::ContextAware,
            ModeArg::TokenAware => BoostMode::TokenAware,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerArg {
    TopP,
    Greedy,
}

/// Backend, config and boost overrides shared by the decoding commands.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RunArgs {
    /// JSON config file; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `scripted:PATH` (JSON model script) or `bigram:PATH` (text corpus).
    #[arg(long)]
    pub backend: String,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub delta_min: Option<f64>,
    #[arg(long)]
    pub delta_max: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    /// Re-read the divergence every step instead of once per example.
    #[arg(long)]
    pub divergence_per_step: bool,
    /// Clamp negative cosine similarities to zero before fusion.
    #[arg(long)]
    pub clamp_semantic: bool,
    /// Template id from the config's `templates`.
    #[arg(long)]
    pub template: Option<String>,
    /// Bigram backend: embedding dimension.
    #[arg(long, default_value_t = 16)]
    pub embed_dim: usize,
    /// Bigram backend: embedding seed.
    #[arg(long, default_value_t = 0)]
    pub embed_seed: u64,
    /// Bigram backend: additive count smoothing.
    #[arg(long, default_value_t = 0.1)]
    pub smoothing: f64,
    /// Output directory; a manifest is written alongside the outputs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, requires = "question", conflicts_with = "input")]
    pub context: Option<String>,
    #[arg(long, requires = "context", conflicts_with = "input")]
    pub question: Option<String>,
    /// JSON file with `context` and `question` fields.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// JSONL file of `{id, context, question, reference}` records.
    #[arg(long)]
    pub dataset: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Boost values applied as `delta = delta_min = delta_max`.
    #[arg(long, value_delimiter = ',', conflicts_with = "ranges")]
    pub deltas: Vec<f64>,
    /// `MIN:MAX` pairs for the adaptive boost range.
    #[arg(long, value_delimiter = ',')]
    pub ranges: Vec<String>,
    /// Seeds to average over; defaults to the configured seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ConflictArgs {
    #[arg(long, default_value_t = 100)]
    pub cases: usize,
    #[arg(long, default_value_t = 0.5)]
    pub gap_min: f64,
    #[arg(long, default_value_t = 3.0)]
    pub gap_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Each case is run at `gap - margin` and `gap + margin`.
    #[arg(long, default_value_t = 0.1)]
    pub margin: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FlopsArgs {
    #[arg(long, default_value_t = 1)]
    pub batch: u64,
    #[arg(long, default_value_t = 128)]
    pub seq_len: u64,
    #[arg(long, default_value_t = 4096)]
    pub hidden: u64,
    #[arg(long, default_value_t = 32)]
    pub layers: u64,
    #[arg(long, default_value_t = 512)]
    pub context_len: u64,
    #[arg(long, default_value_t = 32000)]
    pub vocab: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InspectArgs {
    /// A `result.json` written by `generate`.
    pub path: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Where to write the reproduced outputs.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendSpec {
    Scripted { path: PathBuf },
    Bigram { corpus: PathBuf, dim: usize, seed: u64, smoothing: f64 },
}

impl BackendSpec {
    pub fn from_args(r: &RunArgs) -> Result<Self> {
        let (kind, path) = r
            .backend
            .split_once(':')
            .ok_or_else(|| Error::Input(format!("backend spec `{}` is not `kind:path`", r.backend)))?;
        match kind {
            "scripted" => Ok(Self::Scripted { path: path.into() }),
            "bigram" => {
                Ok(Self::Bigram { corpus: path.into(), dim: r.embed_dim, seed: r.embed_seed, smoothing: r.smoothing })
            }
            other => Err(Error::Input(format!("unknown backend kind `{other}`; expected scripted or bigram"))),
        }
    }
}

/// What was run, from where, and when.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub backend_spec: Option<BackendSpec>,
    pub output_dir: PathBuf,
    pub timestamp: String,
    pub version: String,
    /// The parsed invocation with paths made absolute; replay runs this.
    pub invocation: Command,
}

/// Parses `args` (without the program name), runs the command and returns
/// the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(std::iter::once("cfb".to_string()).chain(args.iter().cloned())) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, &args) {
        Ok(()) => 0,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(mut command: Command, args: &[String]) -> Result<()> {
    absolutize(&mut command)?;
    let invocation = command.clone();
    match command {
        Command::Replay(r) => replay(&r),
        other => {
            let outputs = produce(&other)?;
            match out_dir(&other) {
                Some(dir) => {
                    write_outputs(dir, &outputs)?;
                    write_manifest(dir, args, &invocation)
                }
                None => {
                    print!("{}", outputs.stdout);
                    Ok(())
                }
            }
        }
    }
}

fn replay(r: &ReplayArgs) -> Result<()> {
    let text = fs::read_to_string(&r.manifest).map_err(|e| Error::io(&r.manifest, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::json("manifest", e))?;
    let mut command = manifest.invocation;
    if matches!(command, Command::Replay(_)) {
        return Err(Error::Input("a manifest cannot record a replay".into()));
    }
    set_out_dir(&mut command, r.out.clone());
    log::info!("replaying `{}` into {}", manifest.command, r.out.display());
    let outputs = produce(&command)?;
    write_outputs(&r.out, &outputs)?;
    write_manifest(&r.out, &manifest.args, &command)
}

fn out_dir(command: &Command) -> Option<&Path> {
    match command {
        Command::Generate(a) => a.run.out.as_deref(),
        Command::Eval(a) => a.run.out.as_deref(),
        Command::Sweep(a) => a.run.out.as_deref(),
        Command::Conflict(a) => a.out.as_deref(),
        Command::Flops(a) => a.out.as_deref(),
        Command::InspectTrace(_) | Command::Replay(_) => None,
    }
}

fn set_out_dir(command: &mut Command, dir: PathBuf) {
    match command {
        Command::Generate(a) => a.run.out = Some(dir),
        Command::Eval(a) => a.run.out = Some(dir),
        Command::Sweep(a) => a.run.out = Some(dir),
        Command::Conflict(a) => a.out = Some(dir),
        Command::Flops(a) => a.out = Some(dir),
        Command::InspectTrace(_) | Command::Replay(_) => {}
    }
}

fn abs(p: &mut PathBuf) -> Result<()> {
    *p = std::path::absolute(&*p).map_err(|e| Error::io(&*p, e))?;
    Ok(())
}

fn absolutize_run(r: &mut RunArgs) -> Result<()> {
    if let Some(c) = r.config.as_mut() {
        abs(c)?;
    }
    if let Some(o) = r.out.as_mut() {
        abs(o)?;
    }
    if let Some((kind, path)) = r.backend.split_once(':') {
        let p = std::path::absolute(path).map_err(|e| Error::io(path, e))?;
        r.backend = format!("{kind}:{}", p.display());
    }
    Ok(())
}

fn absolutize(command: &mut Command) -> Result<()> {
    match command {
        Command::Generate(a) => {
            absolutize_run(&mut a.run)?;
            if let Some(i) = a.input.as_mut() {
                abs(i)?;
            }
        }
        Command::Eval(a) => {
            absolutize_run(&mut a.run)?;
            abs(&mut a.dataset)?;
        }
        Command::Sweep(a) => {
            absolutize_run(&mut a.run)?;
            abs(&mut a.dataset)?;
        }
        Command::Conflict(ConflictArgs { out, .. }) | Command::Flops(FlopsArgs { out, .. }) => {
            if let Some(o) = out.as_mut() {
                abs(o)?;
            }
        }
        Command::InspectTrace(a) => abs(&mut a.path)?,
        Command::Replay(a) => {
            abs(&mut a.manifest)?;
            abs(&mut a.out)?;
        }
    }
    Ok(())
}

/// Files to write under `--out`, and what to print when there is none.
struct Outputs {
    files: Vec<(&'static str, String)>,
    stdout: String,
}

fn produce(command: &Command) -> Result<Outputs> {
    match command {
        Command::Generate(a) => cmd_generate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Conflict(a) => cmd_conflict(a),
        Command::Flops(a) => cmd_flops(a),
        Command::InspectTrace(a) => cmd_inspect(a),
        Command::Replay(_) => Err(Error::Invariant("replay has no direct outputs".into())),
    }
}

fn write_outputs(dir: &Path, outputs: &Outputs) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in &outputs.files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn write_manifest(dir: &Path, args: &[String], invocation: &Command) -> Result<()> {
    let run = match invocation {
        Command::Generate(a) => Some(&a.run),
        Command::Eval(a) => Some(&a.run),
        Command::Sweep(a) => Some(&a.run),
        _ => None,
    };
    let manifest = RunManifest {
        command: invocation.name().to_string(),
        args: args.to_vec(),
        config_path: run.and_then(|r| r.config.clone()),
        backend_spec: run.map(BackendSpec::from_args).transpose()?,
        output_dir: dir.to_path_buf(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        invocation: invocation.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("manifest", e))?;
    fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))
}

fn to_json<T: Serialize>(value: &T, what: &str) -> Result<String> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| Error::json(what, e))
}

/// Loads the config file (or defaults), applies flag overrides and
/// validates the result.
fn resolve_config(r: &RunArgs) -> Result<(BoostConfig, PromptTemplate)> {
    let file = match &r.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let mut cfg = file.boost.clone();
    if let Some(m) = r.mode {
        cfg.mode = m.into();
    }
    let overrides = [
        (&mut cfg.delta, r.delta),
        (&mut cfg.delta_min, r.delta_min),
        (&mut cfg.delta_max, r.delta_max),
        (&mut cfg.lambda1, r.lambda1),
        (&mut cfg.lambda2, r.lambda2),
        (&mut cfg.top_p, r.top_p),
    ];
    for (field, value) in overrides {
        if let Some(v) = value {
            *field = v;
        }
    }
    if let Some(s) = r.sampler {
        cfg.sampler = match s {
            SamplerArg::TopP => SamplerKind::TopP,
            SamplerArg::Greedy => SamplerKind::Greedy,
        };
    }
    if let Some(s) = r.seed {
        cfg.seed = s;
    }
    if let Some(n) = r.max_new_tokens {
        cfg.max_new_tokens = n;
    }
    cfg.divergence_per_step |= r.divergence_per_step;
    cfg.clamp_semantic |= r.clamp_semantic;
    let cfg = validate_config(cfg)?;
    let template = match &r.template {
        Some(id) => file.template(id)?,
        None => file.selected_template()?,
    };
    Ok((cfg, template))
}

/// Builds the backend named by a `kind:path` spec. Bigram vocabularies also
/// receive the template's scaffold words so prompts stay tokenizable.
pub fn build_backend(r: &RunArgs, template: &PromptTemplate) -> Result<Box<dyn LanguageModel>> {
    match BackendSpec::from_args(r)? {
        BackendSpec::Scripted { path } => Ok(Box::new(ScriptedModel::load(path)?)),
        BackendSpec::Bigram { corpus, dim, seed, smoothing } => {
            let text = fs::read_to_string(&corpus).map_err(|e| Error::io(&corpus, e))?;
            let params = BigramParams { embedding_dim: dim, seed, smoothing, extra_tokens: template.scaffold_words() };
            Ok(Box::new(BigramModel::build(&text, &params)?))
        }
    }
}

#[derive(Debug, Deserialize)]
struct GenerateInput {
    context: String,
    question: String,
}

fn cmd_generate(a: &GenerateArgs) -> Result<Outputs> {
    let (cfg, template) = resolve_config(&a.run)?;
    let (context, question) = match (&a.input, &a.context, &a.question) {
        (Some(path), _, _) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let input: GenerateInput = serde_json::from_str(&text).map_err(|e| Error::json("input", e))?;
            (input.context, input.question)
        }
        (None, Some(c), Some(q)) => (c.clone(), q.clone()),
        _ => return Err(Error::Input("pass --context and --question, or --input".into())),
    };
    let mut backend = build_backend(&a.run, &template)?;
    let parts = PromptParts::new(context, question, template);
    let result = generate(&parts, backend.as_mut(), &cfg)?;
    let json = to_json(&result, "result")?;
    let text = format!("{}\n", result.text);
    let stdout = match a.run.format {
        OutputFormat::Json => json.clone(),
        OutputFormat::Text => text.clone(),
    };
    Ok(Outputs { files: vec![("result.json", json), ("answer.txt", text)], stdout })
}

fn cmd_eval(a: &EvalArgs) -> Result<Outputs> {
    let (cfg, template) = resolve_config(&a.run)?;
    let dataset = load_dataset(&a.dataset)?;
    if dataset.is_empty() {
        log::warn!("dataset {} has no examples", a.dataset.display());
        eprintln!("warning: dataset {} has no examples", a.dataset.display());
    }
    let mut backend = build_backend(&a.run, &template)?;
    let report = run_eval(&dataset, backend.as_mut(), &cfg, &template)?;
    let json = to_json(&report, "report")?;
    let table = format_report_table(&report);
    let stdout = match a.run.format {
        OutputFormat::Json => json.clone(),
        OutputFormat::Text => table.clone(),
    };
    Ok(Outputs { files: vec![("report.json", json), ("report.txt", table)], stdout })
}

fn parse_range(s: &str) -> Result<SweepPoint> {
    let bad = || Error::Input(format!("range `{s}` is not MIN:MAX"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    Ok(SweepPoint { delta: hi, delta_min: lo, delta_max: hi })
}

fn cmd_sweep(a: &SweepArgs) -> Result<Outputs> {
    let (cfg, template) = resolve_config(&a.run)?;
    let points: Vec<SweepPoint> = if a.ranges.is_empty() {
        a.deltas.iter().map(|&d| SweepPoint::uniform(d)).collect()
    } else {
        a.ranges.iter().map(|s| parse_range(s)).collect::<Result<_>>()?
    };
    for p in &points {
        validate_config(p.apply(&cfg))?;
    }
    let seeds = if a.seeds.is_empty() { vec![cfg.seed] } else { a.seeds.clone() };
    let dataset = load_dataset(&a.dataset)?;
    let mut backend = build_backend(&a.run, &template)?;
    let rows = run_sweep(&dataset, backend.as_mut(), &cfg, &template, &points, &seeds)?;
    let csv = sweep_csv(&rows);
    let stdout = match a.run.format {
        OutputFormat::Json => to_json(&rows, "sweep")?,
        OutputFormat::Text => csv.clone(),
    };
    Ok(Outputs { files: vec![("sweep.csv", csv)], stdout })
}

#[derive(Debug, Serialize)]
struct ConflictRow {
    id: String,
    gap: f64,
    context_answer: String,
    parametric_answer: String,
    flipped_below: bool,
    flipped_above: bool,
}

fn cmd_conflict(a: &ConflictArgs) -> Result<Outputs> {
    if !(a.margin.is_finite() && a.margin > 0.0) {
        return Err(Error::Input(format!("margin must be positive, got {}", a.margin)));
    }
    let suite = generate_conflict_suite(a.cases, (a.gap_min, a.gap_max), a.seed)?;
    let rows = suite
        .iter()
        .map(|c| {
            let gap = c.expected_flip_delta;
            Ok(ConflictRow {
                id: c.example.id.clone(),
                gap,
                context_answer: c.context_answer.clone(),
                parametric_answer: c.parametric_answer.clone(),
                flipped_below: conflict_case_flips(c, (gap - a.margin).max(0.0))?,
                flipped_above: conflict_case_flips(c, gap + a.margin)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let below = rows.iter().filter(|r| r.flipped_below).count();
    let above = rows.iter().filter(|r| r.flipped_above).count();
    let summary = format!(
        "cases: {}\nflipped at gap - {m}: {below}/{n}\nflipped at gap + {m}: {above}/{n}\n",
        rows.len(),
        m = a.margin,
        n = rows.len()
    );
    let json = to_json(&serde_json::json!({ "below": below, "above": above, "cases": rows }), "conflict")?;
    let stdout = match a.format {
        OutputFormat::Json => json.clone(),
        OutputFormat::Text => summary.clone(),
    };
    Ok(Outputs { files: vec![("conflict.json", json), ("conflict.txt", summary)], stdout })
}

fn cmd_flops(a: &FlopsArgs) -> Result<Outputs> {
    let s = CostScenario {
        batch: a.batch,
        seq_len: a.seq_len,
        hidden: a.hidden,
        layers: a.layers,
        context_len: a.context_len,
        vocab: a.vocab,
    };
    if !s.is_valid() {
        return Err(Error::Input("every scenario dimension must be positive".into()));
    }
    let table = format_flops_table(&s);
    let rows: Vec<serde_json::Value> = flops_table(&s)
        .into_iter()
        .map(|(label, flops)| serde_json::json!({ "method": label, "flops": flops }))
        .collect();
    let json = to_json(&serde_json::json!({ "scenario": s, "rows": rows }), "flops")?;
    let stdout = match a.format {
        OutputFormat::Json => json.clone(),
        OutputFormat::Text => table.clone(),
    };
    Ok(Outputs { files: vec![("flops.json", json), ("flops.txt", table)], stdout })
}

fn cmd_inspect(a: &InspectArgs) -> Result<Outputs> {
    let text = fs::read_to_string(&a.path).map_err(|e| Error::io(&a.path, e))?;
    let result: GenerationResult = serde_json::from_str(&text).map_err(|e| Error::json("result", e))?;
    let stdout = match a.format {
        OutputFormat::Json => to_json(&result.trace, "trace")?,
        OutputFormat::Text => {
            let mut out =
                format!("{:>4} {:>10} {:>10} {:>7} {:>6} {:>10}\n", "step", "jsd", "delta", "boosted", "token", "prob");
            for s in &result.trace {
                let jsd = s.divergence_used.map_or("-".to_string(), |d| format!("{d:.6}"));
                let _ = writeln!(
                    out,
                    "{:>4} {jsd:>10} {:>10.6} {:>7} {:>6} {:>10.6}",
                    s.step_index, s.delta_effective, s.boosted_token_count, s.chosen_token.0, s.chosen_prob
                );
            }
            let _ = writeln!(out, "stop: {:?}, text: {}", result.stop_reason, result.text);
            out
        }
    };
    Ok(Outputs { files: Vec::new(), stdout })
}
