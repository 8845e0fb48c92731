//! `ctrnli` command-line interface.
//!
//! Exit status: 0 on success, 2 for usage errors, bad configuration or
//! missing inputs, 1 for failures while running a stage.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::cartography::{
    classify_from_dynamics, export_data_map, final_weights, intersect_difficulty, overlap_by_difficulty,
    summarize_dynamics, write_difficulty, write_overlap, DifficultyMethod,
};
use crate::corpus::{
    corpus_paths, corpus_stats, load_corpus, load_instances, read_jsonl, render_prompt, resolve_record,
    truncate_pair, write_jsonl, OverflowMode, PairRecord, ResolvedPair,
};
use crate::error::Error;
use crate::eval::{
    build_report, read_predictions, validate_links, write_predictions, write_report, GoldEntry,
    InterventionKind, InterventionLink, LabelMap,
};
use crate::perturb::acronym::{
    perturb_acronyms, review_rows, AcronymInventory, AcronymMode, EmbeddingScorer, SimilarityScorer,
    TrigramCosine,
};
use crate::perturb::numeric::{load_external_spans, perturb_numeric_instance, ComparatorLexicon, DeltaPolicy, NumericOptions};
use crate::perturb::{PerturbationKind, PerturbedInstance};
use crate::trainer::{
    predict, read_checkpoint, train, write_checkpoint, Checkpoint, Objective, PredictOptions, TrainConfig,
    TrainingDynamics,
};

#[derive(Debug, Parser)]
#[command(name = "ctrnli", version, about = "Robustness toolkit for clinical-trial NLI corpora", arg_required_else_help = true)]
pub struct Cli {
    /// Seed for every stochastic stage (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving all outputs [default: out].
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resolve premises, apply the token budget and write pairs.jsonl.
    Ingest(IngestArgs),
    /// Instance counts by type, section and label (stats.csv).
    Stats(CorpusArg),
    /// Expand acronyms in hypotheses.
    PerturbAcronym(AcronymArgs),
    /// Shift numeric values and flip comparators in hypotheses.
    PerturbNumeric(NumericArgs),
    /// Min-max training; writes model.ckpt and dynamics.jsonl.
    Train(TrainArgs),
    /// Majority-vote predictions from a checkpoint.
    Predict(PredictArgs),
    /// Data map, weight histogram, easy/hard sets and word overlap.
    Analyze(AnalyzeArgs),
    /// Macro F1, per-group tables, consistency and faithfulness.
    Evaluate(EvaluateArgs),
    /// Render instruction prompts for pairs.
    RenderPrompts(RenderArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArg {
    /// Corpus directory (instances.json + ctrs/) or an instances file.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub corpus: CorpusArg,
    /// Whitespace-token budget per pair, template reserve included.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, value_enum)]
    pub overflow: Option<OverflowArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OverflowArg {
    Truncate,
    Remove,
}

impl From<OverflowArg> for OverflowMode {
    fn from(a: OverflowArg) -> Self {
        match a {
            OverflowArg::Truncate => OverflowMode::Truncate,
            OverflowArg::Remove => OverflowMode::Remove,
        }
    }
}

#[derive(Debug, Args)]
pub struct AcronymArgs {
    /// pairs.jsonl produced by `ingest`.
    #[arg(long)]
    pub pairs: PathBuf,
    /// CSV of short_form,long_form[,vector].
    #[arg(long)]
    pub inventory: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<AcronymModeArg>,
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerArg>,
    /// Also write acronym_review.csv listing every ranked candidate.
    #[arg(long)]
    pub review: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcronymModeArg {
    Positive,
    Negative,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerArg {
    Trigram,
    Embedding,
}

#[derive(Debug, Args)]
pub struct NumericArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    /// Comparator lexicon (`phrase|antonym` lines); built-in if omitted.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// `percent:<p>` or `abs:<k>`.
    #[arg(long)]
    pub policy: Option<String>,
    /// Draw the shift direction per instance from the seed.
    #[arg(long)]
    pub randomize_sign: bool,
    /// JSONL of externally detected entity spans.
    #[arg(long)]
    pub spans: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// One or more pairs files; all instances must be labeled.
    #[arg(long, required = true, num_args = 1..)]
    pub pairs: Vec<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learner_lr: Option<f64>,
    #[arg(long)]
    pub aux_lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Feature-hashing dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    /// Checkpoint whose learner initializes training.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectiveArg {
    Minmax,
    Plain,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub pairs: Vec<PathBuf>,
    /// Odd number of stochastic passes.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub dynamics: PathBuf,
    /// Pairs used for the word-overlap table.
    #[arg(long, num_args = 1..)]
    pub pairs: Vec<PathBuf>,
    /// Weight-histogram bins.
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Gold pairs files; their uuids must match the predictions exactly.
    #[arg(long, required = true, num_args = 1..)]
    pub pairs: Vec<PathBuf>,
    /// Intervention links (JSONL of uuid, source_uuid, kind).
    #[arg(long, num_args = 1..)]
    pub links: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long, num_args = 1..)]
    pub pairs: Vec<PathBuf>,
    /// Append the gold answer.
    #[arg(long)]
    pub with_answer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSettings {
    pub runs: usize,
    pub dropout: f64,
}

impl Default for PredictSettings {
    fn default() -> Self {
        let d = PredictOptions::default();
        PredictSettings {
            runs: d.runs,
            dropout: d.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericSettings {
    pub policy: String,
    pub randomize_sign: bool,
    pub lexicon: Option<PathBuf>,
}

impl Default for NumericSettings {
    fn default() -> Self {
        NumericSettings {
            policy: DeltaPolicy::default().to_string(),
            randomize_sign: false,
            lexicon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcronymSettings {
    pub inventory: Option<PathBuf>,
    pub mode: AcronymModeArg,
    pub scorer: ScorerArg,
}

impl Default for AcronymSettings {
    fn default() -> Self {
        AcronymSettings {
            inventory: None,
            mode: AcronymModeArg::Both,
            scorer: ScorerArg::Trigram,
        }
    }
}

/// Contents of the `--config` file. Every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub corpus: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub token_budget: usize,
    pub overflow: OverflowMode,
    pub train: TrainConfig,
    pub predict: PredictSettings,
    pub numeric: NumericSettings,
    pub acronym: AcronymSettings,
    pub histogram_bins: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            corpus: None,
            out_dir: None,
            token_budget: 4096,
            overflow: OverflowMode::Truncate,
            train: TrainConfig::default(),
            predict: PredictSettings::default(),
            numeric: NumericSettings::default(),
            acronym: AcronymSettings::default(),
            histogram_bins: 20,
        }
    }
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} not found: {}", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{what} not found: {}", path.display())))
    }
}

fn load_config(cli: &Cli) -> CliResult<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            require_file(path, "config file")?;
            let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.train.seed = cfg.seed;
    if let Some(p) = &cfg.corpus {
        require_dir(p, "corpus directory").or_else(|_| require_file(p, "corpus"))?;
    }
    if let Some(p) = &cfg.acronym.inventory {
        require_file(p, "acronym inventory")?;
    }
    if let Some(p) = &cfg.numeric.lexicon {
        require_file(p, "comparator lexicon")?;
    }
    cfg.numeric
        .policy
        .parse::<DeltaPolicy>()
        .map_err(|e| usage(format!("invalid config: {e}")))?;
    cfg.train.validate().map_err(|e| usage(format!("invalid config: {e}")))?;
    Ok(cfg)
}

fn out_path(out_dir: &Path, name: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::Runtime(Error::io(out_dir, e)))?;
    Ok(out_dir.join(name))
}

fn read_pairs(paths: &[PathBuf]) -> CliResult<Vec<PairRecord>> {
    for p in paths {
        require_file(p, "pairs file")?;
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for p in paths {
        for rec in read_jsonl::<PairRecord>(p)? {
            if !seen.insert(rec.pair.uuid.clone()) {
                return Err(Error::instance(&rec.pair.uuid, format!("duplicate uuid (in {})", p.display())).into());
            }
            out.push(rec);
        }
    }
    Ok(out)
}

/// Parses `argv` and runs the selected subcommand; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let out = cli
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let out = out.as_path();
    match &cli.command {
        Command::Ingest(a) => ingest(a, &cfg, out),
        Command::Stats(a) => stats(a, &cfg, out),
        Command::PerturbAcronym(a) => perturb_acronym_cmd(a, &cfg, out),
        Command::PerturbNumeric(a) => perturb_numeric_cmd(a, &cfg, out),
        Command::Train(a) => train_cmd(a, &cfg, out),
        Command::Predict(a) => predict_cmd(a, &cfg, out),
        Command::Analyze(a) => analyze_cmd(a, &cfg, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::RenderPrompts(a) => render_cmd(a, out),
    }
}

fn corpus_inputs(arg: &CorpusArg, cfg: &PipelineConfig) -> CliResult<(PathBuf, PathBuf)> {
    let corpus = arg
        .corpus
        .as_ref()
        .or(cfg.corpus.as_ref())
        .ok_or_else(|| usage("--corpus is required (or `corpus` in the config)"))?;
    let (inst, ctrs) = corpus_paths(corpus);
    require_file(&inst, "instances file")?;
    Ok((inst, ctrs))
}

fn ingest(a: &IngestArgs, cfg: &PipelineConfig, out: &Path) -> CliResult<()> {
    let (inst, ctrs) = corpus_inputs(&a.corpus, cfg)?;
    require_dir(&ctrs, "trial directory")?;
    let budget = a.budget.unwrap_or(cfg.token_budget);
    let mode = a.overflow.map(OverflowMode::from).unwrap_or(cfg.overflow);
    let corpus = load_corpus(&inst, &ctrs)?;
    let mut records = Vec::with_capacity(corpus.instances.len());
    let mut dropped = 0;
    for i in &corpus.instances {
        let mut rec = resolve_record(i, &corpus.trials)?;
        match truncate_pair(&rec.pair, budget, mode)? {
            Some(p) => {
                rec.pair = p;
                records.push(rec);
            }
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} pairs exceeded the {budget}-token budget and were removed");
    }
    write_jsonl(&out_path(out, "pairs.jsonl")?, &records)?;
    println!("wrote {} pairs ({dropped} removed)", records.len());
    Ok(())
}

fn stats(a: &CorpusArg, cfg: &PipelineConfig, out: &Path) -> CliResult<()> {
    let (inst, _) = corpus_inputs(a, cfg)?;
    let instances = load_instances(&inst)?;
    let csv = corpus_stats(&instances).to_csv();
    let path = out_path(out, "stats.csv")?;
    fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
    print!("{csv}");
    Ok(())
}

/// Gold/metadata record for a perturbed instance, ready for training,
/// prediction and evaluation.
fn perturbed_record(p: &PerturbedInstance, source: &PairRecord) -> PairRecord {
    PairRecord {
        pair: ResolvedPair {
            uuid: p.new_uuid.clone(),
            premise: source.pair.premise.clone(),
            hypothesis: p.hypothesis.clone(),
            label: Some(p.label),
        },
        section: source.section,
        itype: source.itype,
        intervention: Some(intervention_kind(p.kind)),
    }
}

/// Evaluation category of each perturbation.
pub fn intervention_kind(kind: PerturbationKind) -> InterventionKind {
    match kind {
        PerturbationKind::AcronymPositive => InterventionKind::Definitions,
        PerturbationKind::AcronymNegative => InterventionKind::Contradiction,
        PerturbationKind::NumericValue | PerturbationKind::NumericComparator => {
            InterventionKind::NumericalContradiction
        }
    }
}

fn write_perturbations(out: &Path, prefix: &str, sources: &[PairRecord], produced: &[PerturbedInstance]) -> CliResult<()> {
    let by_uuid: BTreeMap<&str, &PairRecord> = sources.iter().map(|r| (r.pair.uuid.as_str(), r)).collect();
    let records: Vec<PairRecord> = produced
        .iter()
        .map(|p| perturbed_record(p, by_uuid[p.source_uuid.as_str()]))
        .collect();
    let links: Vec<InterventionLink> = produced
        .iter()
        .map(|p| InterventionLink {
            uuid: p.new_uuid.clone(),
            source_uuid: p.source_uuid.clone(),
            kind: intervention_kind(p.kind),
        })
        .collect();
    write_jsonl(&out_path(out, &format!("{prefix}_perturbed.jsonl"))?, produced)?;
    write_jsonl(&out_path(out, &format!("{prefix}_pairs.jsonl"))?, &records)?;
    write_jsonl(&out_path(out, &format!("{prefix}_links.jsonl"))?, &links)?;
    println!("wrote {} {prefix} perturbations from {} pairs", produced.len(), sources.len());
    Ok(())
}

fn perturb_acronym_cmd(a: &AcronymArgs, cfg: &PipelineConfig, out: &Path) -> CliResult<()> {
    let inv_path = a
        .inventory
        .clone()
        .or_else(|| cfg.acronym.inventory.clone())
        .ok_or_else(|| usage("perturb-acronym needs --inventory (or acronym.inventory in the config)"))?;
    require_file(&inv_path, "acronym inventory")?;
    let sources = read_pairs(std::slice::from_ref(&a.pairs))?;
    let inv = AcronymInventory::from_csv(&inv_path)?;
    let trigram = TrigramCosine;
    let embedding;
    let scorer: &dyn SimilarityScorer = match a.scorer.unwrap_or(cfg.acronym.scorer) {
        ScorerArg::Trigram => &trigram,
        ScorerArg::Embedding => {
            let table = inv
                .embeddings()
                .ok_or_else(|| usage("the embedding scorer needs vectors in the inventory"))?;
            embedding = EmbeddingScorer::new(table);
            &embedding
        }
    };
    let modes: &[AcronymMode] = match a.mode.unwrap_or(cfg.acronym.mode) {
        AcronymModeArg::Positive => &[AcronymMode::Positive],
        AcronymModeArg::Negative => &[AcronymMode::Negative],
        AcronymModeArg::Both => &[AcronymMode::Positive, AcronymMode::Negative],
    };
    let mut produced = Vec::new();
    let mut review = Vec::new();
    for rec in &sources {
        if rec.pair.label.is_none() {
            continue;
        }
        for &mode in modes {
            produced.extend(perturb_acronyms(&rec.pair, &inv, mode, scorer)?);
        }
        if a.review {
            review.extend(review_rows(&rec.pair, &inv, scorer)?);
        }
    }
    if a.review {
        let path = out_path(out, "acronym_review.csv")?;
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
        for r in &review {
            w.serialize(r).map_err(|e| Error::csv(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    write_perturbations(out, "acronym", &sources, &produced)
}

fn perturb_numeric_cmd(a: &NumericArgs, cfg: &PipelineConfig, out: &Path) -> CliResult<()> {
    let policy_text = a.policy.clone().unwrap_or_else(|| cfg.numeric.policy.clone());
    let policy: DeltaPolicy = policy_text.parse().map_err(|e: Error| usage(e.to_string()))?;
    let lexicon = match a.lexicon.clone().or_else(|| cfg.numeric.lexicon.clone()) {
        Some(path) => {
            require_file(&path, "comparator lexicon")?;
            ComparatorLexicon::from_path(&path)?
        }
        None => ComparatorLexicon::default(),
    };
    let spans = match &a.spans {
        Some(path) => {
            require_file(path, "span file")?;
            Some(load_external_spans(path)?)
        }
        None => None,
    };
    let sources = read_pairs(std::slice::from_ref(&a.pairs))?;
    let opts = NumericOptions {
        policy,
        randomize_sign: a.randomize_sign || cfg.numeric.randomize_sign,
        seed: cfg.seed,
    };
    let mut produced = Vec::new();
    for rec in &sources {
        if rec.pair.label.is_none() {
            continue;
        }
        let ext = spans
            .as_ref()
            .map(|m| m.get(&rec.pair.uuid).map(Vec::as_slice).unwrap_or(&[]));
        produced.extend(perturb_numeric_instance(&rec.pair, &lexicon, &opts, ext)?);
    }
    write_perturbations(out, "numeric", &sources, &produced)
}

fn train_cmd(a: &TrainArgs, cfg: &PipelineConfig, out: &Path) -> CliResult<()> {
    let mut tc = cfg.train.clone();
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.learner_lr {
        tc.learner_lr = v;
    }
    if let Some(v) = a.aux_lr {
        tc.aux_lr = v;
    }
    if let Some(v) = a.weight_decay {
        tc.weight_decay = v;
    }
    if let Some(v) = a.dim {
        tc.dim = v;
    }
    if let Some(o) = a.objective {
        tc.objective = match o {
            ObjectiveArg::Minmax => Objective::MinMax,
            ObjectiveArg::Plain => Objective::Plain,
        };
    }
    tc.validate().map_err(|e| usage(e.to_string()))?;
    let warm = match &a.warm_start {
        Some(path) => {
            require_file(path, "warm-start checkpoint")?;
            Some(read_checkpoint(path)?.theta)
        }
        None => None,
    };
    let pairs: Vec<ResolvedPair> = read_pairs(&a.pairs)?.into_iter().map(|r| r.pair).collect();
    tc.dynamics_path = Some(out_path(out, "dynamics.jsonl")?);
    let result = train(&pairs, &tc, warm.as_ref())?;
    let ckpt = Checkpoint {
        config: tc.clone(),
        theta: result.theta,
        phi: result.phi,
    };
    write_checkpoint(&out_path(out, "model.ckpt")?, &ckpt)?;
    println!("trained on {} pairs for {} epochs", pairs.len(), tc.epochs);
    Ok(())
}

fn predict_cmd(a: &PredictArgs, cfg: &PipelineConfig, out: &Path) -> CliResult<()> {
    require_file(&a.model, "model checkpoint")?;
    let opts = PredictOptions {
        runs: a.runs.unwrap_or(cfg.predict.runs),
        dropout: a.dropout.unwrap_or(cfg.predict.dropout),
        seed: cfg.seed,
    };
    if opts.runs.is_multiple_of(2) {
        return Err(usage(format!("--runs must be odd, got {}", opts.runs)));
    }
    let pairs: Vec<ResolvedPair> = read_pairs(&a.pairs)?.into_iter().map(|r| r.pair).collect();
    let ckpt = read_checkpoint(&a.model)?;
    let preds = predict(&ckpt.theta, &pairs, &opts)?;
    let map: LabelMap = preds.iter().map(|p| (p.uuid.clone(), p.label)).collect();
    write_predictions(&out_path(out, "predictions.json")?, &map)?;
    write_jsonl(&out_path(out, "prediction_votes.jsonl")?, &preds)?;
    println!("predicted {} pairs with {} runs", preds.len(), opts.runs);
    Ok(())
}

#[derive(Serialize)]
struct Intersection {
    easy: BTreeSet<String>,
    hard: BTreeSet<String>,
}

fn analyze_cmd(a: &AnalyzeArgs, cfg: &PipelineConfig, out: &Path) -> CliResult<()> {
    require_file(&a.dynamics, "dynamics log")?;
    let bins = a.bins.unwrap_or(cfg.histogram_bins);
    if bins == 0 {
        return Err(usage("--bins must be positive"));
    }
    let pairs: Vec<ResolvedPair> = read_pairs(&a.pairs)?.into_iter().map(|r| r.pair).collect();
    let dynamics = TrainingDynamics::read_jsonl(&a.dynamics)?;
    let summaries = summarize_dynamics(&dynamics)?;
    export_data_map(
        &summaries,
        &final_weights(&dynamics),
        bins,
        &out_path(out, "data_map.csv")?,
        &out_path(out, "weight_histogram.csv")?,
    )?;
    let by_weight = classify_from_dynamics(&dynamics, DifficultyMethod::MinMaxWeights)?;
    let by_conf = classify_from_dynamics(&dynamics, DifficultyMethod::Cartography)?;
    write_difficulty(&out_path(out, "difficulty_minmax.json")?, &by_weight)?;
    write_difficulty(&out_path(out, "difficulty_cartography.json")?, &by_conf)?;
    let (easy, hard) = intersect_difficulty(&by_weight, &by_conf);
    let path = out_path(out, "difficulty_intersection.json")?;
    let text = serde_json::to_string_pretty(&Intersection { easy, hard }).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    if !pairs.is_empty() {
        let rows = overlap_by_difficulty(&pairs, &[&by_weight, &by_conf])?;
        write_overlap(&out_path(out, "word_overlap.csv")?, &rows)?;
    }
    println!(
        "analyzed {} instances: weights easy/hard {}/{}, cartography easy/hard {}/{}",
        summaries.len(),
        by_weight.easy.len(),
        by_weight.hard.len(),
        by_conf.easy.len(),
        by_conf.hard.len()
    );
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs, out: &Path) -> CliResult<()> {
    require_file(&a.predictions, "predictions file")?;
    for l in &a.links {
        require_file(l, "links file")?;
    }
    let records = read_pairs(&a.pairs)?;
    let mut gold = BTreeMap::new();
    for r in &records {
        let label = r
            .pair
            .label
            .ok_or_else(|| Error::instance(&r.pair.uuid, "gold pairs must be labeled"))?;
        gold.insert(
            r.pair.uuid.clone(),
            GoldEntry {
                label,
                section: Some(r.section),
                intervention: r.intervention,
            },
        );
    }
    let preds = read_predictions(&a.predictions)?;
    let mut links = Vec::new();
    for l in &a.links {
        links.extend(read_jsonl::<InterventionLink>(l)?);
    }
    validate_links(&preds, &links)?;
    let report = build_report(&gold, &preds, &links)?;
    let written = write_report(&report, out)?;
    println!(
        "macro F1 {:.4}; consistency {}; faithfulness {}; wrote {} files",
        report.macro_f1,
        report.consistency.map_or("n/a".to_string(), |v| format!("{v:.4}")),
        report.faithfulness.map_or("n/a".to_string(), |v| format!("{v:.4}")),
        written.len()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct PromptRecord {
    pub uuid: String,
    pub prompt: String,
}

fn render_cmd(a: &RenderArgs, out: &Path) -> CliResult<()> {
    if a.pairs.is_empty() {
        return Err(usage("render-prompts needs at least one --pairs file"));
    }
    let records = read_pairs(&a.pairs)?;
    let prompts = records
        .iter()
        .map(|r| {
            Ok(PromptRecord {
                uuid: r.pair.uuid.clone(),
                prompt: render_prompt(&r.pair, a.with_answer)?,
            })
        })
        .collect::<crate::Result<Vec<_>>>()?;
    write_jsonl(&out_path(out, "prompts.jsonl")?, &prompts)?;
    let dir = out.join("prompts");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for p in &prompts {
        let stem: String = p
            .uuid
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
            .collect();
        let path = dir.join(format!("{stem}.txt"));
        fs::write(&path, &p.prompt).map_err(|e| Error::io(&path, e))?;
    }
    println!("rendered {} prompts", prompts.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_global_flags_anywhere() {
        let cli = Cli::try_parse_from(["ctrnli", "stats", "--corpus", "x", "--seed", "4", "--out-dir", "o"]).unwrap();
        assert_eq!(cli.seed, Some(4));
        assert_eq!(cli.out_dir, Some(PathBuf::from("o")));
        assert!(matches!(cli.command, Command::Stats(_)));
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["ctrnli"]), 2);
        assert_eq!(run(["ctrnli", "bogus"]), 2);
        assert_eq!(run(["ctrnli", "stats", "--corpus", "/definitely/missing"]), 2);
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), cfg);
        let partial: PipelineConfig = serde_json::from_str(r#"{"train": {"epochs": 7}}"#).unwrap();
        assert_eq!(partial.train.epochs, 7);
        assert_eq!(partial.train.batch_size, TrainConfig::default().batch_size);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"trian": {}}"#).is_err());
    }

    #[test]
    fn perturbation_kinds_map_to_interventions() {
        assert!(intervention_kind(PerturbationKind::AcronymPositive).is_preserving());
        assert!(intervention_kind(PerturbationKind::AcronymNegative).is_altering());
        assert!(intervention_kind(PerturbationKind::NumericValue).is_altering());
        assert!(intervention_kind(PerturbationKind::NumericComparator).is_altering());
    }
}
