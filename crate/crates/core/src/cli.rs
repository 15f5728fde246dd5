//! Command-line front end. One subcommand per pipeline stage plus
//! `reproduce`, which chains them from a TOML config.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::adaptive::{
    optimize_threshold, replay_items, AdaptiveConfig, AdaptiveDecision, ConditionMode, SimilarityAggregate, SweepGrid,
};
use crate::corpus::{load_examples, validate_pool, Example, ExamplePool, Format, Label, LoadOptions, Split};
use crate::error::{Error, Result};
use crate::eval::{ablation_rows, emit_reports, evaluate_run, render_markdown, EvalMode, ReportFormat, ReportRow};
use crate::io::{read_jsonl, write_jsonl, write_string};
use crate::llm::{BackendConfig, ClassificationBackend, LabelLexicon, PromptTemplate, RunLog};
use crate::manifest::RunManifest;
use crate::pipeline::{DemoOrder, Pipeline, PipelineConfig, RunOutput, Strategy};
use crate::retrieval::{Bm25Index, Bm25Params};
use crate::target::{DefaultMatcher, TargetCache, TargetPredictor, TargetTable};

pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const RUNLOG_FILE: &str = "runlog.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const INDEX_FILE: &str = "index.json";
pub const TARGETS_FILE: &str = "targets.jsonl";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const TAU_STAR_FILE: &str = "tau_star.txt";

#[derive(Debug, Parser)]
#[command(
    name = "ariiha",
    version,
    about = "Adaptive retrieval of demonstrations for implicit hate speech detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Build and save a BM25 index over the pool.
    Index(IndexArgs),
    /// Load a pool and print label and target statistics.
    Validate(ValidateArgs),
    /// Fill the target cache for unannotated pool rows and the queries.
    PredictTargets(PredictTargetsArgs),
    /// Classify a split with one demonstration strategy.
    Classify(ClassifyArgs),
    /// Classify the dev split and grid-search the similarity threshold.
    Sweep(SweepArgs),
    /// Score a decision log against gold labels.
    Eval(EvalArgs),
    /// Run index, targets, sweep, test classification and eval from one config.
    Reproduce(ReproduceArgs),
    /// Re-execute the command recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DataArgs {
    #[arg(long)]
    pub pool: PathBuf,
    /// tsv, csv or jsonl; guessed from each file's extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
    /// Target cell value meaning "unknown", e.g. NULL.
    #[arg(long)]
    pub null_token: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Bm25Args {
    /// Saved index; rebuilt from the pool when omitted.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, default_value_t = 1.2)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.75)]
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Mock)]
    pub backend: BackendKind,
    /// JSONL rule file for the mock backend.
    #[arg(long)]
    pub mock_rules: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible server, e.g. http://localhost:8000/v1
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value_t = 256)]
    pub max_tokens: u32,
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
}

impl BackendArgs {
    pub fn to_config(&self) -> Result<BackendConfig> {
        match self.backend {
            BackendKind::Mock => Ok(BackendConfig::Mock {
                rules: self
                    .mock_rules
                    .clone()
                    .ok_or_else(|| Error::Config("--backend mock needs --mock-rules".into()))?,
            }),
            BackendKind::Http => Ok(BackendConfig::Http {
                endpoint: self
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::Config("--backend http needs --endpoint".into()))?,
                model: self
                    .model
                    .clone()
                    .ok_or_else(|| Error::Config("--backend http needs --model".into()))?,
                max_tokens: self.max_tokens,
                retries: self.retries,
                timeout_secs: self.timeout_secs,
            }),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AdaptiveArgs {
    #[arg(long, default_value_t = 10.0)]
    pub tau: f64,
    #[arg(long, default_value = "both")]
    pub condition_mode: ConditionMode,
    #[arg(long, default_value_t = 1)]
    pub min_failing: usize,
    #[arg(long, default_value = "count")]
    pub aggregate: SimilarityAggregate,
    #[arg(long, default_value_t = 3)]
    pub shortcut_max_words: usize,
    /// Only count quoted spans that also appear in the query text.
    #[arg(long)]
    pub shortcut_require_source: bool,
}

impl AdaptiveArgs {
    pub fn to_config(&self) -> AdaptiveConfig {
        AdaptiveConfig {
            tau: self.tau,
            min_failing: self.min_failing,
            shortcut_max_words: self.shortcut_max_words,
            condition_mode: self.condition_mode,
            aggregate: self.aggregate,
            shortcut_require_source: self.shortcut_require_source,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct IndexArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1.2)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.75)]
    pub b: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PredictTargetsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub bm25: Bm25Args,
    /// Query files whose targets are predicted as well.
    #[arg(long, num_args = 1..)]
    pub queries: Vec<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long, default_value_t = 8)]
    pub shots: usize,
    /// Cache file, created or extended in place.
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub bm25: Bm25Args,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[command(flatten)]
    pub adaptive: AdaptiveArgs,
    #[arg(long, default_value = "priority_first")]
    pub demo_order: DemoOrder,
    /// Skip the plain-retrieval call when no replacement happens.
    #[arg(long)]
    pub lazy_reticl: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Prompt template file ([system]/[demo]/[query]/[labels] sections).
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Shots for target prediction prompts.
    #[arg(long, default_value_t = 8)]
    pub shots: usize,
    /// Target cache file; defaults to targets.jsonl in the output directory.
    #[arg(long)]
    pub target_cache: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

impl RunArgs {
    fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            k: self.k,
            adaptive: self.adaptive.to_config(),
            demo_order: self.demo_order,
            lazy_reticl: self.lazy_reticl,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value = "ariiha")]
    pub strategy: Strategy,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub min: f64,
    #[arg(long, default_value_t = 150.0)]
    pub max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Decision log written by `classify` or `sweep`.
    #[arg(long)]
    pub log: PathBuf,
    /// Labeled split with the gold labels.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "final,tp_only,reticl_only,upper_bound")]
    pub modes: Vec<EvalMode>,
    #[arg(long = "report-format", value_delimiter = ',', default_value = "csv,json,markdown")]
    pub report_formats: Vec<ReportFormat>,
    /// Strategy that produced the log (report label only).
    #[arg(long, default_value = "ariiha")]
    pub strategy: Strategy,
    /// Shot count (report label only).
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[command(flatten)]
    pub adaptive: AdaptiveArgs,
    /// Append replayed rows for every condition mode at `--tau`.
    #[arg(long)]
    pub ablation: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReproduceArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `out` from the config file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    let snapshot = serde_json::to_value(&command)?;
    match command {
        Command::Index(a) => cmd_index(&a, snapshot),
        Command::Validate(a) => cmd_validate(&a),
        Command::PredictTargets(a) => cmd_predict_targets(&a, snapshot),
        Command::Classify(a) => cmd_classify(&a, snapshot),
        Command::Sweep(a) => cmd_sweep(&a, snapshot).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a, snapshot),
        Command::Reproduce(a) => {
            let (layout, rows) = cmd_reproduce(&a)?;
            print!("{}", render_markdown(&rows));
            log::info!("reproduction written to {}", layout.root.display());
            Ok(())
        }
        Command::Rerun(a) => {
            let manifest = RunManifest::load(&a.manifest)?;
            let command: Command = serde_json::from_value(manifest.config)
                .map_err(|e| Error::Config(format!("{}: not a command snapshot: {e}", a.manifest.display())))?;
            run(command)
        }
    }
}

fn load_split(path: &Path, format: Option<&str>, split: Split, null_token: &Option<String>) -> Result<ExamplePool> {
    let format = match format {
        Some(f) => f.parse()?,
        None => Format::from_path(path),
    };
    load_examples(
        path,
        format,
        split,
        &LoadOptions {
            null_token: null_token.clone(),
        },
    )
}

fn load_pool(data: &DataArgs) -> Result<ExamplePool> {
    load_split(&data.pool, data.format.as_deref(), Split::Pool, &data.null_token)
}

/// Query ids must not collide with pool ids: both share the target table
/// and the target cache.
fn check_disjoint(pool: &ExamplePool, queries: &ExamplePool, origin: &Path) -> Result<()> {
    if let Some(ex) = queries.iter().find(|ex| pool.get(&ex.id).is_some()) {
        return Err(Error::Data(format!(
            "{}: id '{}' also appears in the pool",
            origin.display(),
            ex.id
        )));
    }
    Ok(())
}

fn obtain_index(pool: &ExamplePool, bm25: &Bm25Args) -> Result<Bm25Index> {
    match &bm25.index {
        Some(path) => {
            let index = Bm25Index::load(path)?;
            if !index.matches_pool(pool) {
                return Err(Error::Data(format!(
                    "{}: index was not built from this pool",
                    path.display()
                )));
            }
            Ok(index)
        }
        None => {
            let params = Bm25Params { k1: bm25.k1, b: bm25.b };
            params.validate()?;
            Ok(Bm25Index::build(pool, params))
        }
    }
}

fn load_template(path: &Option<PathBuf>) -> Result<PromptTemplate> {
    match path {
        Some(p) => PromptTemplate::load(p),
        None => Ok(PromptTemplate::default()),
    }
}

/// Summarizes per-item failures; backend failures map to exit code 3.
fn failure_error(failures: &[(String, String)], total: usize, dir: &Path) -> Error {
    Error::Backend(format!(
        "{} of {} items failed (first: {}: {}); partial outputs kept in {}",
        failures.len(),
        total,
        failures[0].0,
        failures[0].1,
        dir.display()
    ))
}

pub fn write_index(
    pool: &ExamplePool,
    params: Bm25Params,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<Bm25Index> {
    params.validate()?;
    let index = Bm25Index::build(pool, params);
    index.save(out.join(INDEX_FILE))?;
    manifest.output(INDEX_FILE);
    Ok(index)
}

fn cmd_index(a: &IndexArgs, snapshot: serde_json::Value) -> Result<()> {
    let pool = load_pool(&a.data)?;
    let mut manifest = RunManifest::new("index", snapshot);
    manifest.input(&a.data.pool)?;
    let index = write_index(&pool, Bm25Params { k1: a.k1, b: a.b }, &a.out, &mut manifest)?;
    manifest.write(&a.out)?;
    log::info!(
        "indexed {} documents ({} terms) into {}",
        index.doc_count(),
        index.terms().count(),
        a.out.display()
    );
    Ok(())
}

fn cmd_validate(a: &ValidateArgs) -> Result<()> {
    let pool = load_pool(&a.data)?;
    let report = validate_pool(&pool);
    for w in report.warnings() {
        log::warn!("{w}");
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

/// Resolves targets for the pool and every query. Backend failures are
/// returned per item; any other failure aborts.
pub fn resolve_targets(
    pool: &ExamplePool,
    index: &Bm25Index,
    backend: &dyn ClassificationBackend,
    shots: usize,
    cache: TargetCache,
    queries: &[&Example],
) -> Result<(TargetTable, Vec<(String, String)>)> {
    let predictor = TargetPredictor::new(pool, index, backend, shots, cache);
    let (mut table, mut failures) = predictor.resolve_pool();
    let (query_table, query_failures) = predictor.resolve_queries(queries.iter().copied());
    table.extend(query_table);
    failures.extend(query_failures);
    let mut backend_failures = Vec::new();
    for (id, e) in failures {
        if !e.is_backend() {
            return Err(e);
        }
        log::warn!("target prediction failed for '{id}': {e}");
        backend_failures.push((id, e.to_string()));
    }
    Ok((table, backend_failures))
}

fn cmd_predict_targets(a: &PredictTargetsArgs, snapshot: serde_json::Value) -> Result<()> {
    let pool = load_pool(&a.data)?;
    let mut manifest = RunManifest::new("predict-targets", snapshot);
    manifest.input(&a.data.pool)?;
    let mut query_sets = Vec::new();
    for q in &a.queries {
        let set = load_split(q, a.data.format.as_deref(), Split::Test, &a.data.null_token)?;
        check_disjoint(&pool, &set, q)?;
        manifest.input(q)?;
        query_sets.push(set);
    }
    let index = obtain_index(&pool, &a.bm25)?;
    let backend = a.backend.to_config()?.build(&LabelLexicon::default(), a.seed)?;
    manifest.backend = Some(backend.identity());
    let cache = TargetCache::open(&a.cache, &backend.identity())?;
    let queries: Vec<&Example> = query_sets.iter().flat_map(|s| s.iter()).collect();
    let (table, failures) = resolve_targets(&pool, &index, backend.as_ref(), a.shots, cache, &queries)?;
    manifest.output(&a.cache);
    let dir = a
        .cache
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    manifest.write(dir)?;
    log::info!("{} targets resolved, cache at {}", table.len(), a.cache.display());
    if !failures.is_empty() {
        return Err(failure_error(&failures, pool.len() + queries.len(), dir));
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    id: &'a str,
    label: Label,
    strategy: &'a str,
    replaced: bool,
}

/// Everything a classification stage needs besides the queries.
pub struct Stage<'a> {
    pub pool: &'a ExamplePool,
    pub index: &'a Bm25Index,
    pub targets: &'a TargetTable,
    pub backend: &'a dyn ClassificationBackend,
    pub template: &'a PromptTemplate,
    pub config: PipelineConfig,
    pub parallel: usize,
}

impl Stage<'_> {
    /// Classifies `queries`, writing the decision log, predictions, run log
    /// and failure list into `out`.
    pub fn classify(
        &self,
        queries: &ExamplePool,
        strategy: Strategy,
        out: &Path,
        manifest: &mut RunManifest,
    ) -> Result<RunOutput> {
        let matcher = DefaultMatcher;
        let run_log = RunLog::new();
        let pipeline = Pipeline::new(
            self.pool,
            self.index,
            self.targets,
            &matcher,
            self.backend,
            self.template,
            self.config.clone(),
        )?
        .with_run_log(&run_log);
        let output = pipeline.run(queries.examples(), strategy, self.parallel);
        write_jsonl(&out.join(DECISIONS_FILE), &output.decisions)?;
        let predictions: Vec<PredictionRow> = output
            .decisions
            .iter()
            .map(|d| PredictionRow {
                id: &d.id,
                label: d.final_outcome.label,
                strategy: strategy.as_str(),
                replaced: d.replaced,
            })
            .collect();
        write_jsonl(&out.join(PREDICTIONS_FILE), &predictions)?;
        run_log.write_jsonl(&out.join(RUNLOG_FILE))?;
        let failures: Vec<serde_json::Value> = output
            .failures
            .iter()
            .map(|(id, msg)| serde_json::json!({ "id": id, "error": msg }))
            .collect();
        write_jsonl(&out.join(FAILURES_FILE), &failures)?;
        for f in [DECISIONS_FILE, PREDICTIONS_FILE, RUNLOG_FILE, FAILURES_FILE] {
            manifest.output(f);
        }
        Ok(output)
    }
}

fn needs_targets(strategy: Strategy) -> bool {
    matches!(strategy, Strategy::Target | Strategy::Ariiha)
}

/// Shared setup for `classify` and `sweep`: load everything, resolve
/// targets if the strategy needs them, then classify.
fn run_stage(
    a: &RunArgs,
    queries_path: &Path,
    split: Split,
    strategy: Strategy,
    manifest: &mut RunManifest,
) -> Result<(ExamplePool, RunOutput)> {
    let pool = load_pool(&a.data)?;
    let queries = load_split(queries_path, a.data.format.as_deref(), split, &a.data.null_token)?;
    check_disjoint(&pool, &queries, queries_path)?;
    manifest.input(&a.data.pool)?;
    manifest.input(queries_path)?;
    let index = obtain_index(&pool, &a.bm25)?;
    let template = load_template(&a.template)?;
    if let Some(t) = &a.template {
        manifest.input(t)?;
    }
    let backend_config = a.backend.to_config()?;
    if let BackendConfig::Mock { rules } = &backend_config {
        manifest.input(rules)?;
    }
    let backend = backend_config.build(&template.label_lexicon, a.seed)?;
    manifest.backend = Some(backend.identity());

    let mut target_failures = Vec::new();
    let targets = if needs_targets(strategy) {
        let cache_path = a.target_cache.clone().unwrap_or_else(|| a.out.join(TARGETS_FILE));
        let cache = TargetCache::open(&cache_path, &backend.identity())?;
        let qs: Vec<&Example> = queries.iter().collect();
        let (table, failures) = resolve_targets(&pool, &index, backend.as_ref(), a.shots, cache, &qs)?;
        target_failures = failures;
        manifest.output(cache_path);
        table
    } else {
        TargetTable::from_annotations(&pool)
    };

    let stage = Stage {
        pool: &pool,
        index: &index,
        targets: &targets,
        backend: backend.as_ref(),
        template: &template,
        config: a.pipeline_config(),
        parallel: a.parallel,
    };
    let mut output = stage.classify(&queries, strategy, &a.out, manifest)?;
    output.failures.extend(target_failures);
    Ok((queries, output))
}

fn cmd_classify(a: &ClassifyArgs, snapshot: serde_json::Value) -> Result<()> {
    let mut manifest = RunManifest::new("classify", snapshot);
    let (queries, output) = run_stage(&a.run, &a.test, Split::Test, a.strategy, &mut manifest)?;
    manifest.write(&a.run.out)?;
    log::info!(
        "classified {} of {} items with {}",
        output.decisions.len(),
        queries.len(),
        a.strategy.as_str()
    );
    if !output.failures.is_empty() {
        return Err(failure_error(&output.failures, queries.len(), &a.run.out));
    }
    Ok(())
}

/// Writes `sweep.csv` and `tau_star.txt`; returns the selected threshold.
pub fn write_sweep(
    decisions: &[AdaptiveDecision],
    dev: &ExamplePool,
    config: &AdaptiveConfig,
    grid: SweepGrid,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<f64> {
    let golds: HashMap<String, Label> = dev.iter().map(|ex| (ex.id.clone(), ex.label)).collect();
    let items = replay_items(decisions, &golds)?;
    let result = optimize_threshold(&items, config, grid)?;
    write_string(&out.join(SWEEP_CSV), &result.to_csv())?;
    write_string(&out.join(TAU_STAR_FILE), &format!("{}\n", result.tau_star))?;
    manifest.output(SWEEP_CSV);
    manifest.output(TAU_STAR_FILE);
    log::info!(
        "tau* = {} (dev Macro-F1 {:.2}) over {} thresholds",
        result.tau_star,
        result.best_macro_f1,
        result.curve.len()
    );
    Ok(result.tau_star)
}

fn cmd_sweep(a: &SweepArgs, snapshot: serde_json::Value) -> Result<f64> {
    if a.run.lazy_reticl {
        return Err(Error::Config(
            "the sweep needs both outcomes; drop --lazy-reticl".into(),
        ));
    }
    let grid = SweepGrid {
        min: a.min,
        max: a.max,
        step: a.step,
    };
    grid.points()?;
    let mut manifest = RunManifest::new("sweep", snapshot);
    let (dev, output) = run_stage(&a.run, &a.dev, Split::Dev, Strategy::Ariiha, &mut manifest)?;
    if !output.failures.is_empty() {
        manifest.write(&a.run.out)?;
        return Err(failure_error(&output.failures, dev.len(), &a.run.out));
    }
    let tau = write_sweep(
        &output.decisions,
        &dev,
        &a.run.adaptive.to_config(),
        grid,
        &a.run.out,
        &mut manifest,
    )?;
    manifest.write(&a.run.out)?;
    println!("{tau}");
    Ok(tau)
}

/// Report rows for the requested modes, plus replayed condition-mode rows
/// when `ablation` is given.
pub fn eval_rows(
    decisions: &[AdaptiveDecision],
    gold: &ExamplePool,
    strategy: Strategy,
    modes: &[EvalMode],
    k: usize,
    adaptive: &AdaptiveConfig,
    ablation: bool,
) -> Result<Vec<ReportRow>> {
    let golds: Vec<(String, Label)> = gold.iter().map(|ex| (ex.id.clone(), ex.label)).collect();
    let shots = if strategy == Strategy::Zero { 0 } else { k };
    let mut rows = Vec::new();
    for &mode in modes {
        rows.push(ReportRow {
            strategy,
            mode,
            k: shots,
            condition_mode: adaptive.condition_mode,
            report: evaluate_run(decisions, &golds, mode)?,
        });
    }
    if ablation {
        let wanted: HashSet<&str> = golds.iter().map(|(id, _)| id.as_str()).collect();
        let kept: Vec<AdaptiveDecision> = decisions
            .iter()
            .filter(|d| wanted.contains(d.id.as_str()))
            .cloned()
            .collect();
        let gold_map: HashMap<String, Label> = golds.into_iter().collect();
        let items = replay_items(&kept, &gold_map)?;
        rows.extend(
            ablation_rows(&items, adaptive, adaptive.tau, k)?
                .into_iter()
                .filter(|r| r.condition_mode != adaptive.condition_mode),
        );
    }
    Ok(rows)
}

fn cmd_eval(a: &EvalArgs, snapshot: serde_json::Value) -> Result<()> {
    let decisions: Vec<AdaptiveDecision> = read_jsonl(&a.log)?;
    let gold = load_split(&a.gold, a.format.as_deref(), Split::Test, &None)?;
    let mut manifest = RunManifest::new("eval", snapshot);
    manifest.input(&a.log)?;
    manifest.input(&a.gold)?;
    let adaptive = a.adaptive.to_config();
    adaptive.validate()?;
    let rows = eval_rows(&decisions, &gold, a.strategy, &a.modes, a.k, &adaptive, a.ablation)?;
    for p in emit_reports(&rows, &a.out, &a.report_formats)? {
        manifest.output(p.file_name().map(PathBuf::from).unwrap_or(p));
    }
    manifest.write(&a.out)?;
    print!("{}", render_markdown(&rows));
    Ok(())
}

/// Config file for `reproduce`. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproduceConfig {
    pub pool: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<String>,
    #[serde(default)]
    pub null_token: Option<String>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub shots: usize,
    #[serde(default = "default_parallel")]
    pub parallel: usize,
    #[serde(default)]
    pub template: Option<PathBuf>,
    #[serde(default)]
    pub demo_order: DemoOrder,
    /// Extra strategies classified on the test split for comparison.
    #[serde(default)]
    pub baselines: Vec<Strategy>,
    #[serde(default)]
    pub bm25: Bm25Params,
    /// `tau` here is ignored; the sweep selects it.
    #[serde(default)]
    pub adaptive: AdaptiveConfig,
    #[serde(default)]
    pub sweep: SweepGrid,
    pub backend: BackendConfig,
}

fn default_k() -> usize {
    8
}
fn default_parallel() -> usize {
    1
}

impl ReproduceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ReproduceConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.pool);
        fix(&mut cfg.dev);
        fix(&mut cfg.test);
        if let Some(p) = cfg.out.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.template.as_mut() {
            fix(p);
        }
        if let BackendConfig::Mock { rules } = &mut cfg.backend {
            fix(rules);
        }
        Ok(cfg)
    }
}

/// Directory layout written by `reproduce`.
pub struct ReproduceLayout {
    pub root: PathBuf,
}

impl ReproduceLayout {
    pub fn index(&self) -> PathBuf {
        self.root.join("index")
    }
    pub fn targets(&self) -> PathBuf {
        self.root.join("targets")
    }
    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep")
    }
    pub fn test(&self, strategy: Strategy) -> PathBuf {
        self.root.join("test").join(strategy.as_str())
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

fn cmd_reproduce(a: &ReproduceArgs) -> Result<(ReproduceLayout, Vec<ReportRow>)> {
    let cfg = ReproduceConfig::load(&a.config)?;
    let root = a
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::Config("no output directory: set `out` or pass --out".into()))?;
    let layout = ReproduceLayout { root };
    let snapshot = serde_json::to_value(&cfg)?;
    let fmt = cfg.format.as_deref();

    let pool = load_split(&cfg.pool, fmt, Split::Pool, &cfg.null_token)?;
    let dev = load_split(&cfg.dev, fmt, Split::Dev, &cfg.null_token)?;
    let test = load_split(&cfg.test, fmt, Split::Test, &cfg.null_token)?;
    check_disjoint(&pool, &dev, &cfg.dev)?;
    check_disjoint(&pool, &test, &cfg.test)?;
    check_disjoint(&dev, &test, &cfg.test)?;
    let template = load_template(&cfg.template)?;
    let backend = cfg.backend.build(&template.label_lexicon, cfg.seed)?;
    let identity = backend.identity();
    let stage_manifest = |command: &str| -> Result<RunManifest> {
        let mut m = RunManifest::new(command, snapshot.clone());
        m.input(&a.config)?;
        m.input(&cfg.pool)?;
        m.backend = Some(identity.clone());
        Ok(m)
    };

    let mut m = stage_manifest("reproduce:index")?;
    let index = write_index(&pool, cfg.bm25, &layout.index(), &mut m)?;
    m.write(&layout.index())?;

    let mut m = stage_manifest("reproduce:targets")?;
    m.input(&cfg.dev)?;
    m.input(&cfg.test)?;
    let cache_path = layout.targets().join(TARGETS_FILE);
    let cache = TargetCache::open(&cache_path, &identity)?;
    let queries: Vec<&Example> = dev.iter().chain(test.iter()).collect();
    let (targets, failures) = resolve_targets(&pool, &index, backend.as_ref(), cfg.shots, cache, &queries)?;
    m.output(TARGETS_FILE);
    m.write(&layout.targets())?;
    if !failures.is_empty() {
        return Err(failure_error(&failures, pool.len() + queries.len(), &layout.targets()));
    }

    let mut pipeline_config = PipelineConfig {
        k: cfg.k,
        adaptive: cfg.adaptive.clone(),
        demo_order: cfg.demo_order,
        lazy_reticl: false,
        seed: cfg.seed,
    };
    let stage = |config: PipelineConfig| Stage {
        pool: &pool,
        index: &index,
        targets: &targets,
        backend: backend.as_ref(),
        template: &template,
        config,
        parallel: cfg.parallel,
    };

    let mut m = stage_manifest("reproduce:sweep")?;
    m.input(&cfg.dev)?;
    let out = stage(pipeline_config.clone()).classify(&dev, Strategy::Ariiha, &layout.sweep(), &mut m)?;
    if !out.failures.is_empty() {
        m.write(&layout.sweep())?;
        return Err(failure_error(&out.failures, dev.len(), &layout.sweep()));
    }
    let tau_star = write_sweep(&out.decisions, &dev, &cfg.adaptive, cfg.sweep, &layout.sweep(), &mut m)?;
    m.write(&layout.sweep())?;
    pipeline_config.adaptive.tau = tau_star;

    let mut rows = Vec::new();
    let mut strategies = vec![Strategy::Ariiha];
    strategies.extend(cfg.baselines.iter().copied().filter(|s| *s != Strategy::Ariiha));
    for strategy in strategies {
        let dir = layout.test(strategy);
        let mut m = stage_manifest(&format!("reproduce:classify:{}", strategy.as_str()))?;
        m.input(&cfg.test)?;
        let out = stage(pipeline_config.clone()).classify(&test, strategy, &dir, &mut m)?;
        m.write(&dir)?;
        if !out.failures.is_empty() {
            return Err(failure_error(&out.failures, test.len(), &dir));
        }
        let (modes, ablation) = if strategy == Strategy::Ariiha {
            (EvalMode::ALL.to_vec(), true)
        } else {
            (vec![EvalMode::Final], false)
        };
        rows.extend(eval_rows(
            &out.decisions,
            &test,
            strategy,
            &modes,
            cfg.k,
            &pipeline_config.adaptive,
            ablation,
        )?);
    }

    let mut m = stage_manifest("reproduce:report")?;
    m.input(&cfg.test)?;
    let formats = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown];
    for p in emit_reports(&rows, &layout.report(), &formats)? {
        m.output(p.file_name().map(PathBuf::from).unwrap_or(p));
    }
    m.write(&layout.report())?;
    Ok((layout, rows))
}

/// Runs `reproduce` programmatically; returns the layout and report rows.
pub fn reproduce(config: &Path, out: Option<&Path>) -> Result<(ReproduceLayout, Vec<ReportRow>)> {
    cmd_reproduce(&ReproduceArgs {
        config: config.to_path_buf(),
        out: out.map(Path::to_path_buf),
    })
}
