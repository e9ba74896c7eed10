//! Command-line driver.
//!
//! Every stage reads and writes line-oriented JSON so it can be rerun in
//! isolation from persisted files. `pipeline` chains the stages through the
//! same files:
//!
//! ```text
//! <out>/config.json             effective configuration
//! <out>/corpus.jsonl            imported records
//! <out>/import_report.json      skipped lines and grounding violations
//! <out>/summary.json            split counts
//! <out>/derived/<TASK>.jsonl    per-task projections
//! <out>/train_mix.jsonl         multitask training stream
//! <out>/instances/<TASK>.jsonl  evaluation prompts with gold answers
//! <out>/outputs/<TASK>.jsonl    generated answers
//! <out>/report.json|.txt        scores
//! <out>/triage.json             tagged errors
//! <out>/worksheet.jsonl|.txt    items left for manual labelling
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{analyze_run, AnalysisError, Triage};
use crate::backend::{BackendError, BackendSpec, GenerationParams, HttpOptions};
use crate::codecs::{AnswerFormat, DecodeMode};
use crate::datasets::{
    self, adapt_supplementary, corpus_files, derive_task, import_line_format, mix_multitask,
    read_jsonl, read_supplementary, render_task, split_from_path, summarize, write_jsonl, Dataset,
    DatasetError, DeriveOptions, ImportReport, MixEntry, MixPlan, MixStrategy, SupplementaryKind,
};
use crate::domain::{CoreError, Split, TaskInstance, TaskSignature};
use crate::eval::{evaluate_task, CanonOptions, EvalError, EvalReport};
use crate::prompts::{PromptError, PromptStyle, TemplateRegistry};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("task {task}: {source}")]
    Eval {
        task: String,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl CliError {
    /// 2 for generation failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Backend(BackendError::InvalidParams(_) | BackendError::InvalidSpec(_)) => 1,
            CliError::Backend(_) => 2,
            _ => 1,
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&content).map_err(|source| CliError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut body = serde_json::to_string_pretty(value).expect("artifacts always serialize");
    body.push('\n');
    fs::write(path, body).map_err(io_err(path))
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, body).map_err(io_err(path))
}

fn signature(name: &str) -> Result<TaskSignature> {
    Ok(TaskSignature::registered(name)?)
}

fn load_templates(path: Option<&Path>) -> Result<TemplateRegistry> {
    match path {
        Some(p) => Ok(TemplateRegistry::load(p)?),
        None => Ok(TemplateRegistry::default()),
    }
}

// ---------------------------------------------------------------------------
// Configuration

/// A corpus file; the split is guessed from the file name when omitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LinesSource {
    Path(PathBuf),
    WithSplit { path: PathBuf, split: Split },
}

impl LinesSource {
    fn path(&self) -> &Path {
        match self {
            LinesSource::Path(p) | LinesSource::WithSplit { path: p, .. } => p,
        }
    }

    fn split(&self) -> Option<Split> {
        match self {
            LinesSource::Path(_) => None,
            LinesSource::WithSplit { split, .. } => Some(*split),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// `####` line files or directories holding train/dev/test files.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lines: Vec<LinesSource>,
    /// A native JSON-lines dataset, used instead of `lines`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupplementarySource {
    pub kind: SupplementaryKind,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_batch_size() -> usize {
    8
}
fn default_max_retries() -> u32 {
    3
}
fn default_in_flight() -> usize {
    4
}
fn default_timeout() -> u64 {
    60
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            batch_size: default_batch_size(),
            max_retries: default_max_retries(),
            max_in_flight: default_in_flight(),
            timeout_secs: default_timeout(),
        }
    }
}

impl HttpConfig {
    fn options(&self) -> HttpOptions {
        HttpOptions {
            batch_size: self.batch_size,
            max_retries: self.max_retries,
            max_in_flight: self.max_in_flight,
            timeout: Duration::from_secs(self.timeout_secs),
            ..HttpOptions::default()
        }
    }
}

fn default_eval_tasks() -> Vec<String> {
    ["ASTE", "UABSA", "AOPE", "ATE", "OTE"]
        .map(String::from)
        .to_vec()
}
fn default_true() -> bool {
    true
}
fn default_eval_split() -> Split {
    Split::Test
}
fn default_style() -> PromptStyle {
    PromptStyle::LegoMask
}
fn default_format() -> AnswerFormat {
    AnswerFormat::LegoSentinel
}
fn default_backend() -> BackendSpec {
    BackendSpec::Oracle
}

/// Everything a pipeline run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    /// A task-group preset (`basic`, `advance`, `single+basic`,
    /// `single+advance`, `basic+advance`, `all`); ignored when `plan` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<MixPlan>,
    #[serde(default)]
    pub mix_strategy: MixStrategy,
    #[serde(default = "default_eval_tasks")]
    pub eval_tasks: Vec<String>,
    #[serde(default = "default_eval_split")]
    pub eval_split: Split,
    #[serde(default = "default_style")]
    pub prompt_style: PromptStyle,
    #[serde(default = "default_format")]
    pub answer_format: AnswerFormat,
    #[serde(default = "default_backend")]
    pub backend: BackendSpec,
    #[serde(default)]
    pub generation: GenerationParams,
    #[serde(default)]
    pub http: HttpConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub supplementary: Vec<SupplementarySource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub keep_implicit_aspects: bool,
    #[serde(default = "default_true")]
    pub case_fold: bool,
    #[serde(default)]
    pub decode_mode: DecodeMode,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl PipelineConfig {
    /// Loads a config; relative paths are resolved against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: PipelineConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for source in &mut self.corpus.lines {
            match source {
                LinesSource::Path(p) | LinesSource::WithSplit { path: p, .. } => fix(p),
            }
        }
        if let Some(p) = &mut self.corpus.dataset {
            fix(p);
        }
        for s in &mut self.supplementary {
            fix(&mut s.path);
        }
        if let Some(p) = &mut self.templates {
            fix(p);
        }
        if let BackendSpec::Golden { path, .. } = &mut self.backend {
            let mut p = PathBuf::from(&*path);
            fix(&mut p);
            *path = p.display().to_string();
        }
        fix(&mut self.output_dir);
    }

    /// The mixing plan, with the run seed applied and every supplementary
    /// source added as an entry.
    pub fn mix_plan(&self) -> Result<MixPlan> {
        let mut plan = match (&self.plan, &self.preset) {
            (Some(plan), _) => plan.clone(),
            (None, preset) => {
                let name = preset.as_deref().unwrap_or("all");
                MixPlan::preset(name, self.seed, self.mix_strategy)
                    .ok_or_else(|| CliError::Config(format!("unknown preset `{name}`")))?
            }
        };
        plan.seed = self.seed;
        for source in &self.supplementary {
            let name = source.kind.to_string();
            if !plan.entries.iter().any(|e| e.task == name) {
                plan.entries.push(MixEntry::new(name));
            }
        }
        plan.validate()?;
        Ok(plan)
    }

    /// SHA-256 of the configuration without its output directory, so the same
    /// run written to two places hashes identically.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config always serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Checks everything that can be checked before touching the corpus.
    pub fn validate(&self) -> Result<()> {
        if self.corpus.dataset.is_none() && self.corpus.lines.is_empty() {
            return Err(CliError::Config("corpus needs `lines` or `dataset`".into()));
        }
        if self.eval_tasks.is_empty() {
            return Err(CliError::Config("eval_tasks is empty".into()));
        }
        for task in &self.eval_tasks {
            signature(task)?;
        }
        let plan = self.mix_plan()?;
        for entry in &plan.entries {
            if !self
                .supplementary
                .iter()
                .any(|s| s.kind.as_str() == entry.task)
            {
                signature(&entry.task)?;
            }
        }
        self.generation.validate()?;
        Ok(())
    }

    fn canon(&self) -> CanonOptions {
        CanonOptions {
            case_fold: self.case_fold,
        }
    }
}

// ---------------------------------------------------------------------------
// Stages

/// Imports every line source into one dataset, in source order.
pub fn import_sources(
    sources: &[LinesSource],
    split_override: Option<Split>,
) -> Result<(Dataset, ImportReport)> {
    let mut files: Vec<(PathBuf, Split)> = Vec::new();
    for source in sources {
        let path = source.path();
        if path.is_dir() {
            let found = corpus_files(path)?;
            if found.is_empty() {
                return Err(CliError::Config(format!(
                    "{}: no train/dev/test files found",
                    path.display()
                )));
            }
            files.extend(found);
        } else {
            let split = split_override
                .or(source.split())
                .or_else(|| split_from_path(path))
                .ok_or_else(|| {
                    CliError::Config(format!(
                        "{}: cannot tell the split from the file name; pass --split",
                        path.display()
                    ))
                })?;
            files.push((path.to_path_buf(), split));
        }
    }
    let mut dataset = Dataset::default();
    let mut report = ImportReport::default();
    for (path, split) in files {
        let (part, part_report) = import_line_format(&path, split)?;
        dataset.records.extend(part.records);
        report.merge(part_report);
    }
    Ok((dataset, report))
}

fn write_import(out_dir: &Path, dataset: &Dataset, report: &ImportReport) -> Result<()> {
    dataset.write_jsonl(&out_dir.join("corpus.jsonl"))?;
    write_json(&out_dir.join("import_report.json"), report)?;
    write_json(&out_dir.join("summary.json"), &summarize(dataset))
}

fn derived_path(out_dir: &Path, task: &str) -> PathBuf {
    out_dir.join("derived").join(format!("{task}.jsonl"))
}

fn instances_path(out_dir: &Path, task: &str) -> PathBuf {
    out_dir.join("instances").join(format!("{task}.jsonl"))
}

fn outputs_path(out_dir: &Path, task: &str) -> PathBuf {
    out_dir.join("outputs").join(format!("{task}.jsonl"))
}

/// One generated answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceRow {
    pub record_id: String,
    pub task: String,
    pub prompt: String,
    pub output: String,
}

pub fn run_inference(
    instances: &[TaskInstance],
    backend: &BackendSpec,
    params: &GenerationParams,
    http: HttpOptions,
) -> Result<Vec<InferenceRow>> {
    let generator = backend.build(instances, http)?;
    let outputs = generator.generate_instances(instances, params)?;
    Ok(instances
        .iter()
        .zip(outputs)
        .map(|(i, output)| InferenceRow {
            record_id: i.record_id.clone(),
            task: i.task.clone(),
            prompt: i.prompt.clone(),
            output,
        })
        .collect())
}

/// Lines up predictions with instances, by record id when every row has one.
fn align_outputs(instances: &[TaskInstance], rows: &[PredictionRow]) -> Result<Vec<String>> {
    if rows.iter().all(|r| r.record_id.is_some()) && !rows.is_empty() {
        let by_id: std::collections::HashMap<&str, &str> = rows
            .iter()
            .map(|r| {
                (
                    r.record_id.as_deref().unwrap_or_default(),
                    r.output.as_str(),
                )
            })
            .collect();
        instances
            .iter()
            .map(|i| {
                by_id
                    .get(i.record_id.as_str())
                    .map(|s| s.to_string())
                    .ok_or_else(|| {
                        CliError::Config(format!("no prediction for record {}", i.record_id))
                    })
            })
            .collect()
    } else if rows.len() == instances.len() {
        Ok(rows.iter().map(|r| r.output.clone()).collect())
    } else {
        Err(CliError::Eval {
            task: instances
                .first()
                .map(|i| i.task.clone())
                .unwrap_or_default(),
            source: EvalError::LengthMismatch {
                instances: instances.len(),
                outputs: rows.len(),
            },
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
struct PredictionRow {
    #[serde(default)]
    record_id: Option<String>,
    output: String,
}

/// Reads predictions as JSON lines with an `output` field, or as one JSON
/// array of strings.
fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    if let Ok(list) = serde_json::from_str::<Vec<String>>(&content) {
        return Ok(list
            .into_iter()
            .map(|output| PredictionRow {
                record_id: None,
                output,
            })
            .collect());
    }
    Ok(read_jsonl(path)?)
}

fn write_triage(out_dir: &Path, triage: &Triage) -> Result<()> {
    write_json(&out_dir.join("triage.json"), triage)?;
    write_jsonl(&out_dir.join("worksheet.jsonl"), &triage.worksheet())?;
    write_text(&out_dir.join("worksheet.txt"), &triage.render_worksheet())
}

/// What a pipeline run produced.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: EvalReport,
    pub triage: Triage,
    pub output_dir: PathBuf,
}

/// import → derive → prompt → infer → eval → analyze. Each stage reads the
/// previous stage's files back from `output_dir`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let out = config.output_dir.as_path();
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_json(&out.join("config.json"), config)?;
    let templates = load_templates(config.templates.as_deref())?;
    let plan = config.mix_plan()?;

    // import
    let corpus_path = out.join("corpus.jsonl");
    match (&config.corpus.dataset, config.corpus.lines.is_empty()) {
        (Some(path), _) => {
            let dataset = Dataset::read_jsonl(path)?;
            write_import(
                out,
                &dataset,
                &ImportReport {
                    source: path.display().to_string(),
                    records: dataset.len(),
                    ..Default::default()
                },
            )?;
        }
        (None, false) => {
            let (dataset, report) = import_sources(&config.corpus.lines, None)?;
            write_import(out, &dataset, &report)?;
        }
        (None, true) => unreachable!("validate() requires a corpus"),
    }
    log::info!("imported corpus into {}", corpus_path.display());

    // derive
    let supplementary_names: BTreeSet<String> = config
        .supplementary
        .iter()
        .map(|s| s.kind.to_string())
        .collect();
    let mut tasks: BTreeSet<String> = config.eval_tasks.iter().cloned().collect();
    for entry in &plan.entries {
        if !supplementary_names.contains(&entry.task) {
            tasks.insert(entry.task.clone());
        }
    }
    let signatures: Vec<TaskSignature> =
        tasks.iter().map(|t| signature(t)).collect::<Result<_>>()?;
    let corpus = Dataset::read_jsonl(&corpus_path)?;
    let options = DeriveOptions {
        keep_implicit_aspects: config.keep_implicit_aspects,
    };
    for sig in &signatures {
        derive_task(&corpus, sig, options)?.write_jsonl(&derived_path(out, sig.name()))?;
    }

    // prompt
    let mut derived_train = Vec::new();
    for sig in &signatures {
        let derived = Dataset::read_jsonl(&derived_path(out, sig.name()))?;
        derived_train.push((derived.split(Split::Train), sig.clone()));
    }
    let mut supplementary = Vec::new();
    for source in &config.supplementary {
        let rows = read_supplementary(source.kind, &source.path)?;
        supplementary.extend(adapt_supplementary(source.kind, &rows, &templates)?);
    }
    let mixed = mix_multitask(
        &derived_train,
        &supplementary,
        &plan,
        config.answer_format,
        config.prompt_style,
        &templates,
    )?;
    write_jsonl(&out.join("train_mix.jsonl"), &mixed)?;
    for name in &config.eval_tasks {
        let sig = signature(name)?;
        let derived = Dataset::read_jsonl(&derived_path(out, sig.name()))?.split(config.eval_split);
        let instances = render_task(
            &derived,
            &sig,
            config.prompt_style,
            config.answer_format,
            &templates,
        )?;
        write_jsonl(&instances_path(out, sig.name()), &instances)?;
    }

    // infer
    for name in &config.eval_tasks {
        let instances: Vec<TaskInstance> = read_jsonl(&instances_path(out, name))?;
        let rows = run_inference(
            &instances,
            &config.backend,
            &config.generation,
            config.http.options(),
        )?;
        write_jsonl(&outputs_path(out, name), &rows)?;
    }

    // eval
    let mut task_reports = Vec::new();
    for name in &config.eval_tasks {
        let instances: Vec<TaskInstance> = read_jsonl(&instances_path(out, name))?;
        let rows: Vec<PredictionRow> = read_jsonl(&outputs_path(out, name))?;
        let outputs = align_outputs(&instances, &rows)?;
        let report = evaluate_task(&instances, &outputs, config.decode_mode, config.canon())
            .map_err(|source| CliError::Eval {
                task: name.clone(),
                source,
            })?;
        task_reports.push(report);
    }
    let mut report = EvalReport::from_tasks(task_reports, true);
    report.config_hash = Some(config.hash());
    write_json(&out.join("report.json"), &report)?;
    write_text(&out.join("report.txt"), &report.render_table())?;

    // analyze
    let persisted: EvalReport = read_json(&out.join("report.json"))?;
    let triage = analyze_run(&persisted)?;
    write_triage(out, &triage)?;

    Ok(PipelineOutcome {
        report,
        triage,
        output_dir: out.to_path_buf(),
    })
}

// ---------------------------------------------------------------------------
// Argument parsing

#[derive(Debug, Parser)]
#[command(
    name = "absa-kit",
    version,
    about = "Generative aspect-based sentiment analysis toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Import `text####[...]` line files into a JSON-lines dataset.
    Import(ImportArgs),
    /// Print split counts for a dataset.
    Summarize {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Project a dataset onto one or more tasks.
    Derive(DeriveArgs),
    /// Render task instances (prompt + gold answer) for one task.
    Prompt(PromptArgs),
    /// Build a multitask training stream from derived datasets.
    Mix(MixArgs),
    /// Generate answers for task instances.
    Infer(InferArgs),
    /// Score predictions.
    Eval(EvalArgs),
    /// Triage the errors of a report.
    Analyze(AnalyzeArgs),
    /// Run every stage from a config file.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Line files or directories containing train/dev/test files.
    #[arg(long, required = true, num_args = 1..)]
    pub lines: Vec<PathBuf>,
    /// Split for every file given; otherwise guessed from file names.
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out stem>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DeriveArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub task: Vec<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Drop implicit-aspect tuples from aspect-bearing tasks.
    #[arg(long)]
    pub drop_implicit: bool,
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub task: String,
    #[arg(long, default_value = "lego_mask")]
    pub style: PromptStyle,
    #[arg(long, default_value = "lego_sentinel")]
    pub format: AnswerFormat,
    /// Only render records of this split.
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// Directory of `<TASK>.jsonl` derived datasets.
    #[arg(long)]
    pub derived: PathBuf,
    #[arg(long, default_value = "all", conflicts_with = "plan")]
    pub preset: String,
    /// JSON mix plan file.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, default_value = "round-robin")]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "train")]
    pub split: Split,
    #[arg(long, default_value = "lego_mask")]
    pub style: PromptStyle,
    #[arg(long, default_value = "lego_sentinel")]
    pub format: AnswerFormat,
    /// Supplementary input as `<kind>:<path>`.
    #[arg(long)]
    pub supplementary: Vec<String>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum StrategyArg {
    RoundRobin,
    Proportional,
}

impl From<StrategyArg> for MixStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::RoundRobin => MixStrategy::RoundRobin,
            StrategyArg::Proportional => MixStrategy::Proportional,
        }
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub instances: PathBuf,
    /// mock | mock:<text> | oracle | golden:<path> | golden-strict:<path> | http:<endpoint>
    #[arg(long)]
    pub backend: BackendSpec,
    #[arg(long, default_value_t = 128)]
    pub max_new_tokens: u32,
    #[arg(long, default_value_t = 1)]
    pub num_beams: u32,
    #[arg(long)]
    pub stop: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    #[arg(long, default_value_t = 4)]
    pub in_flight: usize,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    pub timeout: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Rendered instances; alternatively use --gold with --task.
    #[arg(long, conflicts_with = "gold")]
    pub instances: Option<PathBuf>,
    /// A dataset whose gold tuples are scored for --task.
    #[arg(long, requires = "task")]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    /// Answer format of the predictions when scoring --gold; instances carry their own.
    #[arg(long, default_value = "gas_extraction")]
    pub format: AnswerFormat,
    #[arg(long, default_value = "lenient")]
    pub mode: DecodeMode,
    /// Compare case-sensitively.
    #[arg(long)]
    pub no_case_fold: bool,
    /// Predictions: JSON lines with an `output` field, or a JSON array of strings.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Runs one subcommand; the caller maps errors to exit codes.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Import(args) => {
            let sources: Vec<LinesSource> = args.lines.into_iter().map(LinesSource::Path).collect();
            let (dataset, report) = import_sources(&sources, args.split)?;
            dataset.write_jsonl(&args.out)?;
            let report_path = args
                .report
                .unwrap_or_else(|| args.out.with_extension("report.json"));
            write_json(&report_path, &report)?;
            let summary = summarize(&dataset);
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            if !report.skipped.is_empty() || !report.violations.is_empty() {
                eprintln!(
                    "{} skipped lines, {} grounding violations (see {})",
                    report.skipped.len(),
                    report.violations.len(),
                    report_path.display()
                );
            }
        }
        Command::Summarize { dataset } => {
            let summary = summarize(&Dataset::read_jsonl(&dataset)?);
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
        }
        Command::Derive(args) => {
            let dataset = Dataset::read_jsonl(&args.dataset)?;
            let options = DeriveOptions {
                keep_implicit_aspects: !args.drop_implicit,
            };
            for task in &args.task {
                let sig = signature(task)?;
                let path = args.out_dir.join(format!("{}.jsonl", sig.name()));
                derive_task(&dataset, &sig, options)?.write_jsonl(&path)?;
            }
        }
        Command::Prompt(args) => {
            let templates = load_templates(args.templates.as_deref())?;
            let sig = signature(&args.task)?;
            let mut dataset = Dataset::read_jsonl(&args.dataset)?;
            if let Some(split) = args.split {
                dataset = dataset.split(split);
            }
            let derived = derive_task(&dataset, &sig, DeriveOptions::default())?;
            let instances = render_task(&derived, &sig, args.style, args.format, &templates)?;
            write_jsonl(&args.out, &instances)?;
        }
        Command::Mix(args) => {
            let templates = load_templates(args.templates.as_deref())?;
            let mut plan = match &args.plan {
                Some(path) => read_json::<MixPlan>(path)?,
                None => MixPlan::preset(&args.preset, args.seed, args.strategy.into())
                    .ok_or_else(|| CliError::Config(format!("unknown preset `{}`", args.preset)))?,
            };
            plan.seed = args.seed;
            let mut supplementary = Vec::new();
            let mut supplementary_names = BTreeSet::new();
            for spec in &args.supplementary {
                let (kind, path) = spec.split_once(':').ok_or_else(|| {
                    CliError::Config(format!("expected <kind>:<path>, got `{spec}`"))
                })?;
                let kind: SupplementaryKind = kind.parse().map_err(CliError::Config)?;
                let rows = read_supplementary(kind, Path::new(path))?;
                supplementary.extend(adapt_supplementary(kind, &rows, &templates)?);
                supplementary_names.insert(kind.to_string());
                if !plan.entries.iter().any(|e| e.task == kind.as_str()) {
                    plan.entries.push(MixEntry::new(kind.as_str()));
                }
            }
            let mut derived = Vec::new();
            for entry in plan
                .entries
                .iter()
                .filter(|e| !supplementary_names.contains(&e.task))
            {
                let sig = signature(&entry.task)?;
                let dataset =
                    Dataset::read_jsonl(&args.derived.join(format!("{}.jsonl", sig.name())))?;
                derived.push((dataset.split(args.split), sig));
            }
            let mixed = mix_multitask(
                &derived,
                &supplementary,
                &plan,
                args.format,
                args.style,
                &templates,
            )?;
            write_jsonl(&args.out, &mixed)?;
        }
        Command::Infer(args) => {
            let instances: Vec<TaskInstance> = read_jsonl(&args.instances)?;
            let params = GenerationParams {
                max_new_tokens: args.max_new_tokens,
                num_beams: args.num_beams,
                stop_sequences: args.stop,
                extra: Default::default(),
            };
            let http = HttpOptions {
                batch_size: args.batch_size,
                max_retries: args.max_retries,
                max_in_flight: args.in_flight,
                timeout: Duration::from_secs(args.timeout),
                ..HttpOptions::default()
            };
            let rows = run_inference(&instances, &args.backend, &params, http)?;
            write_jsonl(&args.out, &rows)?;
        }
        Command::Eval(args) => {
            let instances: Vec<TaskInstance> = match (&args.instances, &args.gold) {
                (Some(path), _) => read_jsonl(path)?,
                (None, Some(gold)) => {
                    let task = args
                        .task
                        .as_deref()
                        .expect("clap enforces --task with --gold");
                    let sig = signature(task)?;
                    let derived =
                        derive_task(&Dataset::read_jsonl(gold)?, &sig, DeriveOptions::default())?;
                    render_task(
                        &derived,
                        &sig,
                        PromptStyle::OneToken,
                        args.format,
                        &TemplateRegistry::default(),
                    )?
                }
                (None, None) => return Err(CliError::Config("pass --instances or --gold".into())),
            };
            let rows = read_predictions(&args.pred)?;
            let outputs = align_outputs(&instances, &rows)?;
            let canon = CanonOptions {
                case_fold: !args.no_case_fold,
            };
            let mut by_task: Vec<(String, Vec<TaskInstance>, Vec<String>)> = Vec::new();
            for (instance, output) in instances.into_iter().zip(outputs) {
                match by_task.iter_mut().find(|(t, _, _)| *t == instance.task) {
                    Some((_, is, os)) => {
                        is.push(instance);
                        os.push(output);
                    }
                    None => by_task.push((instance.task.clone(), vec![instance], vec![output])),
                }
            }
            let reports = by_task
                .into_iter()
                .map(|(task, is, os)| {
                    evaluate_task(&is, &os, args.mode, canon)
                        .map_err(|source| CliError::Eval { task, source })
                })
                .collect::<Result<Vec<_>>>()?;
            let report = EvalReport::from_tasks(reports, true);
            print!("{}", report.render_table());
            if let Some(out) = &args.out {
                write_json(out, &report)?;
                write_text(&out.with_extension("txt"), &report.render_table())?;
            }
        }
        Command::Analyze(args) => {
            let report: EvalReport = read_json(&args.report)?;
            let triage = analyze_run(&report)?;
            write_triage(&args.out_dir, &triage)?;
            for (tag, count) in &triage.counts {
                println!("{tag:<16} {count}");
            }
        }
        Command::Pipeline(args) => {
            let mut config = PipelineConfig::load(&args.config)?;
            if let Some(dir) = args.out_dir {
                config.output_dir = dir;
            }
            let outcome = run_pipeline(&config)?;
            print!("{}", outcome.report.render_table());
        }
    }
    Ok(())
}

#[doc(hidden)]
pub use datasets::PRESETS as PRESET_NAMES;
