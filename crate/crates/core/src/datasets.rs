//! Corpus import, task derivation, supplementary tasks and multitask mixing.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codecs::{self, AnswerFormat, CodecError};
use crate::domain::{
    dedup_tuples, project, validate_record, CoreError, ElementKind, Polarity, Record,
    SentimentTuple, Split, TaskInstance, TaskSignature, Violation,
};
use crate::prompts::{PromptError, PromptStyle, TemplateRegistry};

/// Separator between text and annotations in the line format.
pub const LINE_SEPARATOR: &str = "####";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("record {record_id}: {source}")]
    MissingElement {
        record_id: String,
        #[source]
        source: CoreError,
    },
    #[error("row {row}: {reason}")]
    SchemaMismatch { row: usize, reason: String },
    #[error("record {record_id}: {source}")]
    Encode {
        record_id: String,
        #[source]
        source: CodecError,
    },
    #[error("record {record_id}: {source}")]
    Prompt {
        record_id: String,
        #[source]
        source: PromptError,
    },
    #[error("mix entry `{0}` has no instances")]
    EmptyEntry(String),
    #[error("mix entry `{0}` does not match any provided dataset")]
    UnknownEntry(String),
    #[error("invalid mix plan: {0}")]
    InvalidPlan(String),
}

/// A collection of records, stored natively as one JSON record per line.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Self {
        Dataset { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> Dataset {
        Dataset::new(
            self.records
                .iter()
                .filter(|r| r.split == split)
                .cloned()
                .collect(),
        )
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, DatasetError> {
        read_jsonl(path).map(Dataset::new)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), DatasetError> {
        write_jsonl(path, &self.records)
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = fs::File::open(path).map_err(|source| DatasetError::UnreadableFile {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::UnreadableFile {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(&line).map_err(|source| DatasetError::Json {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(rows)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), DatasetError> {
    let write_err = |source| DatasetError::Write {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(write_err)?;
    }
    let mut out = BufWriter::new(fs::File::create(path).map_err(write_err)?);
    for row in rows {
        let line = serde_json::to_string(row).expect("dataset rows always serialize");
        writeln!(out, "{line}").map_err(write_err)?;
    }
    out.flush().map_err(write_err)
}

// ---------------------------------------------------------------------------
// Line-format import

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedLine {
    pub line: usize,
    pub reason: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordViolation {
    pub record_id: String,
    pub violation: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportReport {
    pub source: String,
    pub records: usize,
    pub duplicate_tuples_removed: usize,
    pub skipped: Vec<MalformedLine>,
    pub violations: Vec<RecordViolation>,
}

impl ImportReport {
    pub fn merge(&mut self, other: ImportReport) {
        if self.source.is_empty() {
            self.source = other.source;
        } else {
            self.source = format!("{}, {}", self.source, other.source);
        }
        self.records += other.records;
        self.duplicate_tuples_removed += other.duplicate_tuples_removed;
        self.skipped.extend(other.skipped);
        self.violations.extend(other.violations);
    }

    fn record_violations(&mut self, record: &Record, violations: &[Violation]) {
        self.violations
            .extend(violations.iter().map(|v| RecordViolation {
                record_id: record.id.clone(),
                violation: v.to_string(),
            }));
    }
}

/// Imports a `text####[('aspect', 'opinion', 'POS'), ...]` file. Every record
/// gets the id `<split>-<line number>`.
pub fn import_line_format(
    path: &Path,
    split: Split,
) -> Result<(Dataset, ImportReport), DatasetError> {
    let content = fs::read_to_string(path).map_err(|source| DatasetError::UnreadableFile {
        path: path.display().to_string(),
        source,
    })?;
    let (dataset, mut report) = parse_line_format(&content, split);
    report.source = path.display().to_string();
    Ok((dataset, report))
}

pub fn parse_line_format(content: &str, split: Split) -> (Dataset, ImportReport) {
    let mut report = ImportReport::default();
    let mut records = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_start_matches('\u{feff}');
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok((text, gold)) => {
                let before = gold.len();
                let record = Record::new(format!("{split}-{line_no}"), text, split, gold);
                report.duplicate_tuples_removed += before - record.gold.len();
                report.record_violations(&record, &validate_record(&record));
                records.push(record);
            }
            Err(reason) => report.skipped.push(MalformedLine {
                line: line_no,
                reason,
                content: line.to_string(),
            }),
        }
    }
    report.records = records.len();
    (Dataset::new(records), report)
}

fn parse_line(line: &str) -> Result<(String, Vec<SentimentTuple>), String> {
    let (text, annotations) = line
        .split_once(LINE_SEPARATOR)
        .ok_or_else(|| format!("missing `{LINE_SEPARATOR}` separator"))?;
    let text = text.trim();
    if text.is_empty() {
        return Err("empty text".to_string());
    }
    let gold = parse_tuple_list(annotations)?
        .into_iter()
        .enumerate()
        .map(|(i, fields)| match fields.as_slice() {
            [aspect, opinion, polarity] => {
                let polarity =
                    Polarity::from_alias(polarity).map_err(|e| format!("tuple {i}: {e}"))?;
                SentimentTuple::triplet(aspect.as_str(), opinion.as_str(), polarity)
                    .map_err(|e| format!("tuple {i}: {e}"))
            }
            other => Err(format!(
                "tuple {i}: expected 3 fields, found {}",
                other.len()
            )),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((text.to_string(), gold))
}

/// Parses a bracketed list of parenthesized, quoted-string tuples as written
/// by Python's `repr`.
fn parse_tuple_list(s: &str) -> Result<Vec<Vec<String>>, String> {
    let mut p = LiteralParser {
        chars: s.chars().peekable(),
    };
    p.skip_ws();
    p.expect('[')?;
    let mut tuples = Vec::new();
    p.skip_ws();
    if p.eat(']') {
        return p.finish().map(|_| tuples);
    }
    loop {
        p.skip_ws();
        tuples.push(p.tuple()?);
        p.skip_ws();
        if p.eat(']') {
            break;
        }
        p.expect(',')?;
        p.skip_ws();
        if p.eat(']') {
            break;
        }
    }
    p.finish().map(|_| tuples)
}

struct LiteralParser<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
}

impl LiteralParser<'_> {
    fn skip_ws(&mut self) {
        while self.chars.next_if(|c| c.is_whitespace()).is_some() {}
    }

    fn eat(&mut self, c: char) -> bool {
        self.chars.next_if_eq(&c).is_some()
    }

    fn expect(&mut self, c: char) -> Result<(), String> {
        match self.chars.next() {
            Some(found) if found == c => Ok(()),
            Some(found) => Err(format!("expected `{c}`, found `{found}`")),
            None => Err(format!("expected `{c}`, found end of line")),
        }
    }

    fn finish(&mut self) -> Result<(), String> {
        self.skip_ws();
        match self.chars.next() {
            None => Ok(()),
            Some(c) => Err(format!("unexpected `{c}` after tuple list")),
        }
    }

    fn tuple(&mut self) -> Result<Vec<String>, String> {
        self.expect('(')?;
        let mut fields = Vec::new();
        loop {
            self.skip_ws();
            if self.eat(')') {
                return Ok(fields);
            }
            fields.push(self.string()?);
            self.skip_ws();
            if self.eat(')') {
                return Ok(fields);
            }
            self.expect(',')?;
        }
    }

    fn string(&mut self) -> Result<String, String> {
        let quote = match self.chars.next() {
            Some(q @ ('\'' | '"')) => q,
            Some(c) => return Err(format!("expected a quoted string, found `{c}`")),
            None => return Err("expected a quoted string, found end of line".to_string()),
        };
        let mut out = String::new();
        loop {
            match self.chars.next() {
                None => return Err("unterminated string".to_string()),
                Some('\\') => match self.chars.next() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some(c) => out.push(c),
                    None => return Err("unterminated string".to_string()),
                },
                Some(c) if c == quote => return Ok(out),
                Some(c) => out.push(c),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Derivation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeriveOptions {
    /// Keep tuples whose aspect is the implicit `NULL` marker in
    /// aspect-bearing tasks.
    pub keep_implicit_aspects: bool,
}

impl Default for DeriveOptions {
    fn default() -> Self {
        DeriveOptions {
            keep_implicit_aspects: true,
        }
    }
}

/// Projects every gold tuple onto `signature` and deduplicates per record.
pub fn derive_task(
    dataset: &Dataset,
    signature: &TaskSignature,
    options: DeriveOptions,
) -> Result<Dataset, DatasetError> {
    let records = dataset
        .records
        .iter()
        .map(|record| {
            let projected = record
                .gold
                .iter()
                .filter(|t| {
                    options.keep_implicit_aspects
                        || !signature.contains(ElementKind::Aspect)
                        || !t.has_implicit_aspect()
                })
                .map(|t| project(t, signature))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|source| DatasetError::MissingElement {
                    record_id: record.id.clone(),
                    source,
                })?;
            Ok(Record {
                id: record.id.clone(),
                text: record.text.clone(),
                split: record.split,
                gold: dedup_tuples(projected),
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    Ok(Dataset::new(records))
}

/// Renders each record as a prompt plus encoded gold answer.
pub fn render_task(
    dataset: &Dataset,
    signature: &TaskSignature,
    style: PromptStyle,
    format: AnswerFormat,
    templates: &TemplateRegistry,
) -> Result<Vec<TaskInstance>, DatasetError> {
    dataset
        .records
        .iter()
        .map(|record| {
            let gold = record
                .gold
                .iter()
                .map(|t| project(t, signature))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|source| DatasetError::MissingElement {
                    record_id: record.id.clone(),
                    source,
                })?;
            let gold = dedup_tuples(gold);
            let prompt = templates
                .build_prompt(&record.text, signature, style)
                .map_err(|source| DatasetError::Prompt {
                    record_id: record.id.clone(),
                    source,
                })?;
            let gold_answer =
                codecs::encode(format, &gold, signature, &record.text).map_err(|source| {
                    DatasetError::Encode {
                        record_id: record.id.clone(),
                        source,
                    }
                })?;
            Ok(TaskInstance {
                record_id: record.id.clone(),
                task: signature.name().to_string(),
                signature: Some(signature.clone()),
                format: Some(format),
                text: record.text.clone(),
                prompt,
                gold_answer,
                gold_tuples: gold,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Supplementary tasks

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupplementaryKind {
    PosTagging,
    DocSentiment,
    Emotion,
}

impl SupplementaryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SupplementaryKind::PosTagging => "pos_tagging",
            SupplementaryKind::DocSentiment => "doc_sentiment",
            SupplementaryKind::Emotion => "emotion",
        }
    }
}

impl fmt::Display for SupplementaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SupplementaryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pos_tagging" | "pos" => Ok(SupplementaryKind::PosTagging),
            "doc_sentiment" => Ok(SupplementaryKind::DocSentiment),
            "emotion" => Ok(SupplementaryKind::Emotion),
            other => Err(format!("unknown supplementary task `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SupplementaryRow {
    Tagged {
        tokens: Vec<String>,
        tags: Vec<String>,
    },
    Labeled {
        text: String,
        label: String,
    },
}

/// Turns POS-tagging or classification rows into text-to-text instances.
pub fn adapt_supplementary(
    kind: SupplementaryKind,
    rows: &[SupplementaryRow],
    templates: &TemplateRegistry,
) -> Result<Vec<TaskInstance>, DatasetError> {
    rows.iter()
        .enumerate()
        .map(|(row, item)| {
            let (text, answer) = match (kind, item) {
                (SupplementaryKind::PosTagging, SupplementaryRow::Tagged { tokens, tags }) => {
                    if tokens.is_empty() || tokens.len() != tags.len() {
                        return Err(DatasetError::SchemaMismatch {
                            row,
                            reason: format!("{} tokens but {} tags", tokens.len(), tags.len()),
                        });
                    }
                    let pairs: Vec<String> = tokens
                        .iter()
                        .zip(tags)
                        .map(|(t, g)| format!("{t}_{g}"))
                        .collect();
                    (tokens.join(" "), pairs.join("; "))
                }
                (
                    SupplementaryKind::DocSentiment | SupplementaryKind::Emotion,
                    SupplementaryRow::Labeled { text, label },
                ) => {
                    if text.trim().is_empty() || label.trim().is_empty() {
                        return Err(DatasetError::SchemaMismatch {
                            row,
                            reason: "empty text or label".to_string(),
                        });
                    }
                    (text.trim().to_string(), label.trim().to_string())
                }
                _ => {
                    return Err(DatasetError::SchemaMismatch {
                        row,
                        reason: format!("row shape does not fit {kind}"),
                    })
                }
            };
            let prompt = templates
                .supplementary_prompt(kind.as_str(), &text)
                .map_err(|source| DatasetError::Prompt {
                    record_id: format!("{kind}-{row}"),
                    source,
                })?;
            Ok(TaskInstance {
                record_id: format!("{kind}-{row}"),
                task: kind.as_str().to_string(),
                signature: None,
                format: None,
                text,
                prompt,
                gold_answer: answer,
                gold_tuples: Vec::new(),
            })
        })
        .collect()
}

/// Reads a supplementary input file. POS files hold `token<TAB>tag` lines with
/// blank lines between sentences; classification files hold `text<TAB>label`.
pub fn read_supplementary(
    kind: SupplementaryKind,
    path: &Path,
) -> Result<Vec<SupplementaryRow>, DatasetError> {
    let content = fs::read_to_string(path).map_err(|source| DatasetError::UnreadableFile {
        path: path.display().to_string(),
        source,
    })?;
    parse_supplementary(kind, &content)
}

pub fn parse_supplementary(
    kind: SupplementaryKind,
    content: &str,
) -> Result<Vec<SupplementaryRow>, DatasetError> {
    let mut rows = Vec::new();
    match kind {
        SupplementaryKind::PosTagging => {
            let (mut tokens, mut tags) = (Vec::new(), Vec::new());
            for (i, line) in content.lines().enumerate() {
                if line.trim().is_empty() {
                    if !tokens.is_empty() {
                        rows.push(SupplementaryRow::Tagged {
                            tokens: std::mem::take(&mut tokens),
                            tags: std::mem::take(&mut tags),
                        });
                    }
                    continue;
                }
                let (token, tag) =
                    line.split_once('\t')
                        .ok_or_else(|| DatasetError::SchemaMismatch {
                            row: i + 1,
                            reason: "expected `token<TAB>tag`".to_string(),
                        })?;
                tokens.push(token.trim().to_string());
                tags.push(tag.trim().to_string());
            }
            if !tokens.is_empty() {
                rows.push(SupplementaryRow::Tagged { tokens, tags });
            }
        }
        SupplementaryKind::DocSentiment | SupplementaryKind::Emotion => {
            for (i, line) in content.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let (text, label) =
                    line.rsplit_once('\t')
                        .ok_or_else(|| DatasetError::SchemaMismatch {
                            row: i + 1,
                            reason: "expected `text<TAB>label`".to_string(),
                        })?;
                rows.push(SupplementaryRow::Labeled {
                    text: text.to_string(),
                    label: label.to_string(),
                });
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Multitask mixing

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixStrategy {
    #[default]
    RoundRobin,
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixEntry {
    /// A task signature name, or a supplementary task name.
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<PromptStyle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<AnswerFormat>,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl MixEntry {
    pub fn new(task: impl Into<String>) -> Self {
        MixEntry {
            task: task.into(),
            style: None,
            format: None,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub entries: Vec<MixEntry>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strategy: MixStrategy,
}

pub const SINGLE_TASKS: [&str; 2] = ["ATE", "OTE"];
pub const BASIC_TASKS: [&str; 2] = ["AOPE", "UABSA"];
pub const ADVANCE_TASKS: [&str; 1] = ["ASTE"];

/// Names accepted by [`MixPlan::preset`].
pub const PRESETS: [&str; 6] = [
    "basic",
    "advance",
    "single+basic",
    "single+advance",
    "basic+advance",
    "all",
];

impl MixPlan {
    /// Task-group combinations over the five corpus tasks, weight 1 each.
    /// `transfer` is an alias of `single+basic`.
    pub fn preset(name: &str, seed: u64, strategy: MixStrategy) -> Option<MixPlan> {
        let name = if name == "transfer" {
            "single+basic"
        } else {
            name
        };
        let groups: &[&[&str]] = match name {
            "basic" => &[&BASIC_TASKS],
            "advance" => &[&ADVANCE_TASKS],
            "single+basic" => &[&SINGLE_TASKS, &BASIC_TASKS],
            "single+advance" => &[&SINGLE_TASKS, &ADVANCE_TASKS],
            "basic+advance" => &[&BASIC_TASKS, &ADVANCE_TASKS],
            "all" => &[&SINGLE_TASKS, &BASIC_TASKS, &ADVANCE_TASKS],
            _ => return None,
        };
        Some(MixPlan {
            entries: groups
                .iter()
                .flat_map(|g| g.iter())
                .map(|t| MixEntry::new(*t))
                .collect(),
            seed,
            strategy,
        })
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.entries.is_empty() {
            return Err(DatasetError::InvalidPlan("no entries".to_string()));
        }
        let mut seen = HashSet::new();
        for entry in &self.entries {
            if !(entry.weight.is_finite() && entry.weight > 0.0) {
                return Err(DatasetError::InvalidPlan(format!(
                    "entry `{}` has non-positive weight {}",
                    entry.task, entry.weight
                )));
            }
            if !seen.insert(entry.task.as_str()) {
                return Err(DatasetError::InvalidPlan(format!(
                    "entry `{}` listed twice",
                    entry.task
                )));
            }
        }
        Ok(())
    }
}

/// Renders every plan entry and interleaves the resulting streams.
///
/// Entries are resolved by name against `derived` signatures first, then
/// against the `task` field of `supplementary` instances. Entry-level style and
/// format override the defaults passed here.
pub fn mix_multitask(
    derived: &[(Dataset, TaskSignature)],
    supplementary: &[TaskInstance],
    plan: &MixPlan,
    format: AnswerFormat,
    style: PromptStyle,
    templates: &TemplateRegistry,
) -> Result<Vec<TaskInstance>, DatasetError> {
    plan.validate()?;
    let mut streams = Vec::with_capacity(plan.entries.len());
    for entry in &plan.entries {
        let instances = if let Some((dataset, signature)) =
            derived.iter().find(|(_, s)| s.name() == entry.task)
        {
            render_task(
                dataset,
                signature,
                entry.style.unwrap_or(style),
                entry.format.unwrap_or(format),
                templates,
            )?
        } else {
            let rows: Vec<TaskInstance> = supplementary
                .iter()
                .filter(|i| i.task == entry.task)
                .cloned()
                .collect();
            if rows.is_empty() {
                return Err(DatasetError::UnknownEntry(entry.task.clone()));
            }
            rows
        };
        streams.push((entry.task.clone(), entry.weight, instances));
    }
    interleave(streams, plan.strategy, plan.seed)
}

/// Deterministic interleaving of `(name, weight, instances)` streams.
///
/// Round robin takes one instance from each non-exhausted stream in turn.
/// Proportional picks the next stream with probability proportional to
/// `weight * remaining`, drawing from a ChaCha8 generator seeded with `seed`;
/// each stream keeps its internal order.
pub fn interleave<T>(
    streams: Vec<(String, f64, Vec<T>)>,
    strategy: MixStrategy,
    seed: u64,
) -> Result<Vec<T>, DatasetError> {
    if strategy == MixStrategy::RoundRobin {
        if let Some((name, _, _)) = streams.iter().find(|(_, _, items)| items.is_empty()) {
            return Err(DatasetError::EmptyEntry(name.clone()));
        }
    }
    let total: usize = streams.iter().map(|(_, _, items)| items.len()).sum();
    let weights: Vec<f64> = streams.iter().map(|(_, w, _)| *w).collect();
    let mut queues: Vec<std::vec::IntoIter<T>> = streams
        .into_iter()
        .map(|(_, _, items)| items.into_iter())
        .collect();
    let mut out = Vec::with_capacity(total);

    match strategy {
        MixStrategy::RoundRobin => {
            while out.len() < total {
                for queue in queues.iter_mut() {
                    if let Some(item) = queue.next() {
                        out.push(item);
                    }
                }
            }
        }
        MixStrategy::Proportional => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            while out.len() < total {
                let mass: Vec<f64> = queues
                    .iter()
                    .zip(&weights)
                    .map(|(q, w)| w * q.len() as f64)
                    .collect();
                let sum: f64 = mass.iter().sum();
                let draw = rng.random::<f64>() * sum;
                let mut acc = 0.0;
                let mut pick = None;
                for (i, m) in mass.iter().enumerate() {
                    if *m <= 0.0 {
                        continue;
                    }
                    acc += m;
                    pick = Some(i);
                    if draw < acc {
                        break;
                    }
                }
                let i = pick.expect("some stream still has items");
                out.push(queues[i].next().expect("picked stream is non-empty"));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Summary

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub counts: BTreeMap<Split, usize>,
    pub tupleless_train_texts: usize,
    pub implicit_aspect_tuples: usize,
}

pub fn summarize(dataset: &Dataset) -> CorpusSummary {
    let mut summary = CorpusSummary {
        counts: Split::ALL.iter().map(|s| (*s, 0)).collect(),
        ..Default::default()
    };
    for record in &dataset.records {
        *summary.counts.entry(record.split).or_default() += 1;
        if record.split == Split::Train && record.gold.is_empty() {
            summary.tupleless_train_texts += 1;
        }
        summary.implicit_aspect_tuples += record
            .gold
            .iter()
            .filter(|t| t.has_implicit_aspect())
            .count();
    }
    summary
}

/// Guesses the split of a corpus file from its file name.
pub fn split_from_path(path: &Path) -> Option<Split> {
    let stem = path.file_stem()?.to_str()?.to_ascii_lowercase();
    if stem.contains("train") {
        Some(Split::Train)
    } else if stem.contains("dev") || stem.contains("val") {
        Some(Split::Validation)
    } else if stem.contains("test") {
        Some(Split::Test)
    } else {
        None
    }
}

/// Corpus files inside `dir`, ordered train, validation, test.
pub fn corpus_files(dir: &Path) -> Result<Vec<(PathBuf, Split)>, DatasetError> {
    let entries = fs::read_dir(dir).map_err(|source| DatasetError::UnreadableFile {
        path: dir.display().to_string(),
        source,
    })?;
    let mut files: Vec<(PathBuf, Split)> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter_map(|p| split_from_path(&p).map(|s| (p, s)))
        .collect();
    files.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));
    Ok(files)
}
