//! Exact-tuple-match scoring.
//!
//! A predicted tuple counts only when every element equals a gold tuple after
//! canonicalization. Gold and predictions are compared as sets; counts are
//! summed over records before precision, recall and F1 are taken (micro
//! average). All scores are percentages.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codecs::{self, DecodeMode};
use crate::domain::{
    collapse_whitespace, dedup_tuples, SentimentTuple, TaskInstance, IMPLICIT_ASPECT,
};

/// Column order of the plain-text report; other tasks follow alphabetically.
pub const REPORT_COLUMNS: [&str; 5] = ["ASTE", "UABSA", "AOPE", "ATE", "OTE"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("{instances} instances but {outputs} outputs")]
    LengthMismatch { instances: usize, outputs: usize },
    #[error("gold and predicted tuples do not share one signature")]
    SignatureMismatch,
    #[error("instance {0} carries no task signature or answer format")]
    NotAnAbsaInstance(String),
    #[error("instances mix tasks `{0}` and `{1}`")]
    MixedTasks(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonOptions {
    pub case_fold: bool,
}

impl Default for CanonOptions {
    fn default() -> Self {
        CanonOptions { case_fold: true }
    }
}

/// Collapses whitespace and (optionally) lowercases every text field. The
/// implicit-aspect marker is left as is.
pub fn canonicalize(tuple: &SentimentTuple, options: CanonOptions) -> SentimentTuple {
    tuple
        .map_text(|_, value| {
            let collapsed = collapse_whitespace(value);
            if collapsed == IMPLICIT_ASPECT || !options.case_fold {
                collapsed
            } else {
                collapsed.to_lowercase()
            }
        })
        .expect("canonicalization never blanks a non-blank field")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Add for MatchCounts {
    type Output = MatchCounts;

    fn add(self, rhs: MatchCounts) -> MatchCounts {
        MatchCounts {
            tp: self.tp + rhs.tp,
            fp: self.fp + rhs.fp,
            fn_: self.fn_ + rhs.fn_,
        }
    }
}

impl AddAssign for MatchCounts {
    fn add_assign(&mut self, rhs: MatchCounts) {
        *self = *self + rhs;
    }
}

impl Sum for MatchCounts {
    fn sum<I: Iterator<Item = MatchCounts>>(iter: I) -> MatchCounts {
        iter.fold(MatchCounts::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MatchCounts {
    /// Degenerate cases: nothing gold and nothing predicted scores 100; an
    /// empty ratio otherwise scores 0.
    pub fn scores(&self) -> Scores {
        if self.tp == 0 && self.fp == 0 && self.fn_ == 0 {
            return Scores {
                precision: 100.0,
                recall: 100.0,
                f1: 100.0,
            };
        }
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        let f1 = if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
        Scores {
            precision: 100.0 * p,
            recall: 100.0 * r,
            f1: 100.0 * f1,
        }
    }
}

/// Matched sets for one record, canonicalized and deduplicated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SetMatch {
    pub counts: MatchCounts,
    pub false_positives: Vec<SentimentTuple>,
    pub false_negatives: Vec<SentimentTuple>,
}

pub fn match_detail(
    gold: &[SentimentTuple],
    pred: &[SentimentTuple],
    options: CanonOptions,
) -> Result<SetMatch, EvalError> {
    let kinds: HashSet<_> = gold.iter().chain(pred).map(|t| t.kinds()).collect();
    if kinds.len() > 1 {
        return Err(EvalError::SignatureMismatch);
    }
    let canon =
        |ts: &[SentimentTuple]| dedup_tuples(ts.iter().map(|t| canonicalize(t, options)).collect());
    let gold = canon(gold);
    let pred = canon(pred);
    let gold_set: HashSet<&SentimentTuple> = gold.iter().collect();
    let pred_set: HashSet<&SentimentTuple> = pred.iter().collect();

    let false_positives: Vec<SentimentTuple> = pred
        .iter()
        .filter(|t| !gold_set.contains(t))
        .cloned()
        .collect();
    let false_negatives: Vec<SentimentTuple> = gold
        .iter()
        .filter(|t| !pred_set.contains(t))
        .cloned()
        .collect();
    let tp = pred.len() - false_positives.len();
    Ok(SetMatch {
        counts: MatchCounts {
            tp,
            fp: false_positives.len(),
            fn_: false_negatives.len(),
        },
        false_positives,
        false_negatives,
    })
}

pub fn match_sets(
    gold: &[SentimentTuple],
    pred: &[SentimentTuple],
    options: CanonOptions,
) -> Result<MatchCounts, EvalError> {
    match_detail(gold, pred, options).map(|m| m.counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordDetail {
    pub record_id: String,
    pub text: String,
    pub output: String,
    pub counts: MatchCounts,
    pub false_positives: Vec<SentimentTuple>,
    pub false_negatives: Vec<SentimentTuple>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub counts: MatchCounts,
    pub scores: Scores,
    pub decode_warnings: usize,
    pub records: Vec<RecordDetail>,
}

/// Decodes each raw output under the instance's format and scores it against
/// the instance's gold tuples. In strict mode an undecodable output counts as
/// an empty prediction and a warning.
pub fn evaluate_task(
    instances: &[TaskInstance],
    raw_outputs: &[String],
    mode: DecodeMode,
    options: CanonOptions,
) -> Result<TaskReport, EvalError> {
    if instances.len() != raw_outputs.len() {
        return Err(EvalError::LengthMismatch {
            instances: instances.len(),
            outputs: raw_outputs.len(),
        });
    }
    let task = instances
        .first()
        .map(|i| i.task.clone())
        .unwrap_or_default();
    let mut records = Vec::with_capacity(instances.len());
    let mut decode_warnings = 0;
    for (instance, output) in instances.iter().zip(raw_outputs) {
        if instance.task != task {
            return Err(EvalError::MixedTasks(task, instance.task.clone()));
        }
        let (Some(signature), Some(format)) = (&instance.signature, instance.format) else {
            return Err(EvalError::NotAnAbsaInstance(instance.record_id.clone()));
        };
        let decoded = match codecs::decode(format, output, signature, &instance.text, mode) {
            Ok(outcome) => outcome,
            Err(e) => codecs::DecodeOutcome {
                tuples: Vec::new(),
                warnings: vec![e.to_string()],
                dropped_segments: vec![output.clone()],
            },
        };
        decode_warnings += decoded.warnings.len();
        let matched = match_detail(&instance.gold_tuples, &decoded.tuples, options)?;
        records.push(RecordDetail {
            record_id: instance.record_id.clone(),
            text: instance.text.clone(),
            output: output.clone(),
            counts: matched.counts,
            false_positives: matched.false_positives,
            false_negatives: matched.false_negatives,
            warnings: decoded.warnings,
        });
    }
    let counts: MatchCounts = records.iter().map(|r| r.counts).sum();
    Ok(TaskReport {
        task,
        counts,
        scores: counts.scores(),
        decode_warnings,
        records,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub per_task: BTreeMap<String, Scores>,
    pub counts: BTreeMap<String, MatchCounts>,
    pub decode_warnings: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_record: Option<BTreeMap<String, Vec<RecordDetail>>>,
}

impl EvalReport {
    pub fn from_tasks(tasks: Vec<TaskReport>, keep_detail: bool) -> Self {
        let mut report = EvalReport::default();
        let mut detail = BTreeMap::new();
        for task in tasks {
            report.per_task.insert(task.task.clone(), task.scores);
            report.counts.insert(task.task.clone(), task.counts);
            report
                .decode_warnings
                .insert(task.task.clone(), task.decode_warnings);
            detail.insert(task.task, task.records);
        }
        if keep_detail {
            report.per_record = Some(detail);
        }
        report
    }

    fn columns(&self) -> Vec<&str> {
        let mut columns: Vec<&str> = REPORT_COLUMNS
            .iter()
            .copied()
            .filter(|c| self.per_task.contains_key(*c))
            .collect();
        columns.extend(
            self.per_task
                .keys()
                .map(String::as_str)
                .filter(|k| !REPORT_COLUMNS.contains(k)),
        );
        columns
    }

    /// One column per task, one row per metric, two decimals.
    pub fn render_table(&self) -> String {
        let columns = self.columns();
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "");
        for c in &columns {
            let _ = write!(out, " {c:>8}");
        }
        out.push('\n');
        for (row, name) in ["precision", "recall", "f1"].into_iter().enumerate() {
            let _ = write!(out, "{name:<10}");
            for c in &columns {
                let s = &self.per_task[*c];
                let value = [s.precision, s.recall, s.f1][row];
                let _ = write!(out, " {value:>8.2}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codecs::AnswerFormat;
    use crate::domain::Polarity::{self, *};
    use crate::domain::TaskSignature;

    fn t(a: &str, o: &str, p: Polarity) -> SentimentTuple {
        SentimentTuple::triplet(a, o, p).unwrap()
    }

    #[test]
    fn canonicalize_examples() {
        let opts = CanonOptions::default();
        assert_eq!(
            canonicalize(&t("  Pizza ", "enak", Positive), opts),
            t("pizza", "enak", Positive)
        );
        assert_eq!(
            canonicalize(&t("NULL", "bagus", Positive), opts),
            t("NULL", "bagus", Positive)
        );
        assert_eq!(
            canonicalize(&t("smoking  areaanya", "ada", Positive), opts),
            t("smoking areaanya", "ada", Positive)
        );
        let strict = CanonOptions { case_fold: false };
        assert_eq!(
            canonicalize(&t("Pizza", "enak", Positive), strict),
            t("Pizza", "enak", Positive)
        );
    }

    #[test]
    fn match_set_examples() {
        let opts = CanonOptions::default();
        let (a, b, c, d) = (
            t("a", "x", Positive),
            t("b", "x", Positive),
            t("c", "x", Positive),
            t("d", "x", Positive),
        );
        let counts = match_sets(&[a.clone(), b.clone(), c], &[a, b, d], opts).unwrap();
        assert_eq!(
            counts,
            MatchCounts {
                tp: 2,
                fp: 1,
                fn_: 1
            }
        );
        let s = counts.scores();
        assert!((s.precision - 200.0 / 3.0).abs() < 1e-9);
        assert!((s.recall - 200.0 / 3.0).abs() < 1e-9);
        assert!((s.f1 - 200.0 / 3.0).abs() < 1e-9);

        let typo = match_sets(
            &[t("smoking areanya", "ada", Positive)],
            &[t("smoking areaanya", "ada", Positive)],
            opts,
        )
        .unwrap();
        assert_eq!(
            typo,
            MatchCounts {
                tp: 0,
                fp: 1,
                fn_: 1
            }
        );
        assert_eq!(match_sets(&[], &[], opts).unwrap(), MatchCounts::default());

        let pair = SentimentTuple::new(Some("a".into()), Some("x".into()), None, None).unwrap();
        assert_eq!(
            match_sets(&[t("a", "x", Positive)], &[pair], opts),
            Err(EvalError::SignatureMismatch)
        );
    }

    #[test]
    fn degenerate_scores() {
        assert_eq!(MatchCounts::default().scores().f1, 100.0);
        let missed = MatchCounts {
            tp: 0,
            fp: 0,
            fn_: 3,
        }
        .scores();
        assert_eq!(
            (missed.precision, missed.recall, missed.f1),
            (0.0, 0.0, 0.0)
        );
        let spurious = MatchCounts {
            tp: 0,
            fp: 2,
            fn_: 0,
        }
        .scores();
        assert_eq!(spurious.f1, 0.0);
    }

    fn instance(id: &str, gold: Vec<SentimentTuple>) -> TaskInstance {
        let sig = TaskSignature::registered("ASTE").unwrap();
        TaskInstance {
            record_id: id.into(),
            task: "ASTE".into(),
            gold_answer: codecs::encode_gas(&gold, &sig).unwrap(),
            signature: Some(sig),
            format: Some(AnswerFormat::GasExtraction),
            text: "x".into(),
            prompt: format!("<ASTE> {id}"),
            gold_tuples: gold,
        }
    }

    #[test]
    fn evaluate_task_micro_average() {
        let (a, b, c) = (
            t("a", "x", Positive),
            t("b", "x", Positive),
            t("c", "x", Negative),
        );
        let instances = vec![
            instance("1", vec![a.clone(), b.clone()]),
            instance("2", vec![c.clone()]),
        ];
        let outputs = vec![
            "(a, x, positive)".to_string(),
            "(c, x, negative); (z, x, positive)".to_string(),
        ];
        let report = evaluate_task(
            &instances,
            &outputs,
            DecodeMode::Lenient,
            CanonOptions::default(),
        )
        .unwrap();
        assert_eq!(
            report.records[0].counts,
            MatchCounts {
                tp: 1,
                fp: 0,
                fn_: 1
            }
        );
        assert_eq!(
            report.records[1].counts,
            MatchCounts {
                tp: 1,
                fp: 1,
                fn_: 0
            }
        );
        assert_eq!(
            report.counts,
            MatchCounts {
                tp: 2,
                fp: 1,
                fn_: 1
            }
        );
        assert_eq!(format!("{:.2}", report.scores.f1), "66.67");

        let oracle: Vec<String> = instances.iter().map(|i| i.gold_answer.clone()).collect();
        let perfect = evaluate_task(
            &instances,
            &oracle,
            DecodeMode::Strict,
            CanonOptions::default(),
        )
        .unwrap();
        assert_eq!(perfect.scores.f1, 100.0);

        let empty = vec![String::new(); 2];
        let none = evaluate_task(
            &instances,
            &empty,
            DecodeMode::Lenient,
            CanonOptions::default(),
        )
        .unwrap();
        assert_eq!(
            none.counts,
            MatchCounts {
                tp: 0,
                fp: 0,
                fn_: 3
            }
        );
        assert_eq!(none.scores.f1, 0.0);

        assert!(matches!(
            evaluate_task(
                &instances,
                &empty[..1],
                DecodeMode::Lenient,
                CanonOptions::default()
            ),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn strict_mode_scores_garbage_as_empty() {
        let instances = vec![instance("1", vec![t("a", "x", Positive)])];
        let report = evaluate_task(
            &instances,
            &["(a, x".to_string()],
            DecodeMode::Strict,
            CanonOptions::default(),
        )
        .unwrap();
        assert_eq!(
            report.counts,
            MatchCounts {
                tp: 0,
                fp: 0,
                fn_: 1
            }
        );
        assert_eq!(report.decode_warnings, 1);
    }

    #[test]
    fn table_layout() {
        let mut report = EvalReport::default();
        for (task, f1) in [("OTE", 50.0), ("ASTE", 100.0), ("ACOS", 10.0)] {
            report.per_task.insert(
                task.into(),
                Scores {
                    precision: f1,
                    recall: f1,
                    f1,
                },
            );
        }
        let table = report.render_table();
        let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(header, ["ASTE", "OTE", "ACOS"]);
        assert!(table.contains("100.00"));
    }
}
