//! Error triage for evaluation runs.
//!
//! Each false positive / false negative is paired with its closest
//! counterpart in the same record and given one machine-checkable tag. The
//! tags only approximate the error categories a human reviewer would assign,
//! so each carries a category hint and unexplained items are written to a
//! worksheet for manual labelling.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ElementKind, SentimentTuple, IMPLICIT_ASPECT};
use crate::eval::{EvalReport, RecordDetail};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("a triage item needs a false positive or a false negative")]
    BothAbsent,
    #[error("the report carries no per-record detail")]
    MissingDetail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorTag {
    PartialSpan,
    NearMissTypo,
    NullAspect,
    Unmatched,
}

impl ErrorTag {
    pub const ALL: [ErrorTag; 4] = [
        ErrorTag::PartialSpan,
        ErrorTag::NearMissTypo,
        ErrorTag::NullAspect,
        ErrorTag::Unmatched,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorTag::PartialSpan => "PARTIAL_SPAN",
            ErrorTag::NearMissTypo => "NEAR_MISS_TYPO",
            ErrorTag::NullAspect => "NULL_ASPECT",
            ErrorTag::Unmatched => "UNMATCHED",
        }
    }

    /// The manual error category this tag most likely corresponds to.
    pub fn category_hint(self) -> &'static str {
        match self {
            ErrorTag::PartialSpan => "INCOMPLETE",
            ErrorTag::NearMissTypo => "TYPO",
            ErrorTag::NullAspect => "IMPLICIT",
            ErrorTag::Unmatched => "UNDERPERFORM",
        }
    }
}

impl fmt::Display for ErrorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Categories that need a human reader; listed in the worksheet header.
pub const MANUAL_CATEGORIES: [(&str, &str); 6] = [
    ("ANNOTATION", "the gold tuple itself is wrong"),
    (
        "POS_CONFUSE",
        "aspect and opinion roles are confused between nearby words",
    ),
    (
        "SERIES",
        "one opinion shared by a list of aspects, or the reverse",
    ),
    (
        "SENTENCE_STRUCTURE",
        "the sentence is too irregular to delimit spans",
    ),
    (
        "COREFERENCE",
        "the aspect is a phrase referring to another aspect",
    ),
    (
        "TRAIN_DATA",
        "similar sentences are missing from the training data",
    ),
];

const TEXT_KINDS: [ElementKind; 3] = [
    ElementKind::Aspect,
    ElementKind::Opinion,
    ElementKind::Category,
];

/// The one text field in which `a` and `b` differ, if everything else agrees.
fn single_text_difference<'a>(
    a: &'a SentimentTuple,
    b: &'a SentimentTuple,
) -> Option<(&'a str, &'a str)> {
    if a.kinds() != b.kinds() || a.polarity() != b.polarity() {
        return None;
    }
    let mut diffs = TEXT_KINDS
        .iter()
        .filter_map(|k| match (a.text(*k), b.text(*k)) {
            (Some(x), Some(y)) if x != y => Some((x, y)),
            _ => None,
        });
    let first = diffs.next()?;
    diffs.next().is_none().then_some(first)
}

fn is_strict_token_extension(short: &str, long: &str) -> bool {
    let short: Vec<&str> = short.split_whitespace().collect();
    let long: Vec<&str> = long.split_whitespace().collect();
    !short.is_empty()
        && short.len() < long.len()
        && (long.starts_with(&short) || long.ends_with(&short))
}

fn is_near_miss(a: &str, b: &str) -> bool {
    let len = a.chars().count().max(b.chars().count());
    let budget = 2usize.max((len as f64 * 0.2).ceil() as usize);
    strsim::levenshtein(a, b) <= budget
}

/// Tags one triage item. Rules apply in order: partial span, near-miss typo,
/// implicit aspect, unmatched.
pub fn tag_error(
    fp: Option<&SentimentTuple>,
    fn_: Option<&SentimentTuple>,
) -> Result<ErrorTag, AnalysisError> {
    match (fp, fn_) {
        (None, None) => Err(AnalysisError::BothAbsent),
        (Some(fp), Some(fn_)) => {
            if let Some((x, y)) = single_text_difference(fp, fn_) {
                if is_strict_token_extension(x, y) || is_strict_token_extension(y, x) {
                    return Ok(ErrorTag::PartialSpan);
                }
                if is_near_miss(x, y) {
                    return Ok(ErrorTag::NearMissTypo);
                }
            }
            if fp.has_implicit_aspect() || fn_.has_implicit_aspect() {
                Ok(ErrorTag::NullAspect)
            } else {
                Ok(ErrorTag::Unmatched)
            }
        }
        (Some(lone), None) | (None, Some(lone)) => Ok(if lone.aspect() == Some(IMPLICIT_ASPECT) {
            ErrorTag::NullAspect
        } else {
            ErrorTag::Unmatched
        }),
    }
}

fn pairable(fp: &SentimentTuple, fn_: &SentimentTuple) -> bool {
    if fp.kinds() != fn_.kinds() {
        return false;
    }
    let shares_text = TEXT_KINDS
        .iter()
        .any(|k| matches!((fp.text(*k), fn_.text(*k)), (Some(x), Some(y)) if x == y));
    shares_text || single_text_difference(fp, fn_).is_some()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriageItem {
    pub task: String,
    pub record_id: String,
    pub text: String,
    pub fp: Option<SentimentTuple>,
    #[serde(rename = "fn")]
    pub fn_: Option<SentimentTuple>,
    pub tag: ErrorTag,
    pub hint: String,
}

/// Greedy minimum-edit-distance pairing of one record's errors. Ties go to
/// the lowest false-negative index, then the lowest false-positive index.
pub fn pair_record(
    fps: &[SentimentTuple],
    fns: &[SentimentTuple],
) -> Vec<(Option<usize>, Option<usize>)> {
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for (j, gold) in fns.iter().enumerate() {
        for (i, pred) in fps.iter().enumerate() {
            if pairable(pred, gold) {
                candidates.push((
                    strsim::levenshtein(&pred.to_string(), &gold.to_string()),
                    j,
                    i,
                ));
            }
        }
    }
    candidates.sort();

    let mut fp_used = vec![false; fps.len()];
    let mut fn_partner: Vec<Option<usize>> = vec![None; fns.len()];
    for (_, j, i) in candidates {
        if fn_partner[j].is_none() && !fp_used[i] {
            fn_partner[j] = Some(i);
            fp_used[i] = true;
        }
    }

    let mut items: Vec<(Option<usize>, Option<usize>)> = fn_partner
        .iter()
        .enumerate()
        .filter_map(|(j, p)| p.map(|i| (Some(i), Some(j))))
        .collect();
    items.extend(
        fn_partner
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_none())
            .map(|(j, _)| (None, Some(j))),
    );
    items.extend(
        fp_used
            .iter()
            .enumerate()
            .filter(|(_, used)| !**used)
            .map(|(i, _)| (Some(i), None)),
    );
    items
}

pub fn triage_record(task: &str, record: &RecordDetail) -> Vec<TriageItem> {
    pair_record(&record.false_positives, &record.false_negatives)
        .into_iter()
        .map(|(i, j)| {
            let fp = i.map(|i| record.false_positives[i].clone());
            let fn_ = j.map(|j| record.false_negatives[j].clone());
            let tag =
                tag_error(fp.as_ref(), fn_.as_ref()).expect("pairing never yields an empty item");
            TriageItem {
                task: task.to_string(),
                record_id: record.record_id.clone(),
                text: record.text.clone(),
                fp,
                fn_,
                tag,
                hint: tag.category_hint().to_string(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triage {
    pub counts: BTreeMap<ErrorTag, usize>,
    pub items: Vec<TriageItem>,
}

impl Triage {
    /// Items left for manual labelling.
    pub fn worksheet(&self) -> Vec<&TriageItem> {
        self.items
            .iter()
            .filter(|i| i.tag == ErrorTag::Unmatched)
            .collect()
    }

    pub fn render_worksheet(&self) -> String {
        let mut out = String::new();
        out.push_str("# Manual triage worksheet\n#\n");
        out.push_str("# Label each item below with one or more of:\n");
        for (name, gloss) in MANUAL_CATEGORIES {
            let _ = writeln!(out, "#   {name:<19} {gloss}");
        }
        out.push_str("#   UNDERPERFORM        none of the above; the model simply missed it\n#\n");
        out.push_str("# Training-data audit: sample 100 training texts at random and mark each as clean or\n");
        out.push_str(
            "# defective (declarative, implicit, typo, informal). Report the clean share.\n\n",
        );
        for (n, item) in self.worksheet().into_iter().enumerate() {
            let show =
                |t: &Option<SentimentTuple>| t.as_ref().map_or("-".to_string(), |t| t.to_string());
            let _ = writeln!(out, "[{}] {} {}", n + 1, item.task, item.record_id);
            let _ = writeln!(out, "    text: {}", item.text);
            let _ = writeln!(out, "    fp:   {}", show(&item.fp));
            let _ = writeln!(out, "    fn:   {}", show(&item.fn_));
            out.push_str("    label:\n\n");
        }
        out
    }
}

pub fn analyze_run(report: &EvalReport) -> Result<Triage, AnalysisError> {
    let detail = report
        .per_record
        .as_ref()
        .ok_or(AnalysisError::MissingDetail)?;
    let mut triage = Triage {
        counts: ErrorTag::ALL.iter().map(|t| (*t, 0)).collect(),
        items: Vec::new(),
    };
    for (task, records) in detail {
        for record in records {
            for item in triage_record(task, record) {
                *triage.counts.entry(item.tag).or_default() += 1;
                triage.items.push(item);
            }
        }
    }
    Ok(triage)
}
