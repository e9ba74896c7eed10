//! Domain types shared by every stage: sentiment elements, tuples, task
//! signatures, records and task instances.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codecs::AnswerFormat;

/// Placeholder used for an aspect that is implied but never written out.
pub const IMPLICIT_ASPECT: &str = "NULL";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoreError {
    #[error("unknown polarity `{0}`")]
    UnknownPolarity(String),
    #[error("unknown element kind `{0}`")]
    UnknownElementKind(String),
    #[error("a sentiment tuple needs at least one element")]
    EmptyTuple,
    #[error("{0} is present but blank")]
    BlankElement(ElementKind),
    #[error("tuple is missing the {0} element")]
    MissingElement(ElementKind),
    #[error("a task signature needs at least one element kind")]
    EmptySignature,
    #[error("unknown task `{0}`")]
    UnknownTask(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }

    /// Accepts the full words as well as the `POS`/`NEG`/`NEU` abbreviations
    /// found in annotated corpora, case-insensitively.
    pub fn from_alias(s: &str) -> Result<Self, CoreError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "pos" => Ok(Polarity::Positive),
            "negative" | "neg" => Ok(Polarity::Negative),
            "neutral" | "neu" => Ok(Polarity::Neutral),
            _ => Err(CoreError::UnknownPolarity(s.to_string())),
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Strict parse: only the three lowercase words.
impl FromStr for Polarity {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            "neutral" => Ok(Polarity::Neutral),
            _ => Err(CoreError::UnknownPolarity(s.to_string())),
        }
    }
}

/// The four sentiment elements. The derived ordering is the canonical
/// serialization order used by every codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Aspect,
    Opinion,
    Category,
    Polarity,
}

impl ElementKind {
    pub const ALL: [ElementKind; 4] = [
        ElementKind::Aspect,
        ElementKind::Opinion,
        ElementKind::Category,
        ElementKind::Polarity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Aspect => "aspect",
            ElementKind::Opinion => "opinion",
            ElementKind::Category => "category",
            ElementKind::Polarity => "polarity",
        }
    }

    /// Kinds whose values are free text spans rather than a closed vocabulary.
    pub fn is_span(self) -> bool {
        matches!(self, ElementKind::Aspect | ElementKind::Opinion)
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ElementKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ElementKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CoreError::UnknownElementKind(s.to_string()))
    }
}

/// A borrowed view of one element value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementValue<'a> {
    Text(&'a str),
    Polarity(Polarity),
}

impl fmt::Display for ElementValue<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementValue::Text(t) => f.write_str(t),
            ElementValue::Polarity(p) => f.write_str(p.as_str()),
        }
    }
}

#[derive(Deserialize)]
struct RawTuple {
    #[serde(default)]
    aspect: Option<String>,
    #[serde(default)]
    opinion: Option<String>,
    #[serde(default)]
    category: Option<String>,
    #[serde(default)]
    polarity: Option<Polarity>,
}

impl TryFrom<RawTuple> for SentimentTuple {
    type Error = CoreError;

    fn try_from(raw: RawTuple) -> Result<Self, Self::Error> {
        SentimentTuple::new(raw.aspect, raw.opinion, raw.category, raw.polarity)
    }
}

/// One extracted unit: up to four sentiment elements.
///
/// Text fields are stored trimmed. Interior whitespace is kept as written;
/// comparisons that need it collapsed go through `eval::canonicalize`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawTuple")]
pub struct SentimentTuple {
    #[serde(skip_serializing_if = "Option::is_none")]
    aspect: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    opinion: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    category: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    polarity: Option<Polarity>,
}

fn clean_text(kind: ElementKind, value: Option<String>) -> Result<Option<String>, CoreError> {
    match value {
        None => Ok(None),
        Some(v) => {
            let trimmed = v.trim();
            if trimmed.is_empty() {
                Err(CoreError::BlankElement(kind))
            } else if trimmed.len() == v.len() {
                Ok(Some(v))
            } else {
                Ok(Some(trimmed.to_string()))
            }
        }
    }
}

impl SentimentTuple {
    pub fn new(
        aspect: Option<String>,
        opinion: Option<String>,
        category: Option<String>,
        polarity: Option<Polarity>,
    ) -> Result<Self, CoreError> {
        let tuple = SentimentTuple {
            aspect: clean_text(ElementKind::Aspect, aspect)?,
            opinion: clean_text(ElementKind::Opinion, opinion)?,
            category: clean_text(ElementKind::Category, category)?,
            polarity,
        };
        if tuple.is_empty() {
            return Err(CoreError::EmptyTuple);
        }
        Ok(tuple)
    }

    /// Aspect, opinion and polarity: the shape of an ASTE triplet.
    pub fn triplet(
        aspect: impl Into<String>,
        opinion: impl Into<String>,
        polarity: Polarity,
    ) -> Result<Self, CoreError> {
        Self::new(
            Some(aspect.into()),
            Some(opinion.into()),
            None,
            Some(polarity),
        )
    }

    /// Builds a tuple from `(kind, value)` pairs. Text values for the
    /// polarity kind are parsed strictly.
    pub fn from_elements<'a, I>(elements: I) -> Result<Self, CoreError>
    where
        I: IntoIterator<Item = (ElementKind, &'a str)>,
    {
        let (mut aspect, mut opinion, mut category, mut polarity) = (None, None, None, None);
        for (kind, value) in elements {
            match kind {
                ElementKind::Aspect => aspect = Some(value.to_string()),
                ElementKind::Opinion => opinion = Some(value.to_string()),
                ElementKind::Category => category = Some(value.to_string()),
                ElementKind::Polarity => polarity = Some(value.parse()?),
            }
        }
        Self::new(aspect, opinion, category, polarity)
    }

    fn is_empty(&self) -> bool {
        self.aspect.is_none()
            && self.opinion.is_none()
            && self.category.is_none()
            && self.polarity.is_none()
    }

    pub fn aspect(&self) -> Option<&str> {
        self.aspect.as_deref()
    }

    pub fn opinion(&self) -> Option<&str> {
        self.opinion.as_deref()
    }

    pub fn category(&self) -> Option<&str> {
        self.category.as_deref()
    }

    pub fn polarity(&self) -> Option<Polarity> {
        self.polarity
    }

    pub fn has_implicit_aspect(&self) -> bool {
        self.aspect() == Some(IMPLICIT_ASPECT)
    }

    pub fn get(&self, kind: ElementKind) -> Option<ElementValue<'_>> {
        match kind {
            ElementKind::Aspect => self.aspect().map(ElementValue::Text),
            ElementKind::Opinion => self.opinion().map(ElementValue::Text),
            ElementKind::Category => self.category().map(ElementValue::Text),
            ElementKind::Polarity => self.polarity.map(ElementValue::Polarity),
        }
    }

    pub fn text(&self, kind: ElementKind) -> Option<&str> {
        match kind {
            ElementKind::Aspect => self.aspect(),
            ElementKind::Opinion => self.opinion(),
            ElementKind::Category => self.category(),
            ElementKind::Polarity => None,
        }
    }

    /// Present kinds in canonical order.
    pub fn kinds(&self) -> Vec<ElementKind> {
        ElementKind::ALL
            .into_iter()
            .filter(|k| self.get(*k).is_some())
            .collect()
    }

    /// Applies `f` to every present text field. Fails if `f` blanks a field.
    pub fn map_text<F>(&self, mut f: F) -> Result<Self, CoreError>
    where
        F: FnMut(ElementKind, &str) -> String,
    {
        Self::new(
            self.aspect().map(|v| f(ElementKind::Aspect, v)),
            self.opinion().map(|v| f(ElementKind::Opinion, v)),
            self.category().map(|v| f(ElementKind::Category, v)),
            self.polarity,
        )
    }
}

impl fmt::Display for SentimentTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, kind) in self.kinds().into_iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            if let Some(v) = self.get(kind) {
                write!(f, "{v}")?;
            }
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Single,
    Basic,
    Advance,
}

impl Tier {
    fn for_arity(n: usize) -> Tier {
        match n {
            1 => Tier::Single,
            2 => Tier::Basic,
            _ => Tier::Advance,
        }
    }
}

#[derive(Deserialize)]
struct RawSignature {
    name: String,
    kinds: Vec<ElementKind>,
}

impl TryFrom<RawSignature> for TaskSignature {
    type Error = CoreError;

    fn try_from(raw: RawSignature) -> Result<Self, Self::Error> {
        TaskSignature::new(raw.name, raw.kinds)
    }
}

/// A task: a named, canonically ordered set of element kinds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSignature")]
pub struct TaskSignature {
    name: String,
    kinds: Vec<ElementKind>,
    tier: Tier,
}

static REGISTRY: LazyLock<Vec<TaskSignature>> = LazyLock::new(|| {
    use ElementKind::*;
    [
        ("ATE", vec![Aspect]),
        ("OTE", vec![Opinion]),
        ("ACD", vec![Category]),
        ("AOPE", vec![Aspect, Opinion]),
        ("UABSA", vec![Aspect, Polarity]),
        ("ACSA", vec![Category, Polarity]),
        ("ASTE", vec![Aspect, Opinion, Polarity]),
        ("TASD", vec![Aspect, Category, Polarity]),
        ("ACOS", vec![Aspect, Category, Opinion, Polarity]),
    ]
    .into_iter()
    .map(|(name, kinds)| TaskSignature::new(name, kinds).expect("registry entries are valid"))
    .collect()
});

impl TaskSignature {
    /// Kinds are sorted into canonical order and deduplicated.
    pub fn new(
        name: impl Into<String>,
        kinds: impl IntoIterator<Item = ElementKind>,
    ) -> Result<Self, CoreError> {
        let mut kinds: Vec<ElementKind> = kinds.into_iter().collect();
        kinds.sort();
        kinds.dedup();
        if kinds.is_empty() {
            return Err(CoreError::EmptySignature);
        }
        Ok(TaskSignature {
            name: name.into(),
            tier: Tier::for_arity(kinds.len()),
            kinds,
        })
    }

    /// All built-in tasks.
    pub fn registry() -> &'static [TaskSignature] {
        &REGISTRY
    }

    pub fn registered(name: &str) -> Result<TaskSignature, CoreError> {
        REGISTRY
            .iter()
            .find(|s| s.name.eq_ignore_ascii_case(name))
            .cloned()
            .ok_or_else(|| CoreError::UnknownTask(name.to_string()))
    }

    pub fn lookup_by_kinds(kinds: &[ElementKind]) -> Option<TaskSignature> {
        let mut sorted = kinds.to_vec();
        sorted.sort();
        sorted.dedup();
        REGISTRY.iter().find(|s| s.kinds == sorted).cloned()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kinds(&self) -> &[ElementKind] {
        &self.kinds
    }

    pub fn tier(&self) -> Tier {
        self.tier
    }

    pub fn arity(&self) -> usize {
        self.kinds.len()
    }

    pub fn contains(&self, kind: ElementKind) -> bool {
        self.kinds.contains(&kind)
    }

    /// Position of `kind` within this signature; doubles as the sentinel slot index.
    pub fn slot_of(&self, kind: ElementKind) -> Option<usize> {
        self.kinds.iter().position(|k| *k == kind)
    }

    pub fn is_registered(&self) -> bool {
        REGISTRY.contains(self)
    }

    /// True when `tuple` carries exactly this signature's kinds.
    pub fn matches(&self, tuple: &SentimentTuple) -> bool {
        tuple.kinds() == self.kinds
    }
}

impl fmt::Display for TaskSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Keeps exactly the kinds of `signature`, copying values verbatim.
pub fn project(
    tuple: &SentimentTuple,
    signature: &TaskSignature,
) -> Result<SentimentTuple, CoreError> {
    let mut out = SentimentTuple {
        aspect: None,
        opinion: None,
        category: None,
        polarity: None,
    };
    for &kind in signature.kinds() {
        match kind {
            ElementKind::Aspect => {
                out.aspect = Some(
                    tuple
                        .aspect
                        .clone()
                        .ok_or(CoreError::MissingElement(kind))?,
                )
            }
            ElementKind::Opinion => {
                out.opinion = Some(
                    tuple
                        .opinion
                        .clone()
                        .ok_or(CoreError::MissingElement(kind))?,
                )
            }
            ElementKind::Category => {
                out.category = Some(
                    tuple
                        .category
                        .clone()
                        .ok_or(CoreError::MissingElement(kind))?,
                )
            }
            ElementKind::Polarity => {
                out.polarity = Some(tuple.polarity.ok_or(CoreError::MissingElement(kind))?)
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "val" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// A text with its gold tuples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub text: String,
    pub split: Split,
    pub gold: Vec<SentimentTuple>,
}

impl Record {
    /// Duplicate gold tuples are dropped, keeping first occurrences.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        split: Split,
        gold: Vec<SentimentTuple>,
    ) -> Self {
        Record {
            id: id.into(),
            text: text.into(),
            split,
            gold: dedup_tuples(gold),
        }
    }
}

/// Order-preserving deduplication.
pub fn dedup_tuples(tuples: Vec<SentimentTuple>) -> Vec<SentimentTuple> {
    let mut seen = HashSet::with_capacity(tuples.len());
    tuples
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

/// Collapses whitespace runs to single spaces and trims.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    NotInText,
    NullOnlyValidForAspect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub tuple_index: usize,
    pub field: ElementKind,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.rule {
            Rule::NotInText => write!(f, "{}-not-in-text @{}", self.field, self.tuple_index),
            Rule::NullOnlyValidForAspect => {
                write!(f, "NULL-only-valid-for-aspect @{}", self.tuple_index)
            }
        }
    }
}

/// Checks span grounding and sentinel placement for every gold tuple.
pub fn validate_record(record: &Record) -> Vec<Violation> {
    let text = collapse_whitespace(&record.text);
    let mut violations = Vec::new();
    for (i, tuple) in record.gold.iter().enumerate() {
        for kind in [
            ElementKind::Aspect,
            ElementKind::Opinion,
            ElementKind::Category,
        ] {
            let Some(value) = tuple.text(kind) else {
                continue;
            };
            if value == IMPLICIT_ASPECT {
                if kind != ElementKind::Aspect {
                    violations.push(Violation {
                        tuple_index: i,
                        field: kind,
                        rule: Rule::NullOnlyValidForAspect,
                    });
                }
                continue;
            }
            if kind.is_span() && !text.contains(&collapse_whitespace(value)) {
                violations.push(Violation {
                    tuple_index: i,
                    field: kind,
                    rule: Rule::NotInText,
                });
            }
        }
    }
    violations
}

/// A record rendered for one task under a prompt style and answer format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub record_id: String,
    /// Signature name, or the supplementary task name.
    pub task: String,
    /// Absent for supplementary instances, which carry no sentiment tuples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<TaskSignature>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<AnswerFormat>,
    pub text: String,
    pub prompt: String,
    pub gold_answer: String,
    #[serde(default)]
    pub gold_tuples: Vec<SentimentTuple>,
}
