//! Answer-string codecs.
//!
//! Three surface grammars are supported:
//!
//! * `gas_extraction`: `(e1, e2, ...)` tuples joined by `"; "`.
//! * `lego_sentinel`: every element is introduced by a sentinel token
//!   `<extra_id_K>`, where `K` is the position of its kind inside the task
//!   signature. Slot numbering restarts for each tuple; tuples are joined by
//!   `" ; "`. The empty answer is `<extra_id_0> none`.
//! * `bartabsa_index`: aspect and opinion spans become inclusive 0-based
//!   whitespace-token indices, closed-vocabulary elements are written as
//!   words, e.g. `0,1,2,2,positive`. An implicit aspect is `-1,-1`.
//!
//! Every decoder runs in strict mode (first malformed segment is an error) or
//! lenient mode (malformed segments are dropped and reported, never an error).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ElementKind, SentimentTuple, TaskSignature, IMPLICIT_ASPECT};

pub const SENTINEL_PREFIX: &str = "<extra_id_";
pub const LEGO_EMPTY_ANSWER: &str = "<extra_id_0> none";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFormat {
    #[serde(alias = "gas")]
    GasExtraction,
    #[serde(alias = "lego")]
    LegoSentinel,
    #[serde(alias = "bartabsa")]
    BartabsaIndex,
}

impl AnswerFormat {
    pub const ALL: [AnswerFormat; 3] = [
        AnswerFormat::GasExtraction,
        AnswerFormat::LegoSentinel,
        AnswerFormat::BartabsaIndex,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerFormat::GasExtraction => "gas_extraction",
            AnswerFormat::LegoSentinel => "lego_sentinel",
            AnswerFormat::BartabsaIndex => "bartabsa_index",
        }
    }
}

impl fmt::Display for AnswerFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnswerFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gas_extraction" | "gas" => Ok(AnswerFormat::GasExtraction),
            "lego_sentinel" | "lego" => Ok(AnswerFormat::LegoSentinel),
            "bartabsa_index" | "bartabsa" => Ok(AnswerFormat::BartabsaIndex),
            other => Err(format!("unknown answer format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Strict,
    #[default]
    Lenient,
}

impl FromStr for DecodeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(DecodeMode::Strict),
            "lenient" => Ok(DecodeMode::Lenient),
            other => Err(format!("unknown decode mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeOutcome {
    pub tuples: Vec<SentimentTuple>,
    pub warnings: Vec<String>,
    pub dropped_segments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("tuple {index} does not match signature {signature}")]
    SignatureMismatch { index: usize, signature: String },
    #[error("segment {position}: {reason}")]
    MalformedSegment { position: usize, reason: String },
    #[error("segment {position}: unknown sentinel `{token}`")]
    UnknownSentinel { position: usize, token: String },
    #[error("segment {position}: {detail}")]
    SlotOrderViolation { position: usize, detail: String },
    #[error("the answer `{0}` is reserved for the empty tuple list")]
    ReservedValue(String),
    #[error("tuple {index}: {kind} `{term}` is not a run of whitespace tokens of the text")]
    TermNotTokenAligned {
        index: usize,
        kind: ElementKind,
        term: String,
    },
    #[error("segment {position}: index {index} out of range for {len} tokens")]
    IndexOutOfRange {
        position: usize,
        index: i64,
        len: usize,
    },
    #[error("segment {position}: expected {expected} fields, found {found}")]
    ArityMismatch {
        position: usize,
        expected: usize,
        found: usize,
    },
}

fn malformed(position: usize, reason: impl Into<String>) -> CodecError {
    CodecError::MalformedSegment {
        position,
        reason: reason.into(),
    }
}

fn check_signature(tuples: &[SentimentTuple], signature: &TaskSignature) -> Result<(), CodecError> {
    match tuples.iter().position(|t| !signature.matches(t)) {
        Some(index) => Err(CodecError::SignatureMismatch {
            index,
            signature: signature.name().to_string(),
        }),
        None => Ok(()),
    }
}

/// Shared segment loop for all decoders.
fn decode_segments<F>(
    segments: &[&str],
    mode: DecodeMode,
    mut parse: F,
) -> Result<DecodeOutcome, CodecError>
where
    F: FnMut(usize, &str) -> Result<SentimentTuple, CodecError>,
{
    let mut out = DecodeOutcome::default();
    for (position, segment) in segments.iter().enumerate() {
        let segment = segment.trim();
        match parse(position, segment) {
            Ok(tuple) => out.tuples.push(tuple),
            Err(e) => match mode {
                DecodeMode::Strict => return Err(e),
                DecodeMode::Lenient => {
                    out.warnings.push(e.to_string());
                    out.dropped_segments.push(segment.to_string());
                }
            },
        }
    }
    Ok(out)
}

fn top_level_segments(answer: &str) -> Vec<&str> {
    if answer.trim().is_empty() {
        Vec::new()
    } else {
        answer.split(';').collect()
    }
}

fn build_tuple(
    position: usize,
    values: &[(ElementKind, &str)],
) -> Result<SentimentTuple, CodecError> {
    for (kind, value) in values {
        if value.trim().is_empty() {
            return Err(malformed(position, format!("empty {kind}")));
        }
    }
    SentimentTuple::from_elements(values.iter().map(|(k, v)| (*k, v.trim())))
        .map_err(|e| malformed(position, e.to_string()))
}

fn element_text(tuple: &SentimentTuple, kind: ElementKind) -> String {
    tuple.get(kind).map(|v| v.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// gas_extraction

pub fn encode_gas(
    tuples: &[SentimentTuple],
    signature: &TaskSignature,
) -> Result<String, CodecError> {
    check_signature(tuples, signature)?;
    let segments: Vec<String> = tuples
        .iter()
        .map(|t| {
            let fields: Vec<String> = signature
                .kinds()
                .iter()
                .map(|k| element_text(t, *k))
                .collect();
            format!("({})", fields.join(", "))
        })
        .collect();
    Ok(segments.join("; "))
}

pub fn decode_gas(
    answer: &str,
    signature: &TaskSignature,
    mode: DecodeMode,
) -> Result<DecodeOutcome, CodecError> {
    decode_segments(&top_level_segments(answer), mode, |position, segment| {
        parse_gas_segment(position, segment, signature)
    })
}

/// Closed-vocabulary fields are peeled from the right so that commas inside
/// the last free-text field survive.
fn parse_gas_segment(
    position: usize,
    segment: &str,
    signature: &TaskSignature,
) -> Result<SentimentTuple, CodecError> {
    let inner = segment
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| malformed(position, "expected a parenthesized tuple"))?;

    let kinds = signature.kinds();
    let spans: Vec<ElementKind> = kinds.iter().copied().filter(|k| k.is_span()).collect();
    let closed: Vec<ElementKind> = kinds.iter().copied().filter(|k| !k.is_span()).collect();

    let mut values: Vec<(ElementKind, &str)> = Vec::with_capacity(kinds.len());
    let mut rest = inner;
    for (i, kind) in closed.iter().enumerate().rev() {
        let leftmost = spans.is_empty() && i == 0;
        if leftmost {
            values.push((*kind, rest));
            rest = "";
        } else {
            let (left, value) = rest
                .rsplit_once(',')
                .ok_or_else(|| malformed(position, format!("expected {} fields", kinds.len())))?;
            values.push((*kind, value));
            rest = left;
        }
    }
    match spans.as_slice() {
        [] => {}
        [only] => values.push((*only, rest)),
        [first, second] => {
            let (a, b) = rest
                .split_once(',')
                .ok_or_else(|| malformed(position, format!("expected {} fields", kinds.len())))?;
            values.push((*first, a));
            values.push((*second, b));
        }
        _ => unreachable!("only aspect and opinion are span kinds"),
    }
    build_tuple(position, &values)
}

// ---------------------------------------------------------------------------
// lego_sentinel

pub fn sentinel(slot: usize) -> String {
    format!("{SENTINEL_PREFIX}{slot}>")
}

pub fn encode_lego(
    tuples: &[SentimentTuple],
    signature: &TaskSignature,
) -> Result<String, CodecError> {
    check_signature(tuples, signature)?;
    if tuples.is_empty() {
        return Ok(LEGO_EMPTY_ANSWER.to_string());
    }
    let segments: Vec<String> = tuples
        .iter()
        .map(|t| {
            signature
                .kinds()
                .iter()
                .enumerate()
                .map(|(slot, kind)| format!("{} {}", sentinel(slot), element_text(t, *kind)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let answer = segments.join(" ; ");
    if is_lego_empty(&answer) {
        return Err(CodecError::ReservedValue(answer));
    }
    Ok(answer)
}

fn is_lego_empty(answer: &str) -> bool {
    let mut words = answer.split_whitespace();
    words.next() == Some("<extra_id_0>") && words.next() == Some("none") && words.next().is_none()
}

pub fn decode_lego(
    answer: &str,
    signature: &TaskSignature,
    mode: DecodeMode,
) -> Result<DecodeOutcome, CodecError> {
    if is_lego_empty(answer) {
        return Ok(DecodeOutcome::default());
    }
    decode_segments(&top_level_segments(answer), mode, |position, segment| {
        parse_lego_segment(position, segment, signature)
    })
}

fn parse_lego_segment(
    position: usize,
    segment: &str,
    signature: &TaskSignature,
) -> Result<SentimentTuple, CodecError> {
    if segment.is_empty() {
        return Err(malformed(position, "empty segment"));
    }
    if !segment.starts_with(SENTINEL_PREFIX) {
        return Err(malformed(position, "text before the first sentinel"));
    }

    let mut slots: Vec<(usize, &str)> = Vec::new();
    let mut rest = segment;
    while let Some(after) = rest.strip_prefix(SENTINEL_PREFIX) {
        let close = after.find('>').ok_or_else(|| CodecError::UnknownSentinel {
            position,
            token: rest.split_whitespace().next().unwrap_or(rest).to_string(),
        })?;
        let digits = &after[..close];
        let slot: usize = digits.parse().map_err(|_| CodecError::UnknownSentinel {
            position,
            token: format!("{SENTINEL_PREFIX}{digits}>"),
        })?;
        if slot >= signature.arity() {
            return Err(CodecError::UnknownSentinel {
                position,
                token: sentinel(slot),
            });
        }
        let body = &after[close + 1..];
        let end = body.find(SENTINEL_PREFIX).unwrap_or(body.len());
        slots.push((slot, &body[..end]));
        rest = &body[end..];
    }

    for (i, (slot, _)) in slots.iter().enumerate() {
        if *slot != i {
            let detail = if *slot > i && slots[..i].iter().all(|(s, _)| *s < *slot) {
                format!("missing slot {i}")
            } else {
                format!("slot {slot} out of order")
            };
            return Err(CodecError::SlotOrderViolation { position, detail });
        }
    }
    if slots.len() < signature.arity() {
        return Err(CodecError::SlotOrderViolation {
            position,
            detail: format!("missing slot {}", slots.len()),
        });
    }

    let values: Vec<(ElementKind, &str)> = signature
        .kinds()
        .iter()
        .zip(&slots)
        .map(|(kind, (_, value))| (*kind, *value))
        .collect();
    build_tuple(position, &values)
}

// ---------------------------------------------------------------------------
// bartabsa_index

fn find_token_run(tokens: &[&str], term: &str) -> Option<(usize, usize)> {
    let needle: Vec<&str> = term.split_whitespace().collect();
    if needle.is_empty() || needle.len() > tokens.len() {
        return None;
    }
    tokens
        .windows(needle.len())
        .position(|w| w == needle.as_slice())
        .map(|start| (start, start + needle.len() - 1))
}

pub fn encode_bartabsa(
    tuples: &[SentimentTuple],
    signature: &TaskSignature,
    text: &str,
) -> Result<String, CodecError> {
    check_signature(tuples, signature)?;
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut segments = Vec::with_capacity(tuples.len());
    for (index, tuple) in tuples.iter().enumerate() {
        let mut fields: Vec<String> = Vec::new();
        for &kind in signature.kinds() {
            if kind.is_span() {
                let term = tuple.text(kind).unwrap_or_default();
                if kind == ElementKind::Aspect && term == IMPLICIT_ASPECT {
                    fields.push("-1,-1".to_string());
                    continue;
                }
                let (start, end) = find_token_run(&tokens, term).ok_or_else(|| {
                    CodecError::TermNotTokenAligned {
                        index,
                        kind,
                        term: term.to_string(),
                    }
                })?;
                fields.push(format!("{start},{end}"));
            } else {
                fields.push(element_text(tuple, kind));
            }
        }
        segments.push(fields.join(","));
    }
    Ok(segments.join("; "))
}

pub fn decode_bartabsa(
    answer: &str,
    signature: &TaskSignature,
    text: &str,
    mode: DecodeMode,
) -> Result<DecodeOutcome, CodecError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    decode_segments(&top_level_segments(answer), mode, |position, segment| {
        parse_bartabsa_segment(position, segment, signature, &tokens)
    })
}

fn parse_bartabsa_segment(
    position: usize,
    segment: &str,
    signature: &TaskSignature,
    tokens: &[&str],
) -> Result<SentimentTuple, CodecError> {
    let fields: Vec<&str> = segment.split(',').map(str::trim).collect();
    let expected: usize = signature
        .kinds()
        .iter()
        .map(|k| if k.is_span() { 2 } else { 1 })
        .sum();
    if fields.len() != expected {
        return Err(CodecError::ArityMismatch {
            position,
            expected,
            found: fields.len(),
        });
    }

    let parse_index = |s: &str| -> Result<i64, CodecError> {
        s.parse::<i64>()
            .map_err(|_| malformed(position, format!("`{s}` is not a token index")))
    };

    let mut owned: Vec<(ElementKind, String)> = Vec::with_capacity(signature.arity());
    let mut cursor = fields.iter();
    for &kind in signature.kinds() {
        if kind.is_span() {
            let start = parse_index(cursor.next().copied().unwrap_or_default())?;
            let end = parse_index(cursor.next().copied().unwrap_or_default())?;
            if kind == ElementKind::Aspect && start == -1 && end == -1 {
                owned.push((kind, IMPLICIT_ASPECT.to_string()));
                continue;
            }
            for index in [start, end] {
                if index < 0 || index as u64 >= tokens.len() as u64 {
                    return Err(CodecError::IndexOutOfRange {
                        position,
                        index,
                        len: tokens.len(),
                    });
                }
            }
            if start > end {
                return Err(malformed(
                    position,
                    format!("span {start},{end} is inverted"),
                ));
            }
            owned.push((kind, tokens[start as usize..=end as usize].join(" ")));
        } else {
            owned.push((kind, cursor.next().copied().unwrap_or_default().to_string()));
        }
    }
    let values: Vec<(ElementKind, &str)> = owned.iter().map(|(k, v)| (*k, v.as_str())).collect();
    build_tuple(position, &values)
}

// ---------------------------------------------------------------------------

/// Encodes under any format. `text` is only consulted by `bartabsa_index`.
pub fn encode(
    format: AnswerFormat,
    tuples: &[SentimentTuple],
    signature: &TaskSignature,
    text: &str,
) -> Result<String, CodecError> {
    match format {
        AnswerFormat::GasExtraction => encode_gas(tuples, signature),
        AnswerFormat::LegoSentinel => encode_lego(tuples, signature),
        AnswerFormat::BartabsaIndex => encode_bartabsa(tuples, signature, text),
    }
}

pub fn decode(
    format: AnswerFormat,
    answer: &str,
    signature: &TaskSignature,
    text: &str,
    mode: DecodeMode,
) -> Result<DecodeOutcome, CodecError> {
    match format {
        AnswerFormat::GasExtraction => decode_gas(answer, signature, mode),
        AnswerFormat::LegoSentinel => decode_lego(answer, signature, mode),
        AnswerFormat::BartabsaIndex => decode_bartabsa(answer, signature, text, mode),
    }
}
