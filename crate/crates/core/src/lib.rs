//! Generative aspect-based sentiment analysis: task signatures, answer codecs,
//! prompt construction, dataset preparation, generation backends, scoring and
//! error triage.

pub mod analysis;
pub mod backend;
pub mod cli;
pub mod codecs;
pub mod datasets;
pub mod domain;
pub mod eval;
pub mod prompts;

pub use codecs::{decode, encode, AnswerFormat, DecodeMode, DecodeOutcome};
pub use domain::{
    ElementKind, Polarity, Record, SentimentTuple, Split, TaskInstance, TaskSignature, Tier,
};
pub use prompts::{assemble_signature, PromptStyle, TemplateRegistry};
