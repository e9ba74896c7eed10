//! Prompt construction and task-prompt assembly.
//!
//! A prompt for a complex task is built from one sub-prompt per element kind,
//! so the prompt of a combined signature is always the union of the
//! sub-prompts of its parts. All wording is data held in a
//! [`TemplateRegistry`], which can be loaded from JSON.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codecs::sentinel;
use crate::domain::{ElementKind, TaskSignature};

pub const SLOT_MARKER: &str = "{slot}";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("input text is empty")]
    EmptyText,
    #[error("signature `{0}` conflicts with the task registry")]
    UnknownSignature(String),
    #[error("unknown prompt style `{0}`")]
    UnknownStyle(String),
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("no instruction configured for supplementary task `{0}`")]
    UnknownSupplementary(String),
    #[error("cannot read templates from {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse templates: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    #[serde(alias = "lego")]
    LegoMask,
    #[serde(alias = "prefix")]
    PrefixInstruction,
    OneToken,
}

impl PromptStyle {
    pub const ALL: [PromptStyle; 3] = [
        PromptStyle::LegoMask,
        PromptStyle::PrefixInstruction,
        PromptStyle::OneToken,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptStyle::LegoMask => "lego_mask",
            PromptStyle::PrefixInstruction => "prefix_instruction",
            PromptStyle::OneToken => "one_token",
        }
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptStyle {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lego_mask" | "lego" => Ok(PromptStyle::LegoMask),
            "prefix_instruction" | "prefix" => Ok(PromptStyle::PrefixInstruction),
            "one_token" => Ok(PromptStyle::OneToken),
            other => Err(PromptError::UnknownStyle(other.to_string())),
        }
    }
}

/// Per-kind wording.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubPrompt {
    /// Must contain exactly one `{slot}` marker.
    pub template: String,
    /// Short field name used inside instructions, e.g. `aspect`.
    pub label: String,
    /// Plural phrase used inside instructions, e.g. `aspect terms`.
    pub phrase: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeletons {
    pub lego_mask: String,
    pub prefix_instruction: String,
    pub one_token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateRegistry {
    pub sub_prompts: BTreeMap<ElementKind, SubPrompt>,
    pub sub_prompt_joiner: String,
    pub skeletons: Skeletons,
    /// Task name to one-token prompt; unlisted tasks fall back to `<NAME>`.
    #[serde(default)]
    pub task_tokens: BTreeMap<String, String>,
    /// Supplementary task name to instruction skeleton containing `{text}`.
    #[serde(default)]
    pub supplementary: BTreeMap<String, String>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        let sub = |template: &str, label: &str, phrase: &str| SubPrompt {
            template: template.to_string(),
            label: label.to_string(),
            phrase: phrase.to_string(),
        };
        let sub_prompts = BTreeMap::from([
            (
                ElementKind::Aspect,
                sub("aspect : {slot}", "aspect", "aspect terms"),
            ),
            (
                ElementKind::Opinion,
                sub("opinion : {slot}", "opinion", "opinion terms"),
            ),
            (
                ElementKind::Category,
                sub("category : {slot}", "category", "aspect categories"),
            ),
            (
                ElementKind::Polarity,
                sub("sentiment : {slot}", "sentiment", "sentiment polarities"),
            ),
        ]);
        let task_tokens = TaskSignature::registry()
            .iter()
            .map(|s| (s.name().to_string(), format!("<{}>", s.name())))
            .collect();
        let supplementary = BTreeMap::from([
            (
                "pos_tagging".to_string(),
                "Tag every token with its part of speech as token_TAG separated by ; : {text}"
                    .to_string(),
            ),
            (
                "doc_sentiment".to_string(),
                "Classify the sentiment of the document : {text}".to_string(),
            ),
            (
                "emotion".to_string(),
                "Classify the emotion of the text : {text}".to_string(),
            ),
        ]);
        TemplateRegistry {
            sub_prompts,
            sub_prompt_joiner: " , ".to_string(),
            skeletons: Skeletons {
                lego_mask: "{text} | {prompts}".to_string(),
                prefix_instruction:
                    "Extract all {elements} as ( {fields} ) separated by ; : {text}".to_string(),
                one_token: "{token} {text}".to_string(),
            },
            task_tokens,
            supplementary,
        }
    }
}

impl TemplateRegistry {
    pub fn from_json(json: &str) -> Result<Self, PromptError> {
        let registry: TemplateRegistry = serde_json::from_str(json)?;
        registry.validate()?;
        Ok(registry)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let json = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&json)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for kind in ElementKind::ALL {
            let sub = self
                .sub_prompts
                .get(&kind)
                .ok_or_else(|| PromptError::InvalidTemplate(format!("no sub-prompt for {kind}")))?;
            if sub.template.matches(SLOT_MARKER).count() != 1 {
                return Err(PromptError::InvalidTemplate(format!(
                    "sub-prompt for {kind} must contain exactly one {SLOT_MARKER}"
                )));
            }
        }
        let skeletons = [
            ("lego_mask", &self.skeletons.lego_mask, "{prompts}"),
            (
                "prefix_instruction",
                &self.skeletons.prefix_instruction,
                "{elements}",
            ),
            ("one_token", &self.skeletons.one_token, "{token}"),
        ];
        for (name, skeleton, required) in skeletons {
            for marker in ["{text}", required] {
                if !skeleton.contains(marker) {
                    return Err(PromptError::InvalidTemplate(format!(
                        "{name} skeleton lacks {marker}"
                    )));
                }
            }
        }
        for (name, skeleton) in &self.supplementary {
            if !skeleton.contains("{text}") {
                return Err(PromptError::InvalidTemplate(format!(
                    "{name} instruction lacks {{text}}"
                )));
            }
        }
        Ok(())
    }

    fn sub_prompt(&self, kind: ElementKind) -> &SubPrompt {
        // validate() guarantees presence for registries built through from_json
        &self.sub_prompts[&kind]
    }

    /// The sub-prompt for `kind` with its slot filled by sentinel `slot`.
    pub fn filled_sub_prompt(&self, kind: ElementKind, slot: usize) -> String {
        self.sub_prompt(kind)
            .template
            .replacen(SLOT_MARKER, &sentinel(slot), 1)
    }

    pub fn task_token(&self, signature: &TaskSignature) -> String {
        self.task_tokens
            .get(signature.name())
            .cloned()
            .unwrap_or_else(|| format!("<{}>", signature.name()))
    }

    pub fn build_prompt(
        &self,
        text: &str,
        signature: &TaskSignature,
        style: PromptStyle,
    ) -> Result<String, PromptError> {
        if text.trim().is_empty() {
            return Err(PromptError::EmptyText);
        }
        if let Ok(registered) = TaskSignature::registered(signature.name()) {
            if registered.kinds() != signature.kinds() {
                return Err(PromptError::UnknownSignature(signature.name().to_string()));
            }
        }
        let prompt = match style {
            PromptStyle::LegoMask => {
                let prompts: Vec<String> = signature
                    .kinds()
                    .iter()
                    .enumerate()
                    .map(|(slot, kind)| self.filled_sub_prompt(*kind, slot))
                    .collect();
                render(
                    &self.skeletons.lego_mask,
                    &[
                        ("text", text),
                        ("prompts", &prompts.join(&self.sub_prompt_joiner)),
                    ],
                )
            }
            PromptStyle::PrefixInstruction => {
                let phrases: Vec<&str> = signature
                    .kinds()
                    .iter()
                    .map(|k| self.sub_prompt(*k).phrase.as_str())
                    .collect();
                let labels: Vec<&str> = signature
                    .kinds()
                    .iter()
                    .map(|k| self.sub_prompt(*k).label.as_str())
                    .collect();
                render(
                    &self.skeletons.prefix_instruction,
                    &[
                        ("elements", &english_list(&phrases)),
                        ("fields", &labels.join(" , ")),
                        ("text", text),
                    ],
                )
            }
            PromptStyle::OneToken => render(
                &self.skeletons.one_token,
                &[("token", &self.task_token(signature)), ("text", text)],
            ),
        };
        Ok(prompt)
    }

    pub fn supplementary_prompt(&self, task: &str, text: &str) -> Result<String, PromptError> {
        if text.trim().is_empty() {
            return Err(PromptError::EmptyText);
        }
        let skeleton = self
            .supplementary
            .get(task)
            .ok_or_else(|| PromptError::UnknownSupplementary(task.to_string()))?;
        Ok(render(skeleton, &[("text", text)]))
    }
}

/// `a`, `a and b`, `a, b and c`.
fn english_list(items: &[&str]) -> String {
    match items {
        [] => String::new(),
        [only] => only.to_string(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

/// Single-pass `{name}` substitution; substituted values are never rescanned.
fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            values
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, v)| (*v, close))
        });
        match replaced {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Union of two signatures. The result takes the registry name when the
/// union is a registered task, otherwise a name derived from its kinds so that
/// the operation stays commutative and associative.
pub fn assemble_signature(a: &TaskSignature, b: &TaskSignature) -> TaskSignature {
    if a == b {
        return a.clone();
    }
    let kinds: Vec<ElementKind> = a.kinds().iter().chain(b.kinds()).copied().collect();
    if let Some(registered) = TaskSignature::lookup_by_kinds(&kinds) {
        return registered;
    }
    let mut sorted = kinds.clone();
    sorted.sort();
    sorted.dedup();
    let name = sorted
        .iter()
        .map(|k| k.as_str())
        .collect::<Vec<_>>()
        .join("+");
    TaskSignature::new(name, sorted).expect("union of non-empty signatures is non-empty")
}
