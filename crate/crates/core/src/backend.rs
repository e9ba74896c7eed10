//! Text generation backends.
//!
//! Everything that turns prompts into answer strings implements
//! [`Generator`]. Outputs are always index-aligned with the prompts; a failed
//! chunk fails the whole call and no partial output is returned.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::TaskInstance;

/// Overrides the endpoint of an `http:` backend spec.
pub const ENDPOINT_ENV: &str = "ABSA_KIT_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable for prompts {}..{}: {reason}", range.start, range.end)]
    Unavailable { range: Range<usize>, reason: String },
    #[error("backend protocol error for prompts {}..{}: {reason}", range.start, range.end)]
    Protocol { range: Range<usize>, reason: String },
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("invalid backend spec `{0}`")]
    InvalidSpec(String),
    #[error("cannot load golden outputs from {path}: {reason}")]
    GoldenFile { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    #[serde(default = "default_num_beams")]
    pub num_beams: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop_sequences: Vec<String>,
    /// Extra decoding keys forwarded untouched to the server.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

fn default_max_new_tokens() -> u32 {
    128
}

fn default_num_beams() -> u32 {
    1
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            max_new_tokens: default_max_new_tokens(),
            num_beams: default_num_beams(),
            stop_sequences: Vec::new(),
            extra: serde_json::Map::new(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_new_tokens == 0 {
            return Err(BackendError::InvalidParams(
                "max_new_tokens must be > 0".into(),
            ));
        }
        if self.num_beams == 0 {
            return Err(BackendError::InvalidParams("num_beams must be >= 1".into()));
        }
        Ok(())
    }
}

pub trait Generator: Send + Sync {
    fn generate(
        &self,
        prompts: &[String],
        params: &GenerationParams,
    ) -> Result<Vec<String>, BackendError>;

    /// Generation for rendered instances. Backends that need more than the
    /// prompt (the oracle) override this.
    fn generate_instances(
        &self,
        instances: &[TaskInstance],
        params: &GenerationParams,
    ) -> Result<Vec<String>, BackendError> {
        let prompts: Vec<String> = instances.iter().map(|i| i.prompt.clone()).collect();
        self.generate(&prompts, params)
    }
}

/// Answers every prompt with the same fixed string.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    pub output: String,
}

impl Generator for MockBackend {
    fn generate(
        &self,
        prompts: &[String],
        params: &GenerationParams,
    ) -> Result<Vec<String>, BackendError> {
        params.validate()?;
        Ok(vec![self.output.clone(); prompts.len()])
    }
}

/// Looks answers up in a prompt-to-output table.
#[derive(Debug, Clone, Default)]
pub struct GoldenBackend {
    pub outputs: BTreeMap<String, String>,
    /// Unmapped prompts fail with `Unavailable` instead of yielding `""`.
    pub strict: bool,
}

#[derive(Deserialize)]
struct GoldenRow {
    prompt: String,
    output: String,
}

impl GoldenBackend {
    pub fn new(outputs: BTreeMap<String, String>, strict: bool) -> Self {
        GoldenBackend { outputs, strict }
    }

    /// Accepts a JSON object `{prompt: output}` or JSON lines of
    /// `{"prompt": .., "output": ..}`.
    pub fn load(path: &Path, strict: bool) -> Result<Self, BackendError> {
        let err = |reason: String| BackendError::GoldenFile {
            path: path.display().to_string(),
            reason,
        };
        let content = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        if let Ok(map) = serde_json::from_str::<BTreeMap<String, String>>(&content) {
            return Ok(GoldenBackend::new(map, strict));
        }
        let mut outputs = BTreeMap::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: GoldenRow =
                serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            outputs.entry(row.prompt).or_insert(row.output);
        }
        Ok(GoldenBackend::new(outputs, strict))
    }
}

impl Generator for GoldenBackend {
    fn generate(
        &self,
        prompts: &[String],
        params: &GenerationParams,
    ) -> Result<Vec<String>, BackendError> {
        params.validate()?;
        prompts
            .iter()
            .enumerate()
            .map(|(i, p)| match self.outputs.get(p) {
                Some(out) => Ok(out.clone()),
                None if self.strict => Err(BackendError::Unavailable {
                    range: i..i + 1,
                    reason: format!("no golden output for prompt `{p}`"),
                }),
                None => Ok(String::new()),
            })
            .collect()
    }
}

/// Emits each instance's gold answer verbatim.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    by_prompt: BTreeMap<String, String>,
}

impl OracleBackend {
    /// Also indexes answers by prompt so that plain `generate` works; the first
    /// instance wins when prompts repeat.
    pub fn from_instances(instances: &[TaskInstance]) -> Self {
        let mut by_prompt = BTreeMap::new();
        for instance in instances {
            by_prompt
                .entry(instance.prompt.clone())
                .or_insert_with(|| instance.gold_answer.clone());
        }
        OracleBackend { by_prompt }
    }
}

impl Generator for OracleBackend {
    fn generate(
        &self,
        prompts: &[String],
        params: &GenerationParams,
    ) -> Result<Vec<String>, BackendError> {
        params.validate()?;
        prompts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                self.by_prompt
                    .get(p)
                    .cloned()
                    .ok_or_else(|| BackendError::Unavailable {
                        range: i..i + 1,
                        reason: "the oracle only knows prompts of the instances it was built from"
                            .into(),
                    })
            })
            .collect()
    }

    fn generate_instances(
        &self,
        instances: &[TaskInstance],
        params: &GenerationParams,
    ) -> Result<Vec<String>, BackendError> {
        params.validate()?;
        Ok(instances.iter().map(|i| i.gold_answer.clone()).collect())
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    inputs: &'a [String],
    parameters: &'a GenerationParams,
}

#[derive(Deserialize)]
struct WireResponse {
    outputs: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct HttpOptions {
    pub batch_size: usize,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_in_flight: usize,
    pub timeout: Duration,
}

impl Default for HttpOptions {
    fn default() -> Self {
        HttpOptions {
            batch_size: 8,
            max_retries: 3,
            initial_backoff: Duration::from_millis(200),
            max_in_flight: 4,
            timeout: Duration::from_secs(60),
        }
    }
}

/// Client for a `POST /generate` JSON service:
/// `{"inputs": [...], "parameters": {...}}` answered by `{"outputs": [...]}`.
pub struct HttpBackend {
    url: String,
    options: HttpOptions,
    client: reqwest::blocking::Client,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("url", &self.url)
            .field("options", &self.options)
            .finish()
    }
}

enum Attempt {
    Retry(String),
    Fail(BackendError),
}

impl HttpBackend {
    pub fn new(endpoint: &str, options: HttpOptions) -> Result<Self, BackendError> {
        let endpoint = endpoint.trim_end_matches('/');
        let url = if endpoint.ends_with("/generate") {
            endpoint.to_string()
        } else {
            format!("{endpoint}/generate")
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(options.timeout)
            .build()
            .map_err(|e| BackendError::InvalidSpec(e.to_string()))?;
        Ok(HttpBackend {
            url,
            options: HttpOptions {
                batch_size: options.batch_size.max(1),
                max_in_flight: options.max_in_flight.max(1),
                ..options
            },
            client,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn send_chunk(
        &self,
        prompts: &[String],
        range: Range<usize>,
        params: &GenerationParams,
    ) -> Result<Vec<String>, BackendError> {
        let body = WireRequest {
            inputs: prompts,
            parameters: params,
        };
        let mut backoff = self.options.initial_backoff;
        let mut attempt = 0;
        loop {
            let last_reason = match self.try_once(&body, &range) {
                Ok(outputs) => {
                    if attempt > 0 {
                        log::info!(
                            "prompts {}..{} succeeded after {attempt} retries",
                            range.start,
                            range.end
                        );
                    }
                    return Ok(outputs);
                }
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(reason)) => reason,
            };
            if attempt >= self.options.max_retries {
                return Err(if last_reason.starts_with("status") {
                    BackendError::Protocol {
                        range,
                        reason: format!("{last_reason} after {attempt} retries"),
                    }
                } else {
                    BackendError::Unavailable {
                        range,
                        reason: format!("{last_reason} after {attempt} retries"),
                    }
                });
            }
            attempt += 1;
            log::warn!(
                "prompts {}..{}: {last_reason}; retry {attempt}/{} in {:?}",
                range.start,
                range.end,
                self.options.max_retries,
                backoff
            );
            thread::sleep(backoff);
            backoff *= 2;
        }
    }

    fn try_once(
        &self,
        body: &WireRequest<'_>,
        range: &Range<usize>,
    ) -> Result<Vec<String>, Attempt> {
        let protocol = |reason: String| {
            Attempt::Fail(BackendError::Protocol {
                range: range.clone(),
                reason,
            })
        };
        let response = self
            .client
            .post(&self.url)
            .json(body)
            .send()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(protocol(format!("status {status}")));
        }
        let text = response.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        let parsed: WireResponse =
            serde_json::from_str(&text).map_err(|e| protocol(format!("malformed body: {e}")))?;
        if parsed.outputs.len() != body.inputs.len() {
            return Err(protocol(format!(
                "length mismatch: {} outputs for {} inputs",
                parsed.outputs.len(),
                body.inputs.len()
            )));
        }
        Ok(parsed.outputs)
    }
}

type ChunkResult = Result<Vec<String>, BackendError>;

impl Generator for HttpBackend {
    fn generate(
        &self,
        prompts: &[String],
        params: &GenerationParams,
    ) -> Result<Vec<String>, BackendError> {
        params.validate()?;
        let size = self.options.batch_size;
        let chunks: Vec<(Range<usize>, &[String])> = prompts
            .chunks(size)
            .enumerate()
            .map(|(i, c)| (i * size..i * size + c.len(), c))
            .collect();
        let results: Mutex<Vec<Option<ChunkResult>>> = Mutex::new(vec![None; chunks.len()]);
        let next = AtomicUsize::new(0);
        let workers = self.options.max_in_flight.min(chunks.len());

        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some((range, chunk)) = chunks.get(i) else {
                        break;
                    };
                    let result = self.send_chunk(chunk, range.clone(), params);
                    let failed = result.is_err();
                    results
                        .lock()
                        .expect("no worker panics while holding the lock")[i] = Some(result);
                    if failed {
                        // stop handing out new chunks; in-flight ones finish
                        next.fetch_max(chunks.len(), Ordering::Relaxed);
                    }
                });
            }
        });

        let mut outputs = Vec::with_capacity(prompts.len());
        for (i, slot) in results
            .into_inner()
            .expect("workers joined")
            .into_iter()
            .enumerate()
        {
            match slot {
                Some(Ok(chunk)) => outputs.extend(chunk),
                Some(Err(e)) => return Err(e),
                None => {
                    return Err(BackendError::Unavailable {
                        range: chunks[i].0.clone(),
                        reason: "not sent after an earlier chunk failed".into(),
                    })
                }
            }
        }
        Ok(outputs)
    }
}

/// Textual backend selector: `mock`, `mock:<output>`, `oracle`,
/// `golden:<path>`, `golden-strict:<path>` or `http:<endpoint>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    Mock(String),
    Oracle,
    Golden { path: String, strict: bool },
    Http(String),
}

impl FromStr for BackendSpec {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "mock" => Ok(BackendSpec::Mock(String::new())),
            None if s == "oracle" => Ok(BackendSpec::Oracle),
            Some(("mock", output)) => Ok(BackendSpec::Mock(output.to_string())),
            Some(("golden", path)) if !path.is_empty() => Ok(BackendSpec::Golden {
                path: path.to_string(),
                strict: false,
            }),
            Some(("golden-strict", path)) if !path.is_empty() => Ok(BackendSpec::Golden {
                path: path.to_string(),
                strict: true,
            }),
            Some(("http", endpoint)) if !endpoint.is_empty() => {
                Ok(BackendSpec::Http(endpoint.to_string()))
            }
            _ => Err(BackendError::InvalidSpec(s.to_string())),
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = BackendError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(spec: BackendSpec) -> String {
        spec.to_string()
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Mock(out) if out.is_empty() => f.write_str("mock"),
            BackendSpec::Mock(out) => write!(f, "mock:{out}"),
            BackendSpec::Oracle => f.write_str("oracle"),
            BackendSpec::Golden {
                path,
                strict: false,
            } => write!(f, "golden:{path}"),
            BackendSpec::Golden { path, strict: true } => write!(f, "golden-strict:{path}"),
            BackendSpec::Http(endpoint) => write!(f, "http:{endpoint}"),
        }
    }
}

impl BackendSpec {
    /// Instantiates the backend. `instances` seeds the oracle.
    pub fn build(
        &self,
        instances: &[TaskInstance],
        http: HttpOptions,
    ) -> Result<Box<dyn Generator>, BackendError> {
        Ok(match self {
            BackendSpec::Mock(output) => Box::new(MockBackend {
                output: output.clone(),
            }),
            BackendSpec::Oracle => Box::new(OracleBackend::from_instances(instances)),
            BackendSpec::Golden { path, strict } => {
                Box::new(GoldenBackend::load(Path::new(path), *strict)?)
            }
            BackendSpec::Http(endpoint) => {
                let endpoint = std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| endpoint.clone());
                Box::new(HttpBackend::new(&endpoint, http)?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompts(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn params_defaults_and_wire_shape() {
        let params = GenerationParams::default();
        assert_eq!(params.max_new_tokens, 128);
        assert_eq!(params.num_beams, 1);
        let inputs = prompts(&["<ASTE> pizza nya enak"]);
        let body = serde_json::to_string(&WireRequest {
            inputs: &inputs,
            parameters: &params,
        })
        .unwrap();
        assert_eq!(
            body,
            r#"{"inputs":["<ASTE> pizza nya enak"],"parameters":{"max_new_tokens":128,"num_beams":1}}"#
        );
        let bad = GenerationParams {
            num_beams: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn extra_params_pass_through() {
        let params: GenerationParams =
            serde_json::from_str(r#"{"max_new_tokens":64,"length_penalty":0.5}"#).unwrap();
        assert_eq!(params.num_beams, 1);
        let json = serde_json::to_value(&params).unwrap();
        assert_eq!(json["length_penalty"], 0.5);
    }

    #[test]
    fn golden_backend() {
        let map = BTreeMap::from([("p".to_string(), "(pizza, enak, positive)".to_string())]);
        let lenient = GoldenBackend::new(map.clone(), false);
        let params = GenerationParams::default();
        assert_eq!(
            lenient.generate(&prompts(&["p"]), &params).unwrap(),
            ["(pizza, enak, positive)"]
        );
        assert_eq!(lenient.generate(&prompts(&["q"]), &params).unwrap(), [""]);
        let strict = GoldenBackend::new(map, true);
        assert!(matches!(
            strict.generate(&prompts(&["p", "q"]), &params),
            Err(BackendError::Unavailable { range, .. }) if range == (1..2)
        ));
    }

    #[test]
    fn oracle_returns_gold() {
        let instance = TaskInstance {
            record_id: "r".into(),
            task: "ATE".into(),
            signature: None,
            format: None,
            text: "x".into(),
            prompt: "<ATE> x".into(),
            gold_answer: "(x)".into(),
            gold_tuples: vec![],
        };
        let oracle = OracleBackend::from_instances(std::slice::from_ref(&instance));
        let params = GenerationParams::default();
        assert_eq!(
            oracle
                .generate_instances(std::slice::from_ref(&instance), &params)
                .unwrap(),
            ["(x)"]
        );
        assert_eq!(
            oracle.generate(&prompts(&["<ATE> x"]), &params).unwrap(),
            ["(x)"]
        );
        assert!(oracle.generate(&prompts(&["other"]), &params).is_err());
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(
            "oracle".parse::<BackendSpec>().unwrap(),
            BackendSpec::Oracle
        );
        assert_eq!(
            "mock".parse::<BackendSpec>().unwrap(),
            BackendSpec::Mock(String::new())
        );
        assert_eq!(
            "http:http://localhost:8080".parse::<BackendSpec>().unwrap(),
            BackendSpec::Http("http://localhost:8080".into())
        );
        assert_eq!(
            "golden-strict:a.json".parse::<BackendSpec>().unwrap(),
            BackendSpec::Golden {
                path: "a.json".into(),
                strict: true
            }
        );
        assert!("gpu".parse::<BackendSpec>().is_err());
        assert!("http:".parse::<BackendSpec>().is_err());
        for s in [
            "mock",
            "mock:x",
            "oracle",
            "golden:a",
            "golden-strict:b",
            "http:http://h:1",
        ] {
            assert_eq!(s.parse::<BackendSpec>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn http_url_gets_generate_suffix() {
        let b = HttpBackend::new("http://localhost:9/", HttpOptions::default()).unwrap();
        assert_eq!(b.url(), "http://localhost:9/generate");
        let b = HttpBackend::new("http://localhost:9/generate", HttpOptions::default()).unwrap();
        assert_eq!(b.url(), "http://localhost:9/generate");
    }
}
