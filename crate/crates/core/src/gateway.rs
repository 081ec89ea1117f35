//! Model backends: VLM description, text embedding and LLM completion.
//!
//! [`MockBackend`] is deterministic and accounts latency on a logical clock
//! (`fixed_overhead_ms + output_tokens * ms_per_token`, no sleeping).
//! [`HttpBackend`] speaks a small subset of the OpenAI-compatible chat
//! completions API.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{BackendError, ValidationError};
use crate::prompt::{PromptRole, PromptText};
use crate::types::Detection;

pub const MOCK_EMBEDDING_DIM: usize = 256;
pub const ENDPOINT_ENV: &str = "CROSSCAM_ENDPOINT";
pub const TOKEN_ENV: &str = "CROSSCAM_API_KEY";
pub const NO_ANSWER: &str = "No relevant information found.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescribeRequest {
    /// Frame image locator; HTTP backends require it.
    pub media_ref: Option<String>,
    /// Clip detections; the mock backend describes these.
    pub detections: Vec<Detection>,
    pub prompt: PromptText,
    pub max_output_tokens: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelUsage {
    pub prompt_tokens: u32,
    pub output_tokens: u32,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub text: String,
    pub usage: ModelUsage,
}

pub trait VisionModel: Send + Sync {
    fn describe(&self, req: &DescribeRequest) -> Result<Generation, BackendError>;
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, prompt: &str, max_output_tokens: u32) -> Result<Generation, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLatency", into = "RawLatency")]
pub struct MockLatencyModel {
    fixed_overhead_ms: u64,
    ms_per_token: f64,
}

impl MockLatencyModel {
    pub fn new(fixed_overhead_ms: u64, ms_per_token: f64) -> Result<Self, ValidationError> {
        if !(ms_per_token > 0.0 && ms_per_token.is_finite()) {
            return Err(ValidationError::Config(format!(
                "ms_per_token must be positive, got {ms_per_token}"
            )));
        }
        Ok(Self {
            fixed_overhead_ms,
            ms_per_token,
        })
    }

    pub fn fixed_overhead_ms(&self) -> u64 {
        self.fixed_overhead_ms
    }

    pub fn ms_per_token(&self) -> f64 {
        self.ms_per_token
    }

    pub fn latency_ms(&self, output_tokens: u32) -> u64 {
        self.fixed_overhead_ms + (output_tokens as f64 * self.ms_per_token).round() as u64
    }
}

impl Default for MockLatencyModel {
    fn default() -> Self {
        Self {
            fixed_overhead_ms: 500,
            ms_per_token: 50.0,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawLatency {
    #[serde(default = "default_overhead")]
    fixed_overhead_ms: u64,
    #[serde(default = "default_slope")]
    ms_per_token: f64,
}

fn default_overhead() -> u64 {
    500
}

fn default_slope() -> f64 {
    50.0
}

impl TryFrom<RawLatency> for MockLatencyModel {
    type Error = ValidationError;

    fn try_from(raw: RawLatency) -> Result<Self, Self::Error> {
        Self::new(raw.fixed_overhead_ms, raw.ms_per_token)
    }
}

impl From<MockLatencyModel> for RawLatency {
    fn from(m: MockLatencyModel) -> Self {
        RawLatency {
            fixed_overhead_ms: m.fixed_overhead_ms,
            ms_per_token: m.ms_per_token,
        }
    }
}

/// What the mock saw for one describe call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedRequest {
    pub role: PromptRole,
    pub max_output_tokens: u32,
    pub prompt: String,
}

/// Deterministic stand-in for the VLM, the embedder and the LLM.
#[derive(Debug, Default)]
pub struct MockBackend {
    latency: MockLatencyModel,
    log: Option<Mutex<Vec<RecordedRequest>>>,
}

impl MockBackend {
    pub fn new(latency: MockLatencyModel) -> Self {
        Self { latency, log: None }
    }

    /// A mock that also keeps every describe request it receives.
    pub fn recording(latency: MockLatencyModel) -> Self {
        Self {
            latency,
            log: Some(Mutex::new(Vec::new())),
        }
    }

    pub fn latency_model(&self) -> &MockLatencyModel {
        &self.latency
    }

    pub fn recorded_requests(&self) -> Vec<RecordedRequest> {
        self.log
            .as_ref()
            .map(|l| l.lock().expect("request log poisoned").clone())
            .unwrap_or_default()
    }

    fn usage(&self, prompt: &str, output_tokens: u32) -> ModelUsage {
        ModelUsage {
            prompt_tokens: count_tokens(prompt),
            output_tokens,
            latency_ms: self.latency.latency_ms(output_tokens),
        }
    }
}

impl VisionModel for MockBackend {
    fn describe(&self, req: &DescribeRequest) -> Result<Generation, BackendError> {
        if req.max_output_tokens == 0 {
            return Err(BackendError::BudgetInvalid(0));
        }
        if let Some(log) = &self.log {
            log.lock()
                .expect("request log poisoned")
                .push(RecordedRequest {
                    role: req.prompt.role,
                    max_output_tokens: req.max_output_tokens,
                    prompt: req.prompt.text.clone(),
                });
        }
        let full = mock_narrative(&req.detections, &req.prompt);
        let (text, output_tokens) = truncate_tokens(&full, req.max_output_tokens);
        Ok(Generation {
            usage: self.usage(&req.prompt.text, output_tokens),
            text,
        })
    }
}

impl Embedder for MockBackend {
    fn dimension(&self) -> usize {
        MOCK_EMBEDDING_DIM
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        hashed_embedding(text)
    }
}

impl LanguageModel for MockBackend {
    fn complete(&self, prompt: &str, max_output_tokens: u32) -> Result<Generation, BackendError> {
        if max_output_tokens == 0 {
            return Err(BackendError::BudgetInvalid(0));
        }
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyText);
        }
        let full = mock_answer(prompt);
        let (text, output_tokens) = truncate_tokens(&full, max_output_tokens);
        Ok(Generation {
            usage: self.usage(prompt, output_tokens),
            text,
        })
    }
}

/// Whitespace token count.
pub fn count_tokens(text: &str) -> u32 {
    text.split_whitespace().count() as u32
}

fn truncate_tokens(text: &str, budget: u32) -> (String, u32) {
    let tokens: Vec<&str> = text.split_whitespace().take(budget as usize).collect();
    (tokens.join(" "), tokens.len() as u32)
}

/// Lowercased alphanumeric words.
fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn mentions(context_words: &[String], label: &str) -> bool {
    let label_words = words(label);
    !label_words.is_empty()
        && context_words
            .windows(label_words.len())
            .any(|w| w == label_words.as_slice())
}

/// Detections in narrative order: by label, then box centre.
fn narrative_order(detections: &[Detection]) -> Vec<(&str, i64, i64)> {
    let mut items: Vec<(&str, i64, i64)> = detections
        .iter()
        .map(|d| {
            let (cx, cy) = d.bbox().center();
            (d.label(), cx.round() as i64, cy.round() as i64)
        })
        .collect();
    items.sort();
    items
}

/// The mock's full (untruncated) narrative.
///
/// Full prompts get one sentence per detection. Follow-up prompts get
/// sentences only for detections whose label the bracketed context does not
/// already mention.
pub fn mock_narrative(detections: &[Detection], prompt: &PromptText) -> String {
    let items = narrative_order(detections);
    match prompt.role {
        PromptRole::Base | PromptRole::Baseline => {
            if items.is_empty() {
                return "The road is empty with no visible objects.".to_owned();
            }
            items
                .iter()
                .map(|(label, cx, cy)| format!("A {label} is visible near ({cx},{cy})."))
                .collect::<Vec<_>>()
                .join(" ")
        }
        PromptRole::Followup => {
            let context = words(prompt.followup_context().unwrap_or(""));
            let fresh: Vec<String> = items
                .iter()
                .filter(|(label, _, _)| !mentions(&context, label))
                .map(|(label, cx, cy)| format!("Undetected {label} at ({cx},{cy})."))
                .collect();
            if fresh.is_empty() {
                "Nothing further.".to_owned()
            } else {
                fresh.join(" ")
            }
        }
    }
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// L2-normalized hashed term-frequency vector of dimension 256 over the
/// non-stopword terms (all terms when every one is a stopword).
pub fn hashed_embedding(text: &str) -> Result<Vec<f64>, BackendError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(BackendError::EmptyText);
    }
    let all = words(trimmed);
    let mut tokens: Vec<String> = all
        .iter()
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .cloned()
        .collect();
    if tokens.is_empty() {
        tokens = all;
    }
    if tokens.is_empty() {
        tokens.push(trimmed.to_owned());
    }
    let mut v = vec![0.0; MOCK_EMBEDDING_DIM];
    for t in &tokens {
        v[(fnv1a(t.as_bytes()) % MOCK_EMBEDDING_DIM as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

const STOPWORDS: &[&str] = &[
    "a", "about", "all", "an", "and", "any", "are", "as", "at", "be", "by", "can", "did", "do",
    "does", "for", "from", "has", "have", "how", "i", "if", "in", "is", "it", "its", "many", "me",
    "of", "on", "or", "some", "than", "that", "the", "their", "there", "these", "they", "this",
    "to", "was", "were", "what", "when", "where", "which", "who", "with",
];

fn content_terms(text: &str) -> HashSet<String> {
    words(text)
        .into_iter()
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

fn is_timestamp_header(line: &str) -> bool {
    let line = line.trim();
    let Some(stamp) = line.strip_suffix(':') else {
        return false;
    };
    let parts: Vec<&str> = stamp.trim().split(':').collect();
    parts.len() == 3
        && parts
            .iter()
            .all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_digit()))
}

fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        let ends = matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace());
        if ends {
            let s = current.trim();
            if !s.is_empty() {
                out.push(s.to_owned());
            }
            current.clear();
        }
    }
    let s = current.trim();
    if !s.is_empty() {
        out.push(s.to_owned());
    }
    out
}

/// Splits an answer prompt into (context, question). Prompts without the
/// `Context:`/`Question:` frame are treated as a bare question.
fn parse_answer_prompt(prompt: &str) -> (&str, &str) {
    let Some(q_at) = prompt.rfind("Question:") else {
        return ("", prompt);
    };
    let question = prompt[q_at + "Question:".len()..]
        .lines()
        .next()
        .unwrap_or("")
        .trim();
    let context = prompt[..q_at]
        .trim_start()
        .strip_prefix("Context:")
        .unwrap_or(&prompt[..q_at]);
    (context, question)
}

/// The mock LLM answers with the context sentence(s) sharing the most
/// content terms with the question.
pub fn mock_answer(prompt: &str) -> String {
    let (context, question) = parse_answer_prompt(prompt);
    let terms = content_terms(question);
    let sentences: Vec<String> = context
        .lines()
        .filter(|l| !is_timestamp_header(l))
        .flat_map(split_sentences)
        .collect();

    let scored: Vec<(usize, &String)> = sentences
        .iter()
        .map(|s| (content_terms(s).intersection(&terms).count(), s))
        .collect();
    let best = scored.iter().map(|(n, _)| *n).max().unwrap_or(0);
    if best == 0 {
        return NO_ANSWER.to_owned();
    }
    let mut picked: Vec<&str> = Vec::new();
    for (n, s) in &scored {
        if *n == best && !picked.contains(&s.as_str()) {
            picked.push(s);
        }
    }
    format!("Yes, {}", lowercase_lead(&picked.join(" ")))
}

/// Lowercases a leading capital unless the first word is an acronym.
fn lowercase_lead(s: &str) -> String {
    let first_word = s.split_whitespace().next().unwrap_or("");
    let acronym = first_word.chars().filter(|c| c.is_alphabetic()).count() > 1
        && first_word
            .chars()
            .filter(|c| c.is_alphabetic())
            .all(char::is_uppercase);
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if !acronym => c.to_lowercase().chain(chars).collect(),
        _ => s.to_owned(),
    }
}

/// Client for an OpenAI-compatible server (`/v1/chat/completions`,
/// `/v1/embeddings`).
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    token: Option<String>,
    model: String,
    embedding_model: String,
    dimension: usize,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(
        endpoint: &str,
        token: Option<String>,
        model: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        let model = model.into();
        Ok(Self {
            base_url: normalize_base(endpoint),
            token,
            embedding_model: model.clone(),
            model,
            dimension: MOCK_EMBEDDING_DIM,
            client,
        })
    }

    /// Endpoint and token from `CROSSCAM_ENDPOINT` / `CROSSCAM_API_KEY`.
    pub fn from_env(model: impl Into<String>, timeout: Duration) -> Result<Self, BackendError> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| BackendError::Unreachable(format!("{ENDPOINT_ENV} is not set")))?;
        Self::new(&endpoint, std::env::var(TOKEN_ENV).ok(), model, timeout)
    }

    pub fn with_embedding_model(mut self, model: impl Into<String>, dimension: usize) -> Self {
        self.embedding_model = model.into();
        self.dimension = dimension;
        self
    }

    fn post(
        &self,
        path: &str,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, BackendError> {
        let mut req = self
            .client
            .post(format!("{}{path}", self.base_url))
            .json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))
    }

    fn chat(
        &self,
        content: serde_json::Value,
        max_tokens: u32,
    ) -> Result<Generation, BackendError> {
        if max_tokens == 0 {
            return Err(BackendError::BudgetInvalid(0));
        }
        let body = json!({
            "model": self.model,
            "max_tokens": max_tokens,
            "messages": [{"role": "user", "content": content}],
        });
        let started = Instant::now();
        let value = self.post("/v1/chat/completions", &body)?;
        let latency_ms = started.elapsed().as_millis() as u64;
        let parsed: ChatResponse =
            serde_json::from_value(value).map_err(|e| BackendError::Malformed(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Malformed("no choices".into()))?;
        let text = choice.message.content.unwrap_or_default();
        let usage = parsed.usage.unwrap_or_default();
        Ok(Generation {
            usage: ModelUsage {
                prompt_tokens: usage.prompt_tokens,
                output_tokens: usage.completion_tokens.min(max_tokens),
                latency_ms,
            },
            text,
        })
    }
}

fn normalize_base(endpoint: &str) -> String {
    let trimmed = endpoint.trim_end_matches('/');
    trimmed
        .strip_suffix("/v1/chat/completions")
        .or_else(|| trimmed.strip_suffix("/v1"))
        .unwrap_or(trimmed)
        .to_owned()
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

/// URL for the `image_url` content part. Local files are inlined as base64
/// data URLs; remote and data URLs pass through.
pub fn image_url_for(media_ref: &str) -> Result<String, BackendError> {
    if ["http://", "https://", "data:"]
        .iter()
        .any(|p| media_ref.starts_with(p))
    {
        return Ok(media_ref.to_owned());
    }
    let path = Path::new(media_ref);
    let bytes = std::fs::read(path)
        .map_err(|e| BackendError::Malformed(format!("cannot read {media_ref}: {e}")))?;
    let mime = match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/jpeg",
    };
    Ok(format!(
        "data:{mime};base64,{}",
        base64::engine::general_purpose::STANDARD.encode(bytes)
    ))
}

impl VisionModel for HttpBackend {
    fn describe(&self, req: &DescribeRequest) -> Result<Generation, BackendError> {
        let media = req.media_ref.as_deref().ok_or(BackendError::MissingMedia)?;
        let content = json!([
            {"type": "text", "text": req.prompt.text},
            {"type": "image_url", "image_url": {"url": image_url_for(media)?}},
        ]);
        self.chat(content, req.max_output_tokens)
    }
}

impl LanguageModel for HttpBackend {
    fn complete(&self, prompt: &str, max_output_tokens: u32) -> Result<Generation, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyText);
        }
        self.chat(json!([{"type": "text", "text": prompt}]), max_output_tokens)
    }
}

impl Embedder for HttpBackend {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyText);
        }
        let value = self.post(
            "/v1/embeddings",
            &json!({"model": self.embedding_model, "input": text}),
        )?;
        let parsed: EmbeddingResponse =
            serde_json::from_value(value).map_err(|e| BackendError::Malformed(e.to_string()))?;
        let mut v = parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| BackendError::Malformed("no embedding returned".into()))?;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(BackendError::Malformed("degenerate embedding".into()));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

/// Running totals over recorded model calls.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageLedger {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    pub usages: Vec<ModelUsage>,
}

impl UsageLedger {
    pub fn record_call(&mut self, usage: ModelUsage) {
        self.calls += 1;
        self.prompt_tokens += u64::from(usage.prompt_tokens);
        self.output_tokens += u64::from(usage.output_tokens);
        self.latency_ms += usage.latency_ms;
        self.usages.push(usage);
    }

    pub fn avg_output_tokens(&self) -> Option<f64> {
        (self.calls > 0).then(|| self.output_tokens as f64 / self.calls as f64)
    }
}

impl Extend<ModelUsage> for UsageLedger {
    fn extend<T: IntoIterator<Item = ModelUsage>>(&mut self, iter: T) {
        iter.into_iter().for_each(|u| self.record_call(u));
    }
}

#[cfg(test)]
mod tests {
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::thread;

    use super::*;
    use crate::prompt::{base_prompt, followup_prompt, AccumulationPolicy};
    use crate::types::BoundingBox;

    fn det(label: &str, x: f64, y: f64) -> Detection {
        Detection::new(
            label,
            BoundingBox::new(x, y, x + 20.0, y + 10.0).unwrap(),
            0.9,
        )
        .unwrap()
    }

    fn describe(dets: Vec<Detection>, prompt: PromptText, budget: u32) -> Generation {
        MockBackend::default()
            .describe(&DescribeRequest {
                media_ref: None,
                detections: dets,
                prompt,
                max_output_tokens: budget,
            })
            .unwrap()
    }

    #[test]
    fn mock_base_narrative_golden() {
        let g = describe(
            vec![det("person", 100.0, 40.0), det("car", 10.0, 20.0)],
            base_prompt(),
            80,
        );
        assert_eq!(
            g.text,
            "A car is visible near (20,25). A person is visible near (110,45)."
        );
        assert_eq!(g.usage.output_tokens, 12);
        assert_eq!(g.usage.prompt_tokens, 4);
        assert_eq!(g.usage.latency_ms, 500 + 12 * 50);
    }

    #[test]
    fn mock_minimum_budget() {
        let g = describe(vec![det("car", 0.0, 0.0)], base_prompt(), 1);
        assert_eq!(g.usage.output_tokens, 1);
        assert_eq!(g.usage.latency_ms, 550);
        let err = MockBackend::default().describe(&DescribeRequest {
            media_ref: None,
            detections: vec![],
            prompt: base_prompt(),
            max_output_tokens: 0,
        });
        assert_eq!(err, Err(BackendError::BudgetInvalid(0)));
    }

    #[test]
    fn mock_followup_skips_mentioned_labels() {
        let prompt = followup_prompt(
            "A car is visible near (20,25). A traffic light is visible near (1,1).",
            &AccumulationPolicy::default(),
        )
        .unwrap();
        let g = describe(
            vec![
                det("car", 0.0, 0.0),
                det("traffic light", 5.0, 5.0),
                det("dog", 50.0, 50.0),
            ],
            prompt.clone(),
            32,
        );
        assert_eq!(g.text, "Undetected dog at (60,55).");
        let g = describe(vec![det("car", 0.0, 0.0)], prompt, 32);
        assert_eq!(g.text, "Nothing further.");
    }

    #[test]
    fn mock_truncates_at_budget() {
        let dets: Vec<_> = (0..40).map(|i| det("car", i as f64 * 10.0, 0.0)).collect();
        let g = describe(dets, base_prompt(), 80);
        assert_eq!(g.usage.output_tokens, 80);
        assert_eq!(count_tokens(&g.text), 80);
    }

    #[test]
    fn embedding_is_normalized_and_deterministic() {
        let m = MockBackend::default();
        let a = m.embed("white SUV").unwrap();
        assert_eq!(a, m.embed("white SUV").unwrap());
        assert_eq!(a.len(), 256);
        for text in ["white SUV", "!!!", "a a a a b", "Ünïcode tëxt"] {
            let v = m.embed(text).unwrap();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9, "{text}");
        }
        assert_eq!(m.embed("   "), Err(BackendError::EmptyText));
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn mock_answer_rules() {
        let prompt = "Context:\n00:07:23 :\nA black SUV drives past. A white SUV is parked on the side.\n\nQuestion: Is there any white SUV?\nAnswer using only the context.";
        let g = MockBackend::default().complete(prompt, 256).unwrap();
        assert_eq!(g.text, "Yes, a white SUV is parked on the side.");

        let prompt = "Context:\n00:00:00 :\nA bus is visible.\n\nQuestion: Is there any white SUV?\nAnswer using only the context.";
        assert_eq!(
            MockBackend::default().complete(prompt, 256).unwrap().text,
            NO_ANSWER
        );
        assert_eq!(
            MockBackend::default()
                .complete("Is there a dog?", 256)
                .unwrap()
                .text,
            NO_ANSWER
        );
    }

    #[test]
    fn acronym_lead_is_kept() {
        assert_eq!(lowercase_lead("SUV parked."), "SUV parked.");
        assert_eq!(lowercase_lead("A car."), "a car.");
    }

    #[test]
    fn ledger_totals() {
        let mut l = UsageLedger::default();
        assert_eq!(l.avg_output_tokens(), None);
        l.record_call(ModelUsage {
            prompt_tokens: 3,
            output_tokens: 10,
            latency_ms: 7,
        });
        assert_eq!(
            (l.calls, l.prompt_tokens, l.output_tokens, l.latency_ms),
            (1, 3, 10, 7)
        );
        l.extend([20, 30].map(|o| ModelUsage {
            output_tokens: o,
            ..Default::default()
        }));
        assert_eq!(l.avg_output_tokens(), Some(20.0));
    }

    /// Serves one canned HTTP response and returns the raw request.
    fn serve_once(
        status: &'static str,
        body: &'static str,
    ) -> (String, thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let handle = thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            loop {
                let n = stream.read(&mut chunk).unwrap();
                buf.extend_from_slice(&chunk[..n]);
                let text = String::from_utf8_lossy(&buf);
                if let Some(h) = text.find("\r\n\r\n") {
                    let len = text[..h]
                        .lines()
                        .find_map(|l| {
                            l.to_ascii_lowercase()
                                .strip_prefix("content-length:")
                                .map(|v| v.trim().parse::<usize>().unwrap())
                        })
                        .unwrap_or(0);
                    if buf.len() >= h + 4 + len {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            let resp = format!(
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
            String::from_utf8_lossy(&buf).into_owned()
        });
        (addr, handle)
    }

    #[test]
    fn http_describe_sends_subset_and_reads_usage() {
        let (addr, server) = serve_once(
            "200 OK",
            r#"{"id":"x","choices":[{"index":0,"message":{"role":"assistant","content":"A red car."}}],"usage":{"prompt_tokens":12,"completion_tokens":4}}"#,
        );
        let backend =
            HttpBackend::new(&addr, Some("secret".into()), "vlm", Duration::from_secs(5)).unwrap();
        let g = backend
            .describe(&DescribeRequest {
                media_ref: Some("data:image/jpeg;base64,AAAA".into()),
                detections: vec![],
                prompt: base_prompt(),
                max_output_tokens: 80,
            })
            .unwrap();
        assert_eq!(g.text, "A red car.");
        assert_eq!((g.usage.prompt_tokens, g.usage.output_tokens), (12, 4));
        let raw = server.join().unwrap();
        assert!(raw.starts_with("POST /v1/chat/completions"));
        assert!(raw
            .to_ascii_lowercase()
            .contains("authorization: bearer secret"));
        let body: serde_json::Value =
            serde_json::from_str(&raw[raw.find("\r\n\r\n").unwrap() + 4..]).unwrap();
        assert_eq!(body["model"], "vlm");
        assert_eq!(body["max_tokens"], 80);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"][0]["type"], "text");
        assert_eq!(
            body["messages"][0]["content"][0]["text"],
            "Compose a descriptive narrative."
        );
        assert_eq!(body["messages"][0]["content"][1]["type"], "image_url");
        assert_eq!(
            body["messages"][0]["content"][1]["image_url"]["url"],
            "data:image/jpeg;base64,AAAA"
        );
    }

    #[test]
    fn http_error_status_carries_body() {
        let (addr, server) = serve_once("500 Internal Server Error", r#"{"error":"boom"}"#);
        let backend = HttpBackend::new(&addr, None, "llm", Duration::from_secs(5)).unwrap();
        let err = backend.complete("hello", 16).unwrap_err();
        assert_eq!(
            err,
            BackendError::Status {
                status: 500,
                body: r#"{"error":"boom"}"#.into()
            }
        );
        server.join().unwrap();
    }

    #[test]
    fn http_timeout_is_unreachable() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let hold = thread::spawn(move || {
            let conn = listener.accept();
            thread::sleep(Duration::from_millis(800));
            drop(conn);
        });
        let backend = HttpBackend::new(&addr, None, "llm", Duration::from_millis(200)).unwrap();
        assert!(matches!(
            backend.complete("hello", 16),
            Err(BackendError::Unreachable(_))
        ));
        hold.join().unwrap();
    }

    #[test]
    fn http_requires_media() {
        let backend = HttpBackend::new(
            "http://127.0.0.1:9",
            None,
            "vlm",
            Duration::from_millis(200),
        )
        .unwrap();
        let err = backend.describe(&DescribeRequest {
            media_ref: None,
            detections: vec![],
            prompt: base_prompt(),
            max_output_tokens: 8,
        });
        assert_eq!(err, Err(BackendError::MissingMedia));
    }

    #[test]
    fn endpoint_normalization() {
        assert_eq!(normalize_base("http://h:1/"), "http://h:1");
        assert_eq!(normalize_base("http://h:1/v1"), "http://h:1");
        assert_eq!(
            normalize_base("http://h:1/v1/chat/completions"),
            "http://h:1"
        );
    }

    #[test]
    fn embedding_ignores_stopwords() {
        assert_eq!(
            hashed_embedding("Is there a backpack?").unwrap(),
            hashed_embedding("backpack").unwrap()
        );
        assert_eq!(
            hashed_embedding("is it")
                .unwrap()
                .iter()
                .filter(|x| **x > 0.0)
                .count(),
            2
        );
    }
}
