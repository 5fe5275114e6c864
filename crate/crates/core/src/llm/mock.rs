//! Offline backends. All of them are pure functions of `(prompt, seed)`
//! (apart from [`FlakyBackend`]'s failure counter), so pipelines driven by
//! them are reproducible.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;

use super::gateway::{ChatRequest, LlmBackend, LlmExchange};
use super::template::NO_RELEVANT_INFO;
use crate::retry::CallError;
use crate::seed;

/// Returns the prompt unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoBackend;

impl LlmBackend for EchoBackend {
    fn id(&self) -> &str {
        "mock-echo"
    }

    fn chat(&self, req: &ChatRequest) -> Result<String, CallError> {
        Ok(req.prompt.clone())
    }

    fn is_offline(&self) -> bool {
        true
    }
}

/// Returns the same reply to every prompt.
#[derive(Debug, Clone)]
pub struct FixedBackend {
    reply: String,
}

impl FixedBackend {
    pub fn new(reply: impl Into<String>) -> Self {
        Self { reply: reply.into() }
    }

    /// A reply sharing no words with the default needle sentence.
    pub fn refusal() -> Self {
        Self::new("Sorry, I cannot answer that.")
    }
}

impl LlmBackend for FixedBackend {
    fn id(&self) -> &str {
        "mock-fixed"
    }

    fn chat(&self, _req: &ChatRequest) -> Result<String, CallError> {
        Ok(self.reply.clone())
    }

    fn is_offline(&self) -> bool {
        true
    }
}

type Script = dyn Fn(&ChatRequest) -> Result<String, CallError> + Send + Sync;

/// Backend defined by a closure.
pub struct FnBackend {
    id: String,
    f: Box<Script>,
}

impl FnBackend {
    pub fn new<F>(id: impl Into<String>, f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, CallError> + Send + Sync + 'static,
    {
        Self { id: id.into(), f: Box::new(f) }
    }
}

impl LlmBackend for FnBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn chat(&self, req: &ChatRequest) -> Result<String, CallError> {
        (self.f)(req)
    }

    fn is_offline(&self) -> bool {
        true
    }
}

/// Fails the first `failures` calls (transiently, or fatally when built with
/// [`FlakyBackend::fatal`]) and then delegates.
pub struct FlakyBackend {
    remaining: AtomicU32,
    fatal: bool,
    inner: Arc<dyn LlmBackend>,
}

impl FlakyBackend {
    pub fn new(failures: u32, inner: Arc<dyn LlmBackend>) -> Self {
        Self { remaining: AtomicU32::new(failures), fatal: false, inner }
    }

    pub fn fatal() -> Self {
        Self { remaining: AtomicU32::new(u32::MAX), fatal: true, inner: Arc::new(EchoBackend) }
    }
}

impl LlmBackend for FlakyBackend {
    fn id(&self) -> &str {
        "mock-flaky"
    }

    fn chat(&self, req: &ChatRequest) -> Result<String, CallError> {
        let failing = self.remaining.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)).is_ok();
        match (failing, self.fatal) {
            (true, true) => Err(CallError::fatal("HTTP 400: rejected")),
            (true, false) => Err(CallError::transient("HTTP 503: unavailable")),
            _ => self.inner.chat(req),
        }
    }

    fn is_offline(&self) -> bool {
        true
    }
}

/// Replays responses from a recorded exchange log, keyed by (prompt, seed).
pub struct ReplayBackend {
    table: HashMap<(String, Option<u64>), String>,
}

impl ReplayBackend {
    pub fn new(exchanges: impl IntoIterator<Item = LlmExchange>) -> Self {
        Self { table: exchanges.into_iter().map(|ex| ((ex.request.prompt, ex.request.seed), ex.response)).collect() }
    }
}

impl LlmBackend for ReplayBackend {
    fn id(&self) -> &str {
        "replay"
    }

    fn chat(&self, req: &ChatRequest) -> Result<String, CallError> {
        self.table
            .get(&(req.prompt.clone(), req.seed))
            .cloned()
            .ok_or_else(|| CallError::fatal("prompt not present in replay log"))
    }

    fn is_offline(&self) -> bool {
        true
    }
}

/// Template-aware scripted backend used for dry runs and tests.
///
/// * instruction prompts: a fenced JSON object built from words of the
///   prepended chunk;
/// * summarization prompts: the context sentences sharing a word (4+ chars)
///   with the query, capped at `summary_words`, or the no-information
///   sentinel;
/// * answer prompts: the query followed by context words up to the word
///   limit;
/// * back-translation prompts: a writing instruction quoting the document
///   opening;
/// * anything else: echo.
#[derive(Debug, Clone)]
pub struct PipelineMock {
    pub summary_words: usize,
}

impl Default for PipelineMock {
    fn default() -> Self {
        Self { summary_words: 120 }
    }
}

const INSTRUCTION_MARKER: &str = "\n\n# Brainstorm a potentially useful ";
const QFS_MARKER: &str = "You are a professional and faithful query-focused summarization system.";
const ANSWER_MARKER: &str = "You are a professional annotator.";
const BACKTRANSLATION_MARKER: &str = "You are required to reverse engineer the writing instruction";

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let s = text.find(start)? + start.len();
    let e = s + text[s..].find(end)?;
    Some(&text[s..e])
}

fn number_after(text: &str, prefix: &str) -> Option<usize> {
    let s = text.find(prefix)? + prefix.len();
    text[s..].split_whitespace().next()?.parse().ok()
}

fn keywords(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| w.chars().count() >= 4).map(str::to_lowercase).collect()
}

fn first_words(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

impl PipelineMock {
    pub fn new(summary_words: usize) -> Self {
        Self { summary_words }
    }

    fn instruction(&self, req: &ChatRequest, chunk: &str) -> String {
        let mut words = keywords(chunk);
        words.sort();
        words.dedup();
        if words.is_empty() {
            words = vec!["knowledge".into(), "history".into(), "science".into()];
        }
        let mut rng = seed::rng(seed::fnv1a64(req.prompt.as_bytes()) ^ req.seed.unwrap_or(0));
        let pick: Vec<&String> = (0..3).map(|_| words.choose(&mut rng).expect("non-empty")).collect();
        let value = serde_json::json!({
            "task_instruction": format!(
                "Explain how {} and {} are connected, and what role {} plays in both.",
                pick[0], pick[1], pick[2]
            ),
            "search_queries": [
                format!("{} {}", pick[0], pick[1]),
                format!("{} overview", pick[2]),
                format!("history of {}", pick[0]),
            ],
        });
        format!("```json\n{}\n```", serde_json::to_string_pretty(&value).expect("json"))
    }

    fn summarize(&self, prompt: &str) -> String {
        let context = between(prompt, "## Start of the context\n", "\n## End of the context").unwrap_or("");
        let query = between(prompt, "## Start of the query\n", "\n## End of the query").unwrap_or("");
        let wanted: std::collections::HashSet<String> = keywords(query).into_iter().collect();
        let relevant: Vec<&str> = context
            .split_inclusive(['.', '!', '?', '\n'])
            .filter(|s| keywords(s).iter().any(|w| wanted.contains(w)))
            .collect();
        if relevant.is_empty() {
            return NO_RELEVANT_INFO.to_owned();
        }
        first_words(&relevant.concat(), self.summary_words)
    }

    fn answer(&self, prompt: &str) -> String {
        let context = between(prompt, "## Start of the context\n", "\n## End of the context").unwrap_or("");
        let query = between(prompt, "## Start of the query\n", "\n## End of the query").unwrap_or("");
        let limit = number_after(prompt, "with at most ").unwrap_or(200);
        let budget = limit.saturating_sub(query.split_whitespace().count());
        let body = first_words(context, budget);
        if body.is_empty() {
            query.to_owned()
        } else {
            format!("{query}\n\n{body}")
        }
    }

    fn backtranslate(&self, prompt: &str) -> String {
        let document = between(prompt, "for space reasons)\n", "\n## End of the document").unwrap_or("");
        let budget = number_after(prompt, "instruction with about ").unwrap_or(50);
        let length = number_after(prompt, "led to this ").unwrap_or(0);
        let lead = format!("Write a document of about {length} words that begins with:");
        let quote = first_words(document, budget.saturating_sub(lead.split_whitespace().count()).max(1));
        format!("{lead} {quote}")
    }
}

impl LlmBackend for PipelineMock {
    fn id(&self) -> &str {
        "mock-pipeline"
    }

    fn chat(&self, req: &ChatRequest) -> Result<String, CallError> {
        let p = &req.prompt;
        Ok(if let Some(pos) = p.find(INSTRUCTION_MARKER) {
            self.instruction(req, &p[..pos])
        } else if p.starts_with(QFS_MARKER) {
            self.summarize(p)
        } else if p.starts_with(ANSWER_MARKER) {
            self.answer(p)
        } else if p.starts_with(BACKTRANSLATION_MARKER) {
            self.backtranslate(p)
        } else {
            p.clone()
        })
    }

    fn is_offline(&self) -> bool {
        true
    }
}
