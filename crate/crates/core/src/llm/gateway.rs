//! Backend abstraction, retrying gateway, call accounting and exchange logs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::LlmError;
use crate::retry::{CallError, InFlightLimiter, RetryPolicy};

/// A rendered prompt plus decoding knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Sampling seed forwarded to the backend; mocks are pure functions of
    /// `(prompt, seed)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(prompt: impl Into<String>, temperature: f64, max_tokens: u32) -> Self {
        Self { prompt: prompt.into(), temperature, max_tokens, seed: None }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

pub trait LlmBackend: Send + Sync {
    fn id(&self) -> &str;
    fn chat(&self, req: &ChatRequest) -> Result<String, CallError>;

    /// True when the backend never touches the network.
    fn is_offline(&self) -> bool {
        false
    }
}

/// Which workflow step issued a call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    InstructionGeneration,
    Qfs,
    AnswerGeneration,
    Backtranslation,
    NeedleProbe,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub total_calls: u64,
    /// Backend attempts, including retries.
    pub attempts: u64,
    pub failed_calls: u64,
    pub per_kind: BTreeMap<CallKind, u64>,
}

#[derive(Debug, Default)]
struct LedgerState {
    attempts: u64,
    failed: u64,
    per_kind: BTreeMap<CallKind, u64>,
}

/// Per-run call counters. A child ledger forwards every record to its parent,
/// so a per-sample ledger and the process-wide one stay consistent.
#[derive(Debug, Default)]
pub struct CallLedger {
    state: Mutex<LedgerState>,
    parent: Option<Arc<CallLedger>>,
}

impl CallLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn child(parent: &Arc<CallLedger>) -> Self {
        Self { state: Mutex::default(), parent: Some(parent.clone()) }
    }

    pub fn record(&self, kind: CallKind, attempts: u32, ok: bool) {
        {
            let mut s = self.state.lock().unwrap_or_else(|p| p.into_inner());
            *s.per_kind.entry(kind).or_default() += 1;
            s.attempts += u64::from(attempts);
            if !ok {
                s.failed += 1;
            }
        }
        if let Some(p) = &self.parent {
            p.record(kind, attempts, ok);
        }
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let s = self.state.lock().unwrap_or_else(|p| p.into_inner());
        LedgerSnapshot {
            total_calls: s.per_kind.values().sum(),
            attempts: s.attempts,
            failed_calls: s.failed,
            per_kind: s.per_kind.clone(),
        }
    }

    pub fn total(&self) -> u64 {
        self.snapshot().total_calls
    }
}

/// One completed request/response pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub kind: CallKind,
    pub request: ChatRequest,
    pub response: String,
    pub attempt_count: u32,
    pub backend_id: String,
}

/// In-memory exchange recorder, written out as JSONL in a stable order.
#[derive(Debug, Default)]
pub struct ExchangeLog {
    entries: Mutex<Vec<LlmExchange>>,
}

impl ExchangeLog {
    pub fn push(&self, ex: LlmExchange) {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).push(ex);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries sorted by (kind, prompt, seed); concurrent calls finish in
    /// arbitrary order, so arrival order is not reproducible.
    pub fn sorted(&self) -> Vec<LlmExchange> {
        let mut v = self.entries.lock().unwrap_or_else(|p| p.into_inner()).clone();
        v.sort_by(|a, b| (a.kind, &a.request.prompt, a.request.seed).cmp(&(b.kind, &b.request.prompt, b.request.seed)));
        v
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for ex in self.sorted() {
            serde_json::to_writer(&mut out, &ex)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read_jsonl(path: &Path) -> std::io::Result<Vec<LlmExchange>> {
        let reader = BufReader::new(File::open(path)?);
        let mut out = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self { retry: RetryPolicy::default(), max_in_flight: 8 }
    }
}

/// Entry point for every LLM call: bounds concurrency, retries transient
/// failures and records each call in the ledger.
#[derive(Clone)]
pub struct LlmGateway {
    backend: Arc<dyn LlmBackend>,
    retry: RetryPolicy,
    limiter: Arc<InFlightLimiter>,
    ledger: Arc<CallLedger>,
    log: Option<Arc<ExchangeLog>>,
}

impl LlmGateway {
    pub fn new(backend: Arc<dyn LlmBackend>, cfg: &GatewayConfig) -> Self {
        Self {
            backend,
            retry: cfg.retry.clone(),
            limiter: Arc::new(InFlightLimiter::new(cfg.max_in_flight)),
            ledger: Arc::new(CallLedger::new()),
            log: None,
        }
    }

    /// Gateway over a mock: no backoff sleeps, three attempts.
    pub fn offline(backend: Arc<dyn LlmBackend>) -> Self {
        Self::new(backend, &GatewayConfig { retry: RetryPolicy::immediate(3), max_in_flight: 8 })
    }

    pub fn with_log(mut self, log: Arc<ExchangeLog>) -> Self {
        self.log = Some(log);
        self
    }

    /// Shares backend, limiter and log, but counts calls in a fresh child
    /// ledger that also feeds this gateway's ledger.
    pub fn scoped(&self) -> LlmGateway {
        LlmGateway { ledger: Arc::new(CallLedger::child(&self.ledger)), ..self.clone() }
    }

    pub fn ledger(&self) -> &Arc<CallLedger> {
        &self.ledger
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn is_offline(&self) -> bool {
        self.backend.is_offline()
    }

    /// Sends `req`, retrying transient failures per the policy. Each
    /// invocation counts as exactly one call regardless of retries.
    pub fn complete(&self, kind: CallKind, req: ChatRequest) -> Result<LlmExchange, LlmError> {
        let (result, attempts) = {
            let _permit = self.limiter.acquire();
            self.retry.run(|_| self.backend.chat(&req))
        };
        self.ledger.record(kind, attempts, result.is_ok());
        match result {
            Ok(response) => {
                let ex = LlmExchange {
                    kind,
                    request: req,
                    response,
                    attempt_count: attempts,
                    backend_id: self.backend.id().to_owned(),
                };
                if let Some(log) = &self.log {
                    log.push(ex.clone());
                }
                Ok(ex)
            }
            Err(e) if e.retryable => Err(LlmError::Exhausted { attempts, last: e.message }),
            Err(e) => Err(LlmError::Fatal(e.message)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::mock::{EchoBackend, FlakyBackend};

    fn gw(backend: Arc<dyn LlmBackend>, attempts: u32) -> LlmGateway {
        LlmGateway::new(backend, &GatewayConfig { retry: RetryPolicy::immediate(attempts), max_in_flight: 2 })
    }

    #[test]
    fn echo_returns_prompt() {
        let g = gw(Arc::new(EchoBackend), 3);
        let ex = g.complete(CallKind::Other, ChatRequest::new("hello", 0.0, 16)).unwrap();
        assert_eq!(ex.response, "hello");
        assert_eq!(ex.attempt_count, 1);
        assert_eq!(ex.backend_id, "mock-echo");
    }

    #[test]
    fn retries_until_success() {
        let g = gw(Arc::new(FlakyBackend::new(2, Arc::new(EchoBackend))), 3);
        let ex = g.complete(CallKind::Qfs, ChatRequest::new("x", 0.0, 16)).unwrap();
        assert_eq!(ex.attempt_count, 3);
        let snap = g.ledger().snapshot();
        assert_eq!(snap.total_calls, 1);
        assert_eq!(snap.attempts, 3);
    }

    #[test]
    fn exhausts_attempts() {
        let g = gw(Arc::new(FlakyBackend::new(3, Arc::new(EchoBackend))), 2);
        let err = g.complete(CallKind::Qfs, ChatRequest::new("x", 0.0, 16)).unwrap_err();
        assert!(matches!(err, LlmError::Exhausted { attempts: 2, .. }));
        assert_eq!(g.ledger().snapshot().failed_calls, 1);
    }

    #[test]
    fn fatal_errors_are_immediate() {
        let g = gw(Arc::new(FlakyBackend::fatal()), 5);
        let err = g.complete(CallKind::Other, ChatRequest::new("x", 0.0, 16)).unwrap_err();
        assert!(matches!(err, LlmError::Fatal(_)));
        assert_eq!(g.ledger().snapshot().attempts, 1);
    }

    #[test]
    fn scoped_ledger_feeds_parent() {
        let g = gw(Arc::new(EchoBackend), 1);
        let s1 = g.scoped();
        let s2 = g.scoped();
        s1.complete(CallKind::Qfs, ChatRequest::new("a", 0.0, 1)).unwrap();
        s1.complete(CallKind::AnswerGeneration, ChatRequest::new("b", 0.0, 1)).unwrap();
        s2.complete(CallKind::Qfs, ChatRequest::new("c", 0.0, 1)).unwrap();
        assert_eq!(s1.ledger().total(), 2);
        assert_eq!(s2.ledger().total(), 1);
        let parent = g.ledger().snapshot();
        assert_eq!(parent.total_calls, 3);
        assert_eq!(parent.per_kind[&CallKind::Qfs], 2);
        assert_eq!(parent.total_calls, parent.per_kind.values().sum::<u64>());
    }

    #[test]
    fn exchange_log_round_trip() {
        let log = Arc::new(ExchangeLog::default());
        let g = gw(Arc::new(EchoBackend), 1).with_log(log.clone());
        g.complete(CallKind::Qfs, ChatRequest::new("b", 0.0, 1).with_seed(2)).unwrap();
        g.complete(CallKind::Qfs, ChatRequest::new("a", 0.0, 1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ex.jsonl");
        log.write_jsonl(&path).unwrap();
        let back = ExchangeLog::read_jsonl(&path).unwrap();
        assert_eq!(back, log.sorted());
        assert_eq!(back[0].request.prompt, "a");
    }
}
