//! LLM access: prompt templates, backends, retries, call accounting and
//! structured-output extraction.

mod gateway;
mod http;
mod json;
pub mod mock;
mod template;

pub use gateway::{
    CallKind, CallLedger, ChatRequest, ExchangeLog, GatewayConfig, LedgerSnapshot, LlmBackend, LlmExchange, LlmGateway,
};
pub use http::{ChatBackendConfig, HttpChatBackend};
pub use json::{extract_json_payload, JsonKind, JsonSchema, INSTRUCTION_SCHEMA};
pub use template::{
    bindings, render_prompt, Bindings, PromptTemplate, TemplateError, TemplateName, ANSWER_WORD_LIMITS,
    BACKTRANSLATION_WORD_BUDGETS, EDUCATION_LEVELS, NO_RELEVANT_INFO, QFS_WORD_CAP, REASONING_TYPES, TASK_TYPES,
    TEMPLATE_VERSION,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("backend failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("backend error: {0}")]
    Fatal(String),
    #[error("no parseable JSON object in output; regenerate")]
    NoJson,
    #[error("JSON output is missing required key {0:?}")]
    MissingKey(String),
    #[error("JSON key {key:?} has the wrong type (expected {expected})")]
    WrongType { key: String, expected: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl LlmError {
    /// Errors caused by malformed model output, which a fresh sample may fix.
    pub fn is_output_error(&self) -> bool {
        matches!(self, LlmError::NoJson | LlmError::MissingKey(_) | LlmError::WrongType { .. })
    }
}

/// Temperature and output cap for one call kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
}
