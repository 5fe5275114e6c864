use serde::{Deserialize, Serialize};

use super::answer::generate_answer;
use super::qfs::{recursive_qfs, QfsConfig};
use super::SynthError;
use crate::corpus::{chunk_text, Document, TokenizerSpec};
use crate::llm::{Decoding, LedgerSnapshot, LlmGateway};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub chunk_tokens: usize,
    pub qfs: QfsConfig,
    pub word_limit: u32,
    pub answer: Decoding,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            chunk_tokens: 4096,
            qfs: QfsConfig { min_rounds: 1, ..QfsConfig::default() },
            word_limit: 300,
            answer: Decoding { temperature: 0.0, max_tokens: 1024 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveOutcome {
    pub answer: String,
    pub chunks: usize,
    pub rounds: usize,
    pub calls: LedgerSnapshot,
    pub warnings: Vec<String>,
}

/// Answers `query` over a long `context` using only short-context calls: the
/// context is chunked, the chunks stand in for retrieved documents, and the
/// usual summarize-then-answer steps follow.
pub fn solve_with_workflow(
    context: &str,
    query: &str,
    gateway: &LlmGateway,
    tok: &TokenizerSpec,
    cfg: &SolveConfig,
) -> Result<SolveOutcome, SynthError> {
    if context.trim().is_empty() {
        return Err(SynthError::EmptyContext);
    }
    let gateway = gateway.scoped();
    let docs: Vec<Document> = chunk_text(context, cfg.chunk_tokens, tok)?
        .into_iter()
        .filter(|c| c.token_count > 0)
        .map(|c| Document {
            id: format!("chunk-{}", c.index),
            text: c.text,
            source: String::new(),
            token_count: c.token_count,
        })
        .collect();
    let qfs_cfg = QfsConfig { chunk_tokens: cfg.chunk_tokens, ..cfg.qfs.clone() };
    let qfs = recursive_qfs(&docs, query, &gateway, tok, &qfs_cfg)?;
    let answer = generate_answer(&qfs.context, query, cfg.word_limit, &gateway, &cfg.answer)?;
    Ok(SolveOutcome {
        answer,
        chunks: docs.len(),
        rounds: qfs.rounds.len(),
        calls: gateway.ledger().snapshot(),
        warnings: qfs.warnings,
    })
}
