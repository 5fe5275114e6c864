use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{word_count, SummaryRound, SynthError};
use crate::corpus::{chunk_text, Document, TextChunk, TokenizerSpec};
use crate::llm::{
    bindings, render_prompt, CallKind, ChatRequest, Decoding, LlmError, LlmGateway, TemplateName, NO_RELEVANT_INFO,
    QFS_WORD_CAP,
};

/// Smallest accepted recursion budget.
pub const MIN_QFS_BUDGET: usize = 512;

const SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QfsConfig {
    pub chunk_tokens: usize,
    /// Stop once the concatenated summaries fit in this many tokens.
    pub budget_tokens: usize,
    /// Rounds to run even when the input already fits the budget.
    pub min_rounds: usize,
    /// On a round that fails to shrink the text, truncate to the budget and
    /// stop (with a warning) instead of failing.
    pub truncate_on_stall: bool,
    pub decoding: Decoding,
}

impl Default for QfsConfig {
    fn default() -> Self {
        Self {
            chunk_tokens: 4096,
            budget_tokens: 8192,
            min_rounds: 0,
            truncate_on_stall: true,
            decoding: Decoding { temperature: 0.0, max_tokens: 600 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QfsSummary {
    pub text: String,
    pub words: usize,
    /// More words than the prompt allows. Kept, but reported.
    pub over_cap: bool,
    /// The backend answered with the no-information sentinel.
    pub no_info: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QfsOutcome {
    pub context: String,
    pub context_tokens: usize,
    pub rounds: Vec<SummaryRound>,
    pub warnings: Vec<String>,
}

impl QfsOutcome {
    pub fn over_cap(&self) -> usize {
        self.rounds.iter().map(|r| r.over_cap).sum()
    }
}

fn is_sentinel(text: &str) -> bool {
    text.trim().trim_matches('"').eq_ignore_ascii_case(NO_RELEVANT_INFO)
}

/// One query-focused summarization call over a single chunk.
pub fn qfs_summarize_chunk(
    chunk: &TextChunk,
    query: &str,
    gateway: &LlmGateway,
    cfg: &QfsConfig,
) -> Result<QfsSummary, SynthError> {
    if chunk.token_count > cfg.chunk_tokens {
        return Err(SynthError::ChunkTooLarge { tokens: chunk.token_count, max: cfg.chunk_tokens });
    }
    let prompt = render_prompt(TemplateName::Qfs, &bindings([("context", chunk.text.as_str()), ("query", query)]))
        .map_err(LlmError::from)?;
    let req = ChatRequest::new(prompt, cfg.decoding.temperature, cfg.decoding.max_tokens);
    let text = gateway.complete(CallKind::Qfs, req)?.response.trim().to_owned();
    let words = word_count(&text);
    Ok(QfsSummary { no_info: is_sentinel(&text), over_cap: words > QFS_WORD_CAP, words, text })
}

/// Summarizes `docs` with respect to `query` until the concatenated summaries
/// fit in `cfg.budget_tokens`.
///
/// Round 0 chunks every document; later rounds re-chunk the previous round's
/// concatenation. No-information replies are left out of the concatenation
/// (if every reply is one, the context is the sentinel itself). A round
/// that does not strictly shrink the text ends the recursion.
pub fn recursive_qfs(
    docs: &[Document],
    query: &str,
    gateway: &LlmGateway,
    tok: &TokenizerSpec,
    cfg: &QfsConfig,
) -> Result<QfsOutcome, SynthError> {
    if cfg.budget_tokens < MIN_QFS_BUDGET {
        return Err(SynthError::InvalidBudget(cfg.budget_tokens));
    }
    if docs.is_empty() {
        return Err(SynthError::EmptyContext);
    }
    let joined = docs.iter().map(|d| d.text.as_str()).collect::<Vec<_>>().join(SEPARATOR);
    let mut current_tokens = tok.count(&joined);
    if cfg.min_rounds == 0 && current_tokens <= cfg.budget_tokens {
        return Ok(QfsOutcome {
            context: joined,
            context_tokens: current_tokens,
            rounds: Vec::new(),
            warnings: Vec::new(),
        });
    }

    let mut inputs = Vec::new();
    for doc in docs {
        for mut chunk in doc.chunks(cfg.chunk_tokens, tok)? {
            if chunk.token_count > 0 {
                chunk.parent_id = doc.id.clone();
                inputs.push(chunk);
            }
        }
    }

    let mut rounds = Vec::new();
    let mut warnings = Vec::new();
    loop {
        if inputs.is_empty() {
            return Err(SynthError::EmptyContext);
        }
        let round_index = rounds.len();
        let summaries =
            inputs.par_iter().map(|c| qfs_summarize_chunk(c, query, gateway, cfg)).collect::<Result<Vec<_>, _>>()?;
        let kept: Vec<&str> = summaries.iter().filter(|s| !s.no_info).map(|s| s.text.as_str()).collect();
        let mut text = if kept.is_empty() { NO_RELEVANT_INFO.to_owned() } else { kept.join(SEPARATOR) };
        let out_tokens = tok.count(&text);
        rounds.push(SummaryRound {
            round_index,
            total_input_tokens: inputs.iter().map(|c| c.token_count).sum(),
            total_output_tokens: out_tokens,
            over_cap: summaries.iter().filter(|s| s.over_cap).count(),
            outputs: summaries.into_iter().map(|s| s.text).collect(),
            inputs: std::mem::take(&mut inputs),
        });

        if out_tokens <= cfg.budget_tokens && rounds.len() >= cfg.min_rounds {
            return Ok(QfsOutcome { context: text, context_tokens: out_tokens, rounds, warnings });
        }
        if out_tokens >= current_tokens {
            if !cfg.truncate_on_stall {
                return Err(SynthError::NonDecreasing {
                    round: round_index,
                    before: current_tokens,
                    after: out_tokens,
                });
            }
            warnings.push(format!(
                "QFS round {round_index} did not shrink the text ({current_tokens} -> {out_tokens} tokens); truncated to {}",
                cfg.budget_tokens
            ));
            log::warn!("{}", warnings.last().expect("just pushed"));
            text = tok.truncate(&text, cfg.budget_tokens).to_owned();
            let context_tokens = tok.count(&text);
            return Ok(QfsOutcome { context: text, context_tokens, rounds, warnings });
        }
        current_tokens = out_tokens;
        inputs = chunk_text(&text, cfg.chunk_tokens, tok)?
            .into_iter()
            .filter(|c| c.token_count > 0)
            .map(|c| TextChunk { parent_id: format!("round-{round_index}"), ..c })
            .collect();
    }
}
