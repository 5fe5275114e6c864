use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{LongOutputMeta, LongOutputSample, SynthError};
use crate::corpus::{Document, TokenizerSpec};
use crate::llm::{
    bindings, render_prompt, CallKind, ChatRequest, Decoding, LlmError, LlmGateway, TemplateName,
    BACKTRANSLATION_WORD_BUDGETS,
};
use crate::seed;

const OMISSION_MARK: &str = "\n\n...\n\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktranslateConfig {
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Document tokens shown in the prompt; longer documents lose their
    /// middle.
    pub prompt_doc_tokens: usize,
    pub decoding: Decoding,
}

impl Default for BacktranslateConfig {
    fn default() -> Self {
        Self {
            min_tokens: 2048,
            max_tokens: 32_768,
            prompt_doc_tokens: 12_000,
            decoding: Decoding { temperature: 0.0, max_tokens: 512 },
        }
    }
}

pub fn draw_word_budget(seed: u64) -> u32 {
    let mut rng = seed::rng(seed::derive_named(seed, "word-budget"));
    *BACKTRANSLATION_WORD_BUDGETS.choose(&mut rng).expect("non-empty")
}

/// Keeps the first and last halves of the token budget, joined by an
/// omission mark. Returns the text and whether anything was dropped.
fn middle_truncate<'a>(text: &'a str, max_tokens: usize, tok: &TokenizerSpec) -> (std::borrow::Cow<'a, str>, bool) {
    if tok.count(text) <= max_tokens {
        return (text.into(), false);
    }
    let head = tok.truncate(text, max_tokens - max_tokens / 2);
    let tail = tok.tail(text, max_tokens / 2);
    (format!("{}{OMISSION_MARK}{}", head.trim_end(), tail.trim_start()).into(), true)
}

/// Asks the backend for the instruction that would have produced `doc`; the
/// sample pairs that instruction with the full, untruncated document.
pub fn backtranslate_document(
    doc: &Document,
    gateway: &LlmGateway,
    tok: &TokenizerSpec,
    seed: u64,
    cfg: &BacktranslateConfig,
) -> Result<LongOutputSample, SynthError> {
    if !(cfg.min_tokens..=cfg.max_tokens).contains(&doc.token_count) {
        return Err(SynthError::OutOfRange {
            id: doc.id.clone(),
            tokens: doc.token_count,
            min: cfg.min_tokens,
            max: cfg.max_tokens,
        });
    }
    let gateway = gateway.scoped();
    let budget = draw_word_budget(seed);
    let (shown, prompt_truncated) = middle_truncate(&doc.text, cfg.prompt_doc_tokens, tok);
    let budget_s = budget.to_string();
    let count_s = doc.token_count.to_string();
    let prompt = render_prompt(
        TemplateName::Backtranslation,
        &bindings([
            ("document", shown.as_ref()),
            ("word_budget", budget_s.as_str()),
            ("token_count", count_s.as_str()),
        ]),
    )
    .map_err(LlmError::from)?;
    let req = ChatRequest::new(prompt, cfg.decoding.temperature, cfg.decoding.max_tokens).with_seed(seed);
    let instruction = gateway.complete(CallKind::Backtranslation, req)?.response.trim().to_owned();
    if instruction.is_empty() {
        return Err(SynthError::EmptyResponse("instruction"));
    }
    Ok(LongOutputSample {
        instruction,
        target_document: doc.clone(),
        instruction_word_budget: budget,
        meta: LongOutputMeta {
            doc_id: doc.id.clone(),
            seed,
            token_count: doc.token_count,
            prompt_truncated,
            calls: gateway.ledger().snapshot(),
        },
    })
}
