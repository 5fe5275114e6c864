//! The synthesis workflow: instruction generation, multi-query retrieval,
//! recursive query-focused summarization and answer generation for
//! long-input samples; instruction back-translation for long-output samples;
//! and the same workflow used directly as a long-context task solver.

mod answer;
mod assemble;
mod backtranslate;
mod instruction;
mod pipeline;
mod qfs;
mod solve;

pub use answer::{draw_word_limit, generate_answer};
pub use assemble::{assemble_long_input, sample_n_docs, ContextAssembly, MAX_CONTEXT_DOCS};
pub use backtranslate::{backtranslate_document, draw_word_budget, BacktranslateConfig};
pub use instruction::{draw_knobs, generate_instruction, InstructionConfig};
pub use pipeline::{
    synthesize_from_instruction, synthesize_long_input_batch, synthesize_long_input_sample, BatchOutcome, SkipRecord,
    SynthConfig, SynthContext,
};
pub use qfs::{qfs_summarize_chunk, recursive_qfs, QfsConfig, QfsOutcome, QfsSummary, MIN_QFS_BUDGET};
pub use solve::{solve_with_workflow, SolveConfig, SolveOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Document, TextChunk};
use crate::llm::{LedgerSnapshot, LlmError};
use crate::retrieval::RetrievalError;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("QFS budget must be at least 512 tokens, got {0}")]
    InvalidBudget(usize),
    #[error("QFS round {round} did not shrink the text ({before} -> {after} tokens)")]
    NonDecreasing { round: usize, before: usize, after: usize },
    #[error("context document count must lie in [1, {MAX_CONTEXT_DOCS}], got {0}")]
    InvalidDocCount(usize),
    #[error("retrieved document {0:?} is not in the corpus")]
    UnknownDocument(String),
    #[error("document {id:?} has {tokens} tokens, outside [{min}, {max}]")]
    OutOfRange { id: String, tokens: usize, min: usize, max: usize },
    #[error("context is empty")]
    EmptyContext,
    #[error("instruction generation gave no valid JSON after {attempts} attempts: {last}")]
    InstructionFailed { attempts: u32, last: String },
    #[error("chunk has {tokens} tokens, above the {max}-token summarization limit")]
    ChunkTooLarge { tokens: usize, max: usize },
    #[error("word limit {0} is not one of the template's options")]
    InvalidWordLimit(u32),
    #[error("backend returned an empty {0}")]
    EmptyResponse(&'static str),
}

/// The prompt option values drawn for one instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Knobs {
    pub task_type: String,
    pub education_level: String,
    pub reasoning_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub task_instruction: String,
    pub search_queries: Vec<String>,
    pub seed_chunk_id: String,
    /// Token offset of the prepended chunk inside its document.
    pub seed_chunk_offset: usize,
    pub knobs: Knobs,
}

/// One pass of query-focused summarization over a list of chunks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRound {
    pub round_index: usize,
    pub inputs: Vec<TextChunk>,
    pub outputs: Vec<String>,
    pub total_input_tokens: usize,
    /// Tokens of the concatenated summaries carried to the next step
    /// (no-information sentinels excluded).
    pub total_output_tokens: usize,
    pub over_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongInputMeta {
    pub sample_index: u64,
    pub seed: u64,
    pub knobs: Knobs,
    pub search_queries: Vec<String>,
    pub seed_chunk_id: String,
    /// Retrieved ids in fused rank order.
    pub relevant_ids: Vec<String>,
    /// Ids of `context_docs`, in the same order.
    pub context_doc_ids: Vec<String>,
    pub distractor_ids: Vec<String>,
    /// Where distractors were drawn from; always "corpus".
    pub distractor_source: String,
    pub n_docs_requested: usize,
    pub relevant_truncated: bool,
    pub word_limit: u32,
    pub qfs_rounds: usize,
    pub qfs_round_output_tokens: Vec<usize>,
    pub over_cap_summaries: usize,
    pub calls: LedgerSnapshot,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Instruction + retrieved/distractor documents → response. Intermediate
/// summaries are deliberately not part of the sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongInputSample {
    pub instruction: String,
    pub context_documents: Vec<String>,
    pub response: String,
    pub meta: LongInputMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongOutputMeta {
    pub doc_id: String,
    pub seed: u64,
    pub token_count: usize,
    pub prompt_truncated: bool,
    pub calls: LedgerSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongOutputSample {
    pub instruction: String,
    pub target_document: Document,
    pub instruction_word_budget: u32,
    pub meta: LongOutputMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    LongInput,
    LongOutput,
}

/// One line of the synthesis output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub kind: SampleKind,
    pub instruction: String,
    pub context_docs: Vec<String>,
    pub response: String,
    pub meta: serde_json::Value,
}

impl From<&LongInputSample> for SampleRecord {
    fn from(s: &LongInputSample) -> Self {
        SampleRecord {
            kind: SampleKind::LongInput,
            instruction: s.instruction.clone(),
            context_docs: s.context_documents.clone(),
            response: s.response.clone(),
            meta: serde_json::to_value(&s.meta).expect("meta serializes"),
        }
    }
}

impl From<&LongOutputSample> for SampleRecord {
    fn from(s: &LongOutputSample) -> Self {
        let mut meta = serde_json::to_value(&s.meta).expect("meta serializes");
        meta["instruction_word_budget"] = s.instruction_word_budget.into();
        SampleRecord {
            kind: SampleKind::LongOutput,
            instruction: s.instruction.clone(),
            context_docs: Vec::new(),
            response: s.target_document.text.clone(),
            meta,
        }
    }
}

/// Independent whitespace word count used for summary/answer word caps.
pub(crate) fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
