//! Long-context instruction data synthesis.
//!
//! A short-context LLM, a dense retriever and a document corpus are combined
//! to produce long-input samples (instruction generation, multi-query
//! retrieval, recursive query-focused summarization, answer generation) and
//! long-output samples (instruction back-translation). Around that core sit
//! training-mixture assembly and packing, progressive context-extension
//! plans, and long-context evaluation utilities.

pub mod config;
pub mod corpus;
pub mod evalbench;
pub mod llm;
pub mod mixpack;
pub mod retrieval;
pub mod retry;
pub mod seed;
pub mod synthesis;
pub mod trainplan;

pub use corpus::{chunk_text, count_tokens, Corpus, CorpusHandle, Document, TextChunk, TokenizerSpec};
pub use llm::{CallKind, CallLedger, ChatRequest, LlmBackend, LlmGateway};
pub use retrieval::{EmbeddingBackend, EmbeddingVector, RetrievalResult, VectorIndex};
