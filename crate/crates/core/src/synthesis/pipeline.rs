use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::answer::{draw_word_limit, generate_answer};
use super::assemble::{assemble_long_input, sample_n_docs};
use super::instruction::{generate_instruction, InstructionConfig};
use super::qfs::{recursive_qfs, QfsConfig};
use super::{InstructionRecord, LongInputMeta, LongInputSample, SynthError};
use crate::corpus::{Corpus, Document};
use crate::llm::{Decoding, LlmGateway};
use crate::retrieval::{
    dedup_by_embedding, retrieve_for_instruction, EmbedConfig, EmbeddingBackend, VectorIndex, DEFAULT_DEDUP_THRESHOLD,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub instruction: InstructionConfig,
    pub qfs: QfsConfig,
    pub answer: Decoding,
    pub embed: EmbedConfig,
    /// Hits taken per search query before fusion.
    pub per_query_k: usize,
    /// Relevant documents kept after fusion.
    pub top_k: usize,
    pub n_docs_min: usize,
    pub n_docs_max: usize,
    pub dedup_threshold: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            instruction: InstructionConfig::default(),
            qfs: QfsConfig { min_rounds: 1, ..QfsConfig::default() },
            answer: Decoding { temperature: 0.0, max_tokens: 1024 },
            embed: EmbedConfig::default(),
            per_query_k: 5,
            top_k: 5,
            n_docs_min: 1,
            n_docs_max: 100,
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
        }
    }
}

/// Everything a sample needs besides its seed.
#[derive(Clone, Copy)]
pub struct SynthContext<'a> {
    pub corpus: &'a Corpus,
    pub index: &'a VectorIndex,
    pub embedder: &'a dyn EmbeddingBackend,
    pub gateway: &'a LlmGateway,
}

/// Why a sample index produced no output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub sample_index: u64,
    pub seed: u64,
    pub stage: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    /// In sample-index order.
    pub samples: Vec<LongInputSample>,
    pub skipped: Vec<SkipRecord>,
    pub instructions_generated: usize,
    pub instructions_kept: usize,
}

/// Retrieval → QFS over the relevant documents → answer → context assembly
/// for an already generated instruction. Call counts in the meta come from
/// `ctx.gateway`'s ledger, so pass a scoped gateway to get per-sample counts.
pub fn synthesize_from_instruction(
    ctx: &SynthContext<'_>,
    rec: &InstructionRecord,
    sample_index: u64,
    sample_seed: u64,
    cfg: &SynthConfig,
) -> Result<LongInputSample, SynthError> {
    let relevant = retrieve_for_instruction(rec, ctx.index, ctx.embedder, &cfg.embed, cfg.per_query_k, cfg.top_k)?;
    if relevant.is_empty() {
        return Err(SynthError::EmptyContext);
    }
    let docs: Vec<Document> = relevant
        .ids()
        .into_iter()
        .map(|id| ctx.corpus.get(id).cloned().ok_or_else(|| SynthError::UnknownDocument(id.to_owned())))
        .collect::<Result<_, _>>()?;

    let qfs = recursive_qfs(&docs, &rec.task_instruction, ctx.gateway, ctx.corpus.tokenizer(), &cfg.qfs)?;
    let word_limit = draw_word_limit(sample_seed);
    let response = generate_answer(&qfs.context, &rec.task_instruction, word_limit, ctx.gateway, &cfg.answer)?;

    let n_docs = sample_n_docs(sample_seed, cfg.n_docs_min, cfg.n_docs_max);
    let assembly = assemble_long_input(&relevant, ctx.corpus, n_docs, sample_seed)?;

    let mut warnings = qfs.warnings.clone();
    warnings.extend(assembly.warnings);
    Ok(LongInputSample {
        instruction: rec.task_instruction.clone(),
        context_documents: assembly.texts,
        response,
        meta: LongInputMeta {
            sample_index,
            seed: sample_seed,
            knobs: rec.knobs.clone(),
            search_queries: rec.search_queries.clone(),
            seed_chunk_id: rec.seed_chunk_id.clone(),
            relevant_ids: relevant.ids().into_iter().map(str::to_owned).collect(),
            context_doc_ids: assembly.doc_ids,
            distractor_ids: assembly.distractor_ids,
            distractor_source: "corpus".into(),
            n_docs_requested: n_docs,
            relevant_truncated: assembly.relevant_truncated,
            word_limit,
            qfs_rounds: qfs.rounds.len(),
            qfs_round_output_tokens: qfs.rounds.iter().map(|r| r.total_output_tokens).collect(),
            over_cap_summaries: qfs.over_cap(),
            calls: ctx.gateway.ledger().snapshot(),
            warnings,
        },
    })
}

/// One sample end to end, seeded by `seed::derive(run_seed, sample_index)`.
/// No instruction dedup happens here; see [`synthesize_long_input_batch`].
pub fn synthesize_long_input_sample(
    ctx: &SynthContext<'_>,
    sample_index: u64,
    run_seed: u64,
    cfg: &SynthConfig,
) -> Result<LongInputSample, SynthError> {
    let sample_seed = seed::derive(run_seed, sample_index);
    let gateway = ctx.gateway.scoped();
    let ctx = SynthContext { gateway: &gateway, ..*ctx };
    let rec = generate_instruction(ctx.corpus, ctx.gateway, sample_seed, &cfg.instruction)?;
    synthesize_from_instruction(&ctx, &rec, sample_index, sample_seed, cfg)
}

fn skip(sample_index: u64, seed: u64, stage: &str, err: &SynthError) -> SkipRecord {
    log::warn!("sample {sample_index} skipped at {stage}: {err}");
    SkipRecord { sample_index, seed, stage: stage.into(), reason: err.to_string() }
}

/// Generates `n` instructions, drops near-duplicate instructions, and runs
/// the rest of the workflow on each survivor. Failing samples are skipped
/// and reported; only an embedding failure during dedup aborts the batch.
pub fn synthesize_long_input_batch(
    ctx: &SynthContext<'_>,
    n: u64,
    run_seed: u64,
    cfg: &SynthConfig,
) -> Result<BatchOutcome, SynthError> {
    struct Pending {
        index: u64,
        seed: u64,
        gateway: LlmGateway,
        rec: InstructionRecord,
    }

    let generated: Vec<Result<Pending, SkipRecord>> = (0..n)
        .into_par_iter()
        .map(|index| {
            let seed = seed::derive(run_seed, index);
            let gateway = ctx.gateway.scoped();
            generate_instruction(ctx.corpus, &gateway, seed, &cfg.instruction)
                .map(|rec| Pending { index, seed, gateway, rec })
                .map_err(|e| skip(index, seed, "instruction", &e))
        })
        .collect();

    let mut out = BatchOutcome::default();
    let mut pending = Vec::new();
    for g in generated {
        match g {
            Ok(p) => pending.push(p),
            Err(s) => out.skipped.push(s),
        }
    }
    out.instructions_generated = pending.len();

    let items: Vec<(String, String)> =
        pending.iter().map(|p| (p.index.to_string(), p.rec.task_instruction.clone())).collect();
    let kept: std::collections::HashSet<String> =
        dedup_by_embedding(&items, ctx.embedder, &cfg.embed, cfg.dedup_threshold)?.into_iter().collect();
    let (pending, dupes): (Vec<Pending>, Vec<Pending>) =
        pending.into_iter().partition(|p| kept.contains(&p.index.to_string()));
    out.instructions_kept = pending.len();
    for d in dupes {
        out.skipped.push(SkipRecord {
            sample_index: d.index,
            seed: d.seed,
            stage: "dedup".into(),
            reason: format!("instruction within cosine {} of an earlier one", cfg.dedup_threshold),
        });
    }

    let results: Vec<Result<LongInputSample, SkipRecord>> = pending
        .par_iter()
        .map(|p| {
            let sctx = SynthContext { gateway: &p.gateway, ..*ctx };
            synthesize_from_instruction(&sctx, &p.rec, p.index, p.seed, cfg)
                .map_err(|e| skip(p.index, p.seed, "synthesis", &e))
        })
        .collect();
    for r in results {
        match r {
            Ok(s) => out.samples.push(s),
            Err(s) => out.skipped.push(s),
        }
    }
    out.skipped.sort_by_key(|s| s.sample_index);
    Ok(out)
}
