use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{InstructionRecord, Knobs, SynthError};
use crate::corpus::Corpus;
use crate::llm::{
    bindings, extract_json_payload, render_prompt, CallKind, ChatRequest, Decoding, LlmGateway, TemplateName,
    EDUCATION_LEVELS, INSTRUCTION_SCHEMA, REASONING_TYPES, TASK_TYPES,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstructionConfig {
    /// Size of the random chunk prepended to the prompt.
    pub seed_chunk_tokens: usize,
    /// Extra generations after malformed JSON before the sample is dropped.
    pub json_regenerations: u32,
    pub decoding: Decoding,
}

impl Default for InstructionConfig {
    fn default() -> Self {
        Self {
            seed_chunk_tokens: 128,
            json_regenerations: 2,
            decoding: Decoding { temperature: 1.0, max_tokens: 1024 },
        }
    }
}

/// Uniform draw of (task/question, education level, reasoning type).
pub fn draw_knobs(seed: u64) -> Knobs {
    let mut rng = seed::rng(seed::derive_named(seed, "knobs"));
    let pick = |opts: &[&str], rng: &mut seed::Rng| (*opts.choose(rng).expect("non-empty")).to_owned();
    Knobs {
        task_type: pick(&TASK_TYPES, &mut rng),
        education_level: pick(&EDUCATION_LEVELS, &mut rng),
        reasoning_type: pick(&REASONING_TYPES, &mut rng),
    }
}

/// Samples a seed chunk and knob values, asks the backend for an
/// instruction, and validates the JSON reply. Malformed output is
/// regenerated up to `cfg.json_regenerations` times with a fresh seed.
pub fn generate_instruction(
    corpus: &Corpus,
    gateway: &LlmGateway,
    seed: u64,
    cfg: &InstructionConfig,
) -> Result<InstructionRecord, SynthError> {
    let chunk = corpus.sample_random_chunk(cfg.seed_chunk_tokens, seed::derive_named(seed, "seed-chunk"))?;
    let knobs = draw_knobs(seed);
    let prompt = render_prompt(
        TemplateName::InstructionGeneration,
        &bindings([
            ("random_text_chunk", chunk.text.as_str()),
            ("task_type", knobs.task_type.as_str()),
            ("education_level", knobs.education_level.as_str()),
            ("reasoning_type", knobs.reasoning_type.as_str()),
        ]),
    )
    .map_err(crate::llm::LlmError::from)?;

    let attempts = cfg.json_regenerations + 1;
    let mut last = String::new();
    for attempt in 0..attempts {
        let req = ChatRequest::new(prompt.clone(), cfg.decoding.temperature, cfg.decoding.max_tokens)
            .with_seed(seed::derive(seed, u64::from(attempt)));
        let ex = gateway.complete(CallKind::InstructionGeneration, req)?;
        match extract_json_payload(&ex.response, Some(&INSTRUCTION_SCHEMA)) {
            Ok(v) => {
                let task_instruction = v["task_instruction"].as_str().expect("validated").trim().to_owned();
                let search_queries: Vec<String> = v["search_queries"]
                    .as_array()
                    .expect("validated")
                    .iter()
                    .filter_map(|q| q.as_str())
                    .map(|q| q.trim().to_owned())
                    .filter(|q| !q.is_empty())
                    .collect();
                if task_instruction.is_empty() || search_queries.is_empty() {
                    last = "empty instruction or queries".into();
                    continue;
                }
                return Ok(InstructionRecord {
                    task_instruction,
                    search_queries,
                    seed_chunk_id: chunk.parent_id,
                    seed_chunk_offset: chunk.index,
                    knobs,
                });
            }
            Err(e) if e.is_output_error() => {
                log::debug!("instruction attempt {attempt} rejected: {e}");
                last = e.to_string();
            }
            Err(e) => return Err(e.into()),
        }
    }
    Err(SynthError::InstructionFailed { attempts, last })
}
