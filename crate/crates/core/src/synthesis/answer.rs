use rand::seq::SliceRandom;

use super::SynthError;
use crate::llm::{
    bindings, render_prompt, CallKind, ChatRequest, Decoding, LlmError, LlmGateway, TemplateName, ANSWER_WORD_LIMITS,
};
use crate::seed;

/// Uniform draw from the answer prompt's word-limit options.
pub fn draw_word_limit(seed: u64) -> u32 {
    let mut rng = seed::rng(seed::derive_named(seed, "word-limit"));
    *ANSWER_WORD_LIMITS.choose(&mut rng).expect("non-empty")
}

/// Renders the answer prompt over the (summarized) context and calls the
/// backend once.
pub fn generate_answer(
    context: &str,
    query: &str,
    word_limit: u32,
    gateway: &LlmGateway,
    decoding: &Decoding,
) -> Result<String, SynthError> {
    if !ANSWER_WORD_LIMITS.contains(&word_limit) {
        return Err(SynthError::InvalidWordLimit(word_limit));
    }
    let limit = word_limit.to_string();
    let prompt = render_prompt(
        TemplateName::AnswerGeneration,
        &bindings([("context", context), ("query", query), ("word_limit", limit.as_str())]),
    )
    .map_err(LlmError::from)?;
    let req = ChatRequest::new(prompt, decoding.temperature, decoding.max_tokens);
    let answer = gateway.complete(CallKind::AnswerGeneration, req)?.response.trim().to_owned();
    if answer.is_empty() {
        return Err(SynthError::EmptyResponse("answer"));
    }
    Ok(answer)
}
