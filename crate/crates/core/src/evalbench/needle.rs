use std::collections::HashMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::{Corpus, TokenizerSpec};
use crate::llm::{CallKind, ChatRequest, LlmGateway};
use crate::seed;

pub const DEFAULT_NEEDLE: &str =
    "The best thing to do in San Francisco is eat a sandwich and sit in Dolores Park on a sunny day.";
pub const DEFAULT_QUESTION: &str = "What is the best thing to do in San Francisco?";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeedleConfig {
    pub needle: String,
    pub question: String,
    pub max_new_tokens: u32,
}

impl Default for NeedleConfig {
    fn default() -> Self {
        Self { needle: DEFAULT_NEEDLE.into(), question: DEFAULT_QUESTION.into(), max_new_tokens: 128 }
    }
}

/// 16k-token steps up to `max_len`: 64 lengths for a 1M model.
pub fn default_lengths(max_len: usize) -> Vec<usize> {
    (1..=max_len / 16_384).map(|i| i * 16_384).collect()
}

/// `n` depths evenly spaced over [0, 1], both ends included.
pub fn default_depths(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Filler text assembled once from an essay corpus, with sentence starts
/// indexed by token offset.
pub struct Haystack {
    text: String,
    spans: Vec<Range<usize>>,
    /// (token offset, byte offset) of each sentence start after the first.
    boundaries: Vec<(usize, usize)>,
    tok: TokenizerSpec,
}

impl Haystack {
    /// Concatenates the essays in a seeded order. Fails if `needle` already
    /// occurs in the result.
    pub fn build(essays: &Corpus, needle: &str, seed: u64) -> Result<Self, EvalError> {
        if needle.trim().is_empty() {
            return Err(EvalError::EmptyNeedle);
        }
        let mut order: Vec<usize> = (0..essays.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive_named(seed, "haystack")));
        let text = order.iter().map(|&i| essays.documents()[i].text.trim()).collect::<Vec<_>>().join("\n\n");
        if text.contains(needle) {
            return Err(EvalError::NeedleInHaystack);
        }
        let tok = essays.tokenizer().clone();
        let spans = tok.token_spans(&text);
        let re = Regex::new(r"[.?!]\s+").expect("static regex");
        let boundaries = re
            .find_iter(&text)
            .map(|m| (spans.partition_point(|s| s.start < m.end()), m.end()))
            .filter(|&(t, _)| t < spans.len())
            .collect();
        Ok(Self { text, spans, boundaries, tok })
    }

    pub fn tokens(&self) -> usize {
        self.spans.len()
    }

    pub fn tokenizer(&self) -> &TokenizerSpec {
        &self.tok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeedleCase {
    pub context: String,
    pub needle: String,
    pub question: String,
    pub context_len: usize,
    pub depth_fraction: f64,
    /// Tokens preceding the needle.
    pub needle_token_offset: usize,
    pub context_tokens: usize,
}

impl NeedleCase {
    pub fn prompt(&self) -> String {
        format!("{}\n\n{}", self.context, self.question)
    }
}

/// Takes `context_len − |needle|` haystack tokens and inserts the needle at
/// the sentence start nearest `depth · prefix_len` (the very start and end
/// of the prefix also count).
pub fn build_needle_case(
    hay: &Haystack,
    context_len: usize,
    depth_fraction: f64,
    cfg: &NeedleConfig,
) -> Result<NeedleCase, EvalError> {
    if !(0.0..=1.0).contains(&depth_fraction) {
        return Err(EvalError::InvalidDepth(depth_fraction));
    }
    if cfg.needle.trim().is_empty() {
        return Err(EvalError::EmptyNeedle);
    }
    let needle_tokens = hay.tok.count(&cfg.needle);
    if context_len <= needle_tokens {
        return Err(EvalError::ContextTooShort(context_len));
    }
    let prefix_tokens = context_len - needle_tokens;
    if prefix_tokens > hay.spans.len() {
        return Err(EvalError::InsufficientCorpus {
            available: hay.spans.len() + needle_tokens,
            requested: context_len,
        });
    }
    let prefix_end = hay.spans[prefix_tokens - 1].end;
    let prefix = &hay.text[..prefix_end];

    let target = (depth_fraction * prefix_tokens as f64).round() as usize;
    let inner = &hay.boundaries[..hay.boundaries.partition_point(|&(t, _)| t < prefix_tokens)];
    let mut best = (0usize, 0usize);
    let mut consider = |cand: (usize, usize)| {
        if cand.0.abs_diff(target) < best.0.abs_diff(target) {
            best = cand;
        }
    };
    let i = inner.partition_point(|&(t, _)| t < target);
    if i > 0 {
        consider(inner[i - 1]);
    }
    if let Some(&b) = inner.get(i) {
        consider(b);
    }
    consider((prefix_tokens, prefix_end));
    let (needle_token_offset, at) = best;

    let mut context = String::with_capacity(prefix.len() + cfg.needle.len() + 1);
    if at == prefix_end {
        context.push_str(prefix);
        context.push(' ');
        context.push_str(&cfg.needle);
    } else {
        context.push_str(&prefix[..at]);
        context.push_str(&cfg.needle);
        context.push(' ');
        context.push_str(&prefix[at..]);
    }
    let context_tokens = hay.tok.count(&context);
    Ok(NeedleCase {
        context,
        needle: cfg.needle.clone(),
        question: cfg.question.clone(),
        context_len,
        depth_fraction,
        needle_token_offset,
        context_tokens,
    })
}

fn normalize(word: &str) -> String {
    word.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

/// Share of the needle's words found in `output`: both sides are split on
/// whitespace, lower-cased and stripped of punctuation, and each needle
/// word counts at most as often as it occurs in the needle.
pub fn needle_recall(needle: &str, output: &str) -> f64 {
    let mut wanted: HashMap<String, usize> = HashMap::new();
    for w in needle.split_whitespace().map(normalize).filter(|w| !w.is_empty()) {
        *wanted.entry(w).or_default() += 1;
    }
    let total: usize = wanted.values().sum();
    if total == 0 {
        return 0.0;
    }
    let mut remaining = total;
    let mut owned;
    for raw in output.split_whitespace() {
        let key: &str = if raw.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit()) {
            raw
        } else {
            owned = normalize(raw);
            &owned
        };
        if let Some(left) = wanted.get_mut(key) {
            if *left > 0 {
                *left -= 1;
                remaining -= 1;
                if remaining == 0 {
                    break;
                }
            }
        }
    }
    (total - remaining) as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub length: usize,
    pub depth: f64,
    /// −1 when the case or the model call failed.
    pub recall: f64,
    pub needle_token_offset: Option<usize>,
    pub context_tokens: Option<usize>,
    pub needle_count: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeedleGrid {
    pub lengths: Vec<usize>,
    pub depths: Vec<f64>,
    /// Row-major by (length, depth).
    pub cells: Vec<GridCell>,
}

impl NeedleGrid {
    pub fn score(&self, length_index: usize, depth_index: usize) -> f64 {
        self.cells[length_index * self.depths.len() + depth_index].recall
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.cells.chunks(self.depths.len()).map(|row| row.iter().map(|c| c.recall).collect()).collect()
    }

    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| EvalError::Csv(e.to_string());
        w.write_record(["length", "depth", "recall"]).map_err(err)?;
        for c in &self.cells {
            w.write_record([c.length.to_string(), c.depth.to_string(), c.recall.to_string()]).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Csv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// One probe per (length, depth). Cells run in parallel under the gateway's
/// in-flight limit; results come back in grid order.
pub fn run_needle_grid(
    gateway: &LlmGateway,
    hay: &Haystack,
    lengths: &[usize],
    depths: &[f64],
    cfg: &NeedleConfig,
) -> Result<NeedleGrid, EvalError> {
    if lengths.is_empty() || depths.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if let Some(&d) = depths.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        return Err(EvalError::InvalidDepth(d));
    }
    let grid: Vec<(usize, f64)> = lengths.iter().flat_map(|&l| depths.iter().map(move |&d| (l, d))).collect();
    let cells = grid
        .par_iter()
        .map(|&(length, depth)| {
            let failed = |e: String| GridCell {
                length,
                depth,
                recall: -1.0,
                needle_token_offset: None,
                context_tokens: None,
                needle_count: None,
                error: Some(e),
            };
            let case = match build_needle_case(hay, length, depth, cfg) {
                Ok(c) => c,
                Err(e) => return failed(e.to_string()),
            };
            let req = ChatRequest::new(case.prompt(), 0.0, cfg.max_new_tokens);
            match gateway.complete(CallKind::NeedleProbe, req) {
                Ok(ex) => GridCell {
                    length,
                    depth,
                    recall: needle_recall(&case.needle, &ex.response),
                    needle_token_offset: Some(case.needle_token_offset),
                    context_tokens: Some(case.context_tokens),
                    needle_count: Some(case.context.matches(case.needle.as_str()).count()),
                    error: None,
                },
                Err(e) => {
                    log::warn!("needle cell ({length}, {depth}) failed: {e}");
                    failed(e.to_string())
                }
            }
        })
        .collect();
    Ok(NeedleGrid { lengths: lengths.to_vec(), depths: depths.to_vec(), cells })
}
