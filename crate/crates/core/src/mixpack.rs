//! Training-mixture construction, loss masking and sequence packing.
//!
//! Long samples (synthetic long-input/long-output, long pretraining-style
//! text) train on every token; short chat samples train on assistant turns
//! only. Packing is greedy first-fit in stream order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::TokenizerSpec;
use crate::seed;

pub const DEFAULT_MAX_LEN: usize = 262_144;

#[derive(Debug, Error)]
pub enum MixError {
    #[error("source {name:?} ({path}): {source}")]
    Source { name: String, path: PathBuf, source: std::io::Error },
    #[error("source {name:?} line {line}: {message}")]
    Malformed { name: String, line: usize, message: String },
    #[error("sample weight for {name:?} must lie in [0, 1], got {weight}")]
    InvalidWeight { name: String, weight: f64 },
    #[error("duplicate source name {0:?}")]
    DuplicateSource(String),
    #[error("mixture spec: {0}")]
    Spec(String),
    #[error("sample {0:?} has no response to train on")]
    MissingResponse(String),
    #[error("max_len must be at least 1")]
    InvalidMaxLen,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    /// Loss over all tokens.
    Long,
    /// Loss over response tokens only.
    Short,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    pub path: PathBuf,
    /// Independent inclusion probability per sample.
    pub sample_weight: f64,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MixtureSpec {
    #[serde(rename = "source")]
    pub sources: Vec<SourceSpec>,
}

impl MixtureSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, MixError> {
        let spec: MixtureSpec = toml::from_str(text).map_err(|e| MixError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, MixError> {
        let text = std::fs::read_to_string(path).map_err(|source| MixError::Io { path: path.into(), source })?;
        let mut spec = Self::from_toml_str(&text)?;
        // Relative source paths are relative to the spec file.
        if let Some(dir) = path.parent() {
            for s in &mut spec.sources {
                if s.path.is_relative() {
                    s.path = dir.join(&s.path);
                }
            }
        }
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("mixture spec serializes")
    }

    pub fn validate(&self) -> Result<(), MixError> {
        let mut names = std::collections::HashSet::new();
        for s in &self.sources {
            if !(0.0..=1.0).contains(&s.sample_weight) {
                return Err(MixError::InvalidWeight { name: s.name.clone(), weight: s.sample_weight });
            }
            if !names.insert(s.name.as_str()) {
                return Err(MixError::DuplicateSource(s.name.clone()));
            }
        }
        Ok(())
    }

    /// The five-source mixture used for the 1M-context models, with files
    /// expected under `dir`.
    pub fn reference(dir: &Path) -> Self {
        let src = |name: &str, file: &str, w: f64, category| SourceSpec {
            name: name.into(),
            path: dir.join(file),
            sample_weight: w,
            category,
        };
        MixtureSpec {
            sources: vec![
                src("synthetic-long-input", "long_input.jsonl", 0.3, Category::Long),
                src("synthetic-long-output", "long_output.jsonl", 1.0, Category::Long),
                src("infinity-instruct", "infinity_instruct.jsonl", 0.3, Category::Short),
                src("tulu-v2", "tulu_v2.jsonl", 1.0, Category::Short),
                src("prolong", "prolong.jsonl", 0.1, Category::Long),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSample {
    pub id: String,
    pub source: String,
    pub category: Category,
    pub turns: Vec<Turn>,
}

#[derive(Deserialize)]
struct ChatMessage {
    role: String,
    content: String,
}

/// Reads one JSONL record in any of the accepted shapes:
/// synthesis output (`instruction`, `context_docs`, `response`), chat
/// (`messages`), or raw text (`text`, treated as a target).
pub fn parse_sample(value: &Value, fallback_id: String, source: &SourceSpec) -> Result<MixSample, String> {
    let id = value.get("id").and_then(Value::as_str).map(str::to_owned).unwrap_or(fallback_id);
    let text_of = |k: &str| value.get(k).and_then(Value::as_str);
    let turns = if let Some(messages) = value.get("messages") {
        let messages: Vec<ChatMessage> = serde_json::from_value(messages.clone()).map_err(|e| e.to_string())?;
        messages
            .into_iter()
            .map(|m| {
                let role = match m.role.as_str() {
                    "system" => Role::System,
                    "user" | "human" => Role::User,
                    "assistant" | "gpt" => Role::Assistant,
                    other => return Err(format!("unknown role {other:?}")),
                };
                Ok(Turn { role, text: m.content })
            })
            .collect::<Result<Vec<_>, _>>()?
    } else if let Some(instruction) = text_of("instruction") {
        let mut prompt = instruction.to_owned();
        if let Some(docs) = value.get("context_docs").and_then(Value::as_array) {
            for d in docs {
                prompt.push_str("\n\n");
                prompt.push_str(d.as_str().ok_or("context_docs must hold strings")?);
            }
        }
        let mut turns = vec![Turn { role: Role::User, text: prompt }];
        if let Some(r) = text_of("response") {
            turns.push(Turn { role: Role::Assistant, text: r.to_owned() });
        }
        turns
    } else if let Some(text) = text_of("text") {
        vec![Turn { role: Role::Assistant, text: text.to_owned() }]
    } else {
        return Err("record has none of messages / instruction / text".into());
    };
    Ok(MixSample { id, source: source.name.clone(), category: source.category, turns })
}

fn read_source(source: &SourceSpec) -> Result<Vec<MixSample>, MixError> {
    let err = |e| MixError::Source { name: source.name.clone(), path: source.path.clone(), source: e };
    let reader = BufReader::new(File::open(&source.path).map_err(err)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(err)?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| MixError::Malformed { name: source.name.clone(), line: i + 1, message };
        let value: Value = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        out.push(parse_sample(&value, format!("{}:{}", source.name, i + 1), source).map_err(malformed)?);
    }
    Ok(out)
}

/// Keeps each sample of each source with probability `sample_weight`, then
/// shuffles everything kept. Deterministic in `seed`.
pub fn build_mixture(spec: &MixtureSpec, seed: u64) -> Result<Vec<MixSample>, MixError> {
    spec.validate()?;
    let mut stream = Vec::new();
    for source in &spec.sources {
        let samples = read_source(source)?;
        stream.extend(select_samples(samples, source.sample_weight, seed::derive_named(seed, &source.name)));
    }
    stream.shuffle(&mut seed::rng(seed::derive_named(seed, "mixture-shuffle")));
    Ok(stream)
}

/// Independent Bernoulli(`weight`) inclusion, in input order.
pub fn select_samples<T>(samples: Vec<T>, weight: f64, seed: u64) -> Vec<T> {
    let mut rng = seed::rng(seed);
    samples.into_iter().filter(|_| rng.gen_bool(weight.clamp(0.0, 1.0))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSegment {
    pub text: String,
    pub loss: bool,
}

/// One segment per non-empty turn. Long samples flag everything; short
/// samples flag assistant turns only.
pub fn make_loss_segments(sample: &MixSample, category: Category) -> Result<Vec<TrainingSegment>, MixError> {
    if !sample.turns.iter().any(|t| t.role == Role::Assistant && !t.text.is_empty()) {
        return Err(MixError::MissingResponse(sample.id.clone()));
    }
    Ok(sample
        .turns
        .iter()
        .filter(|t| !t.text.is_empty())
        .map(|t| TrainingSegment {
            text: t.text.clone(),
            loss: category == Category::Long || t.role == Role::Assistant,
        })
        .collect())
}

/// A sample ready for packing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackInput {
    pub sample_id: String,
    pub segments: Vec<TrainingSegment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSegment {
    pub text: String,
    pub loss: bool,
    pub sample_id: String,
    #[serde(skip)]
    pub tokens: usize,
}

/// A sample cut down to fit on its own.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub sample_id: String,
    pub original_tokens: usize,
    pub kept_tokens: usize,
    pub dropped_loss_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PackedSequence {
    pub segments: Vec<PackedSegment>,
    pub total_tokens: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub truncated: Vec<Truncation>,
}

impl PackedSequence {
    pub fn loss_tokens(&self) -> usize {
        self.segments.iter().filter(|s| s.loss).map(|s| s.tokens).sum()
    }
}

/// Greedy first-fit: each sample goes into the earliest sequence with room
/// for all of it, else a new sequence. A sample longer than `max_len` keeps
/// its first `max_len` tokens, gets a sequence of its own, and is recorded
/// in that sequence's `truncated` list.
pub fn pack_sequences(
    stream: &[PackInput],
    max_len: usize,
    tok: &TokenizerSpec,
) -> Result<Vec<PackedSequence>, MixError> {
    if max_len == 0 {
        return Err(MixError::InvalidMaxLen);
    }
    let mut seqs: Vec<PackedSequence> = Vec::new();
    for input in stream {
        let counted: Vec<PackedSegment> = input
            .segments
            .iter()
            .map(|s| PackedSegment {
                tokens: tok.count(&s.text),
                text: s.text.clone(),
                loss: s.loss,
                sample_id: input.sample_id.clone(),
            })
            .collect();
        let total: usize = counted.iter().map(|s| s.tokens).sum();
        if total > max_len {
            seqs.push(truncate_into_own(input, counted, total, max_len, tok));
            continue;
        }
        match seqs.iter_mut().find(|q| q.truncated.is_empty() && q.total_tokens + total <= max_len) {
            Some(q) => {
                q.total_tokens += total;
                q.segments.extend(counted);
            }
            None => seqs.push(PackedSequence { segments: counted, total_tokens: total, truncated: Vec::new() }),
        }
    }
    Ok(seqs)
}

fn truncate_into_own(
    input: &PackInput,
    counted: Vec<PackedSegment>,
    total: usize,
    max_len: usize,
    tok: &TokenizerSpec,
) -> PackedSequence {
    let mut left = max_len;
    let mut kept = Vec::new();
    let mut dropped_loss = 0;
    for mut seg in counted {
        if left == 0 {
            if seg.loss {
                dropped_loss += seg.tokens;
            }
            continue;
        }
        if seg.tokens > left {
            let cut = tok.truncate(&seg.text, left).to_owned();
            let cut_tokens = tok.count(&cut);
            if seg.loss {
                dropped_loss += seg.tokens - cut_tokens;
            }
            seg.text = cut;
            seg.tokens = cut_tokens;
        }
        left -= seg.tokens;
        kept.push(seg);
    }
    let kept_tokens = max_len - left;
    log::info!("sample {} truncated from {total} to {kept_tokens} tokens", input.sample_id);
    PackedSequence {
        segments: kept,
        total_tokens: kept_tokens,
        truncated: vec![Truncation {
            sample_id: input.sample_id.clone(),
            original_tokens: total,
            kept_tokens,
            dropped_loss_tokens: dropped_loss,
        }],
    }
}

pub fn write_packed_jsonl(path: &Path, seqs: &[PackedSequence]) -> Result<(), MixError> {
    let io = |source| MixError::Io { path: path.into(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for s in seqs {
        serde_json::to_writer(&mut out, s).expect("packed sequence serializes");
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_mixture_jsonl(path: &Path, samples: &[MixSample]) -> Result<(), MixError> {
    let io = |source| MixError::Io { path: path.into(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for s in samples {
        serde_json::to_writer(&mut out, s).expect("sample serializes");
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_mixture_jsonl(path: &Path) -> Result<Vec<MixSample>, MixError> {
    let io = |source| MixError::Io { path: path.into(), source };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| MixError::Malformed {
            name: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Loss segments for a whole stream, using each sample's own category.
pub fn to_pack_inputs(samples: &[MixSample]) -> Result<Vec<PackInput>, MixError> {
    samples
        .iter()
        .map(|s| Ok(PackInput { sample_id: s.id.clone(), segments: make_loss_segments(s, s.category)? }))
        .collect()
}
