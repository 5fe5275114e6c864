//! Embedding backends and batched embedding with retries.

use std::collections::HashMap;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::RetrievalError;
use crate::retry::{CallError, InFlightLimiter, RetryPolicy};
use crate::seed::fnv1a64;

/// An L2-normalized embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Normalizes `values` to unit length. Fails on empty, zero or
    /// non-finite input.
    pub fn new(values: Vec<f32>) -> Result<Self, RetrievalError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::InvalidVector("empty or non-finite values".into()));
        }
        let norm = values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(RetrievalError::InvalidVector("zero vector".into()));
        }
        Ok(Self { values: values.into_iter().map(|v| (f64::from(v) / norm) as f32).collect() })
    }

    /// Accepts values that are already unit length (within 1e-6) unchanged,
    /// normalizing anything else. Used when reloading persisted vectors.
    pub fn from_stored(values: Vec<f32>) -> Result<Self, RetrievalError> {
        let v = Self { values };
        if !v.values.is_empty() && v.values.iter().all(|x| x.is_finite()) && (v.norm() - 1.0).abs() <= 1e-6 {
            return Ok(v);
        }
        Self::new(v.values)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    /// Cosine similarity (dot product of unit vectors), accumulated in f64.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.values, &other.values)
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

pub trait EmbeddingBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Embeds one batch; the result must have one raw vector per input.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, CallError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { batch_size: 32, max_in_flight: 4, retry: RetryPolicy::default() }
    }
}

/// Embeds `texts` in batches of `cfg.batch_size`, at most `cfg.max_in_flight`
/// batches at a time. Output order matches input order.
///
/// Every batch is attempted; if any batch still fails after its retries the
/// error lists all failed batch indices.
pub fn embed_batch(
    texts: &[String],
    backend: &dyn EmbeddingBackend,
    cfg: &EmbedConfig,
) -> Result<Vec<EmbeddingVector>, RetrievalError> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let limiter = InFlightLimiter::new(cfg.max_in_flight);
    let results: Vec<Result<Vec<EmbeddingVector>, String>> = texts
        .par_chunks(cfg.batch_size.max(1))
        .map(|batch| {
            let _permit = limiter.acquire();
            let (res, _) = cfg.retry.run(|_| {
                let raw = backend.embed(batch)?;
                if raw.len() != batch.len() {
                    return Err(CallError::fatal(format!(
                        "backend returned {} vectors for {} texts",
                        raw.len(),
                        batch.len()
                    )));
                }
                Ok(raw)
            });
            let raw = res.map_err(|e| e.message)?;
            raw.into_iter().map(|v| EmbeddingVector::new(v).map_err(|e| e.to_string())).collect()
        })
        .collect();

    let mut out = Vec::with_capacity(texts.len());
    let mut failed = Vec::new();
    let mut last_error = String::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(vs) => out.extend(vs),
            Err(e) => {
                failed.push(i);
                last_error = e;
            }
        }
    }
    if failed.is_empty() {
        Ok(out)
    } else {
        Err(RetrievalError::EmbeddingFailed { batches: failed, message: last_error })
    }
}

/// Deterministic offline embedder: signed feature hashing of lowercased
/// alphanumeric words. Texts sharing most words get high cosine similarity.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        let mut any = false;
        for word in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            let h = fnv1a64(word.to_lowercase().as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % self.dim as u64) as usize] += sign;
            any = true;
        }
        if !any || v.iter().all(|&x| x == 0.0) {
            // Texts without words (or whose buckets cancel) still need a
            // well-defined direction.
            let h = fnv1a64(text.as_bytes());
            v[(h % self.dim as u64) as usize] += 1.0;
        }
        v
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

impl EmbeddingBackend for HashEmbedder {
    fn id(&self) -> &str {
        "mock-hash"
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, CallError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Embedder returning fixed vectors for known texts; unknown texts fail
/// fatally. Useful for crafting exact geometric test cases.
#[derive(Debug, Clone, Default)]
pub struct LookupEmbedder {
    table: HashMap<String, Vec<f32>>,
}

impl LookupEmbedder {
    pub fn new<I: IntoIterator<Item = (String, Vec<f32>)>>(entries: I) -> Self {
        Self { table: entries.into_iter().collect() }
    }
}

impl EmbeddingBackend for LookupEmbedder {
    fn id(&self) -> &str {
        "mock-lookup"
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, CallError> {
        texts
            .iter()
            .map(|t| self.table.get(t).cloned().ok_or_else(|| CallError::fatal(format!("no vector for {t:?}"))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpEmbedderConfig {
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
}

impl Default for HttpEmbedderConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000/v1/embeddings".into(),
            model: "e5-mistral-7b-instruct".into(),
            api_key_env: Some("EMBEDDING_API_KEY".into()),
            timeout_secs: 60,
        }
    }
}

/// Embedding client speaking the common `{"model", "input": [..]}` request
/// shape. Accepts either `{"data": [{"embedding": [..], "index": i}]}` or a
/// bare array of arrays in the response.
pub struct HttpEmbedder {
    cfg: HttpEmbedderConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(cfg: HttpEmbedderConfig) -> Result<Self, RetrievalError> {
        let api_key = cfg.api_key_env.as_deref().and_then(|k| std::env::var(k).ok());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| RetrievalError::Backend(e.to_string()))?;
        Ok(Self { cfg, api_key, client })
    }
}

impl EmbeddingBackend for HttpEmbedder {
    fn id(&self) -> &str {
        &self.cfg.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, CallError> {
        let mut req =
            self.client.post(&self.cfg.url).json(&serde_json::json!({ "model": self.cfg.model, "input": texts }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| CallError::transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| CallError::transient(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(CallError::from_status(status, &body));
        }
        let value: Value = serde_json::from_str(&body).map_err(|e| CallError::fatal(format!("bad JSON: {e}")))?;
        parse_embedding_response(&value).ok_or_else(|| CallError::fatal("unrecognized embedding response"))
    }
}

pub(crate) fn parse_embedding_response(value: &Value) -> Option<Vec<Vec<f32>>> {
    let to_vec =
        |v: &Value| -> Option<Vec<f32>> { v.as_array()?.iter().map(|x| x.as_f64().map(|f| f as f32)).collect() };
    match value {
        Value::Array(rows) => rows.iter().map(to_vec).collect(),
        Value::Object(obj) => {
            let data = obj.get("data")?.as_array()?;
            let mut rows: Vec<(usize, Vec<f32>)> = data
                .iter()
                .enumerate()
                .map(|(i, item)| {
                    let idx = item.get("index").and_then(Value::as_u64).map_or(i, |x| x as usize);
                    Some((idx, to_vec(item.get("embedding")?)?))
                })
                .collect::<Option<_>>()?;
            rows.sort_by_key(|(i, _)| *i);
            Some(rows.into_iter().map(|(_, v)| v).collect())
        }
        _ => None,
    }
}
