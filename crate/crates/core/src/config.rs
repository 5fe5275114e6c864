//! The run configuration: one TOML file holding every knob, with defaults
//! matching the reference setup. Secrets never live here; backends name the
//! environment variable that carries their key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenizerConfig;
use crate::evalbench::NeedleConfig;
use crate::llm::{ChatBackendConfig, GatewayConfig};
use crate::mixpack::{MixtureSpec, DEFAULT_MAX_LEN};
use crate::retrieval::HttpEmbedderConfig;
use crate::synthesis::{BacktranslateConfig, SolveConfig, SynthConfig};
use crate::trainplan::ScheduleParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Source documents (JSONL); command-line paths take precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Essays used as needle-evaluation filler.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub essays_path: Option<PathBuf>,
    /// Documents below this many tokens are down-sampled.
    pub short_threshold_tokens: usize,
    pub keep_p: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { path: None, essays_path: None, short_threshold_tokens: 2048, keep_p: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub chat: ChatBackendConfig,
    pub gateway: GatewayConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingKind {
    /// Local feature-hashing embedder; deterministic, no network.
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub backend: EmbeddingKind,
    pub hash_dim: usize,
    pub http: HttpEmbedderConfig,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { backend: EmbeddingKind::Hash, hash_dim: 256, http: HttpEmbedderConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PackConfig {
    pub max_len: usize,
}

impl Default for PackConfig {
    fn default() -> Self {
        Self { max_len: DEFAULT_MAX_LEN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeedleEvalConfig {
    pub probe: NeedleConfig,
    pub max_len: usize,
    pub length_step: usize,
    pub n_depths: usize,
}

impl Default for NeedleEvalConfig {
    fn default() -> Self {
        Self { probe: NeedleConfig::default(), max_len: 1 << 20, length_step: 16_384, n_depths: 10 }
    }
}

impl NeedleEvalConfig {
    pub fn lengths(&self) -> Vec<usize> {
        (1..=self.max_len / self.length_step.max(1)).map(|i| i * self.length_step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; every stage derives its own streams from it.
    pub seed: u64,
    pub tokenizer: TokenizerConfig,
    pub corpus: CorpusConfig,
    pub llm: LlmConfig,
    pub embedding: EmbeddingConfig,
    pub synthesis: SynthConfig,
    pub backtranslation: BacktranslateConfig,
    pub solve: SolveConfig,
    pub mixture: MixtureSpec,
    pub packing: PackConfig,
    pub schedule: ScheduleParams,
    pub needle: NeedleEvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tokenizer: TokenizerConfig::default(),
            corpus: CorpusConfig::default(),
            llm: LlmConfig::default(),
            embedding: EmbeddingConfig::default(),
            synthesis: SynthConfig::default(),
            backtranslation: BacktranslateConfig::default(),
            solve: SolveConfig::default(),
            mixture: MixtureSpec::reference(Path::new("data")),
            packing: PackConfig::default(),
            schedule: ScheduleParams::default(),
            needle: NeedleEvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| ConfigError::Parse { path: PathBuf::from("<string>"), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.into(), message },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed {} does not fit a signed 64-bit integer", self.seed));
        }
        if !(0.0..=1.0).contains(&self.corpus.keep_p) {
            return bad(format!("corpus.keep_p {} outside [0, 1]", self.corpus.keep_p));
        }
        let s = &self.synthesis;
        if !(1..=s.n_docs_max).contains(&s.n_docs_min) || s.n_docs_max > crate::synthesis::MAX_CONTEXT_DOCS {
            return bad(format!("synthesis n_docs range [{}, {}] invalid", s.n_docs_min, s.n_docs_max));
        }
        if !(s.dedup_threshold > 0.0 && s.dedup_threshold <= 1.0) {
            return bad(format!("synthesis.dedup_threshold {} outside (0, 1]", s.dedup_threshold));
        }
        if s.top_k == 0 || s.per_query_k == 0 {
            return bad("synthesis top_k and per_query_k must be positive".into());
        }
        if s.qfs.budget_tokens < crate::synthesis::MIN_QFS_BUDGET
            || self.solve.qfs.budget_tokens < crate::synthesis::MIN_QFS_BUDGET
        {
            return bad(format!("QFS budget must be at least {}", crate::synthesis::MIN_QFS_BUDGET));
        }
        if s.qfs.chunk_tokens == 0 || self.solve.chunk_tokens == 0 {
            return bad("chunk sizes must be positive".into());
        }
        if self.packing.max_len == 0 {
            return bad("packing.max_len must be positive".into());
        }
        if self.llm.gateway.max_in_flight == 0 || self.llm.gateway.retry.max_attempts == 0 {
            return bad("llm.gateway max_in_flight and retry.max_attempts must be positive".into());
        }
        if self.needle.length_step == 0 || self.needle.n_depths == 0 {
            return bad("needle length_step and n_depths must be positive".into());
        }
        self.mixture.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn reference_knobs() {
        let c = RunConfig::default();
        assert_eq!(c.synthesis.qfs.chunk_tokens, 4096);
        assert_eq!(c.synthesis.top_k, 5);
        assert_eq!(c.synthesis.dedup_threshold, 0.85);
        assert_eq!(c.corpus.keep_p, 0.05);
        assert_eq!(c.corpus.short_threshold_tokens, 2048);
        assert_eq!((c.synthesis.n_docs_min, c.synthesis.n_docs_max), (1, 100));
        assert_eq!(c.packing.max_len, 262_144);
        assert_eq!(c.schedule.start_theta, 500_000.0);
        assert_eq!(c.needle.lengths().len(), 64);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::from_toml_str("seed = 7\n[synthesis]\ntop_k = 3\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.synthesis.top_k, 3);
        assert_eq!(c.synthesis.per_query_k, 5);
        assert_eq!(c.mixture, RunConfig::default().mixture);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml_str("[corpus]\nkeep_p = 2.0\n").is_err());
        assert!(RunConfig::from_toml_str("[synthesis]\nn_docs_max = 500\n").is_err());
        assert!(RunConfig::from_toml_str("[synthesis.qfs]\nbudget_tokens = 100\n").is_err());
        assert!(RunConfig::from_toml_str("nonsense = [").is_err());
    }
}
