//! `longweave`: one entry point for corpus preparation, sample synthesis,
//! mixture packing, training plans and evaluation. Every subcommand reads the
//! same TOML run config, accepts `--seed` to override its master seed, and
//! writes a JSON manifest beside its primary output.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use longweave_core::config::{EmbeddingKind, RunConfig};
use longweave_core::corpus::{ingest_corpus, read_jsonl, CorpusFormat, CorpusHandle, TokenizerSpec};
use longweave_core::evalbench::{length_report, run_needle_grid, Haystack};
use longweave_core::llm::mock::PipelineMock;
use longweave_core::llm::{ExchangeLog, HttpChatBackend, LlmBackend, LlmGateway};
use longweave_core::mixpack::{
    build_mixture, pack_sequences, read_mixture_jsonl, to_pack_inputs, write_mixture_jsonl, write_packed_jsonl,
    MixtureSpec,
};
use longweave_core::retrieval::{dedup_by_embedding, EmbeddingBackend, HashEmbedder, HttpEmbedder, VectorIndex};
use longweave_core::seed;
use longweave_core::synthesis::{
    backtranslate_document, solve_with_workflow, synthesize_long_input_batch, SampleRecord, SynthContext,
};
use longweave_core::trainplan::{format_schedule, progressive_schedule};
use rayon::prelude::*;
use serde_json::json;

use manifest::{describe_output, manifest_path, sha256_hex, Manifest};

#[derive(Parser)]
#[command(name = "longweave", version, about = "Long-context instruction data synthesis toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the offline pipeline mock and hash embedder instead of remote backends.
    #[arg(long, global = true)]
    mock: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Read a JSONL corpus, down-sample short documents and write it back.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Keep every document instead of down-sampling short ones.
        #[arg(long)]
        no_downsample: bool,
    },
    /// Embed a corpus into a vector index.
    Index {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drop near-duplicate documents by embedding cosine similarity.
    Dedup {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Synthesize long-input samples.
    Synth {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Prebuilt index; built on the fly when omitted.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, short = 'n', default_value_t = 8)]
        n: u64,
        #[arg(long)]
        out: PathBuf,
        /// Offline run: implies --mock.
        #[arg(long)]
        dry_run: bool,
    },
    /// Back-translate long documents into long-output samples.
    Backtranslate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Cap on the number of documents used.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Draw a training mixture from the configured sources.
    Mix {
        /// Mixture spec (TOML); replaces the config's mixture section.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pack a mixture into fixed-length sequences with loss masks.
    Pack {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Print the progressive context-extension schedule.
    Plan {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Needle-in-a-haystack recall over a length × depth grid.
    EvalNeedle {
        #[arg(long)]
        essays: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        length_step: Option<usize>,
        #[arg(long)]
        n_depths: Option<usize>,
    },
    /// Fit the output-length curve to `x,y` pairs.
    EvalLength {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer a query over a long context with short-context calls.
    Solve {
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Index { .. } => "index",
            Command::Dedup { .. } => "dedup",
            Command::Synth { .. } => "synth",
            Command::Backtranslate { .. } => "backtranslate",
            Command::Mix { .. } => "mix",
            Command::Pack { .. } => "pack",
            Command::Plan { .. } => "plan",
            Command::EvalNeedle { .. } => "eval-needle",
            Command::EvalLength { .. } => "eval-length",
            Command::Solve { .. } => "solve",
        }
    }
}

/// Shared state for one invocation: the effective config and the
/// process-wide gateway whose ledger the manifest reports.
struct Run {
    cfg: RunConfig,
    mock: bool,
    tok: TokenizerSpec,
    gateway: LlmGateway,
    log: Arc<ExchangeLog>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(global: &GlobalArgs, force_mock: bool) -> Result<Self> {
        let mut cfg = match &global.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = global.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        let mock = global.mock || force_mock;
        let tok = cfg.tokenizer.build()?;
        let backend: Arc<dyn LlmBackend> = if mock {
            Arc::new(PipelineMock::default())
        } else {
            Arc::new(HttpChatBackend::new(cfg.llm.chat.clone())?)
        };
        let log = Arc::new(ExchangeLog::default());
        let gateway = if mock { LlmGateway::offline(backend) } else { LlmGateway::new(backend, &cfg.llm.gateway) }
            .with_log(log.clone());
        Ok(Run { cfg, mock, tok, gateway, log, outputs: Vec::new() })
    }

    fn embedder(&self) -> Result<Box<dyn EmbeddingBackend>> {
        Ok(match (self.mock, self.cfg.embedding.backend) {
            (true, _) | (false, EmbeddingKind::Hash) => Box::new(HashEmbedder::new(self.cfg.embedding.hash_dim)),
            (false, EmbeddingKind::Http) => Box::new(HttpEmbedder::new(self.cfg.embedding.http.clone())?),
        })
    }

    fn corpus(&self, flag: Option<&Path>) -> Result<CorpusHandle> {
        let path =
            flag.or(self.cfg.corpus.path.as_deref()).context("no corpus given (pass --corpus or set corpus.path)")?;
        Ok(ingest_corpus(path, CorpusFormat::Jsonl, self.tok.clone())?)
    }

    fn write(&mut self, path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
        std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.produced(path);
        Ok(())
    }

    fn produced(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    fn finish(self, command: &str, primary: &Path, stats: serde_json::Value) -> Result<()> {
        let outputs = self.outputs.iter().map(|p| describe_output(p)).collect::<Result<Vec<_>>>()?;
        let m = Manifest {
            command: command.to_owned(),
            config_sha256: sha256_hex(self.cfg.to_toml_string().as_bytes()),
            seed: self.cfg.seed,
            mock: self.mock,
            backend: self.gateway.backend_id().to_owned(),
            calls: self.gateway.ledger().snapshot(),
            outputs,
            stats,
        };
        m.write(&manifest_path(primary))
    }
}

fn jsonl<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Exchange log beside a primary output: `samples.jsonl` → `samples.jsonl.exchanges.jsonl`.
fn exchanges_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".exchanges.jsonl");
    primary.with_file_name(name)
}

fn write_exchanges(run: &mut Run, primary: &Path) -> Result<()> {
    let path = exchanges_path(primary);
    run.log.write_jsonl(&path).with_context(|| format!("writing {}", path.display()))?;
    run.produced(&path);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let name = cli.command.name();
    let force_mock = matches!(cli.command, Command::Synth { dry_run: true, .. });
    let mut run = Run::new(&cli.global, force_mock)?;
    let seed = run.cfg.seed;
    match cli.command {
        Command::Ingest { input, out, no_downsample } => {
            let corpus = run.corpus(input.as_deref())?;
            let kept = if no_downsample {
                (*corpus).clone()
            } else {
                let c = &run.cfg.corpus;
                corpus.downsample_short(c.short_threshold_tokens, c.keep_p, seed::derive_named(seed, "downsample"))?
            };
            kept.write_jsonl(&out)?;
            run.produced(&out);
            let stats = json!({
                "documents_in": corpus.len(),
                "documents_out": kept.len(),
                "tokens_out": kept.total_tokens(),
            });
            run.finish(name, &out, stats)
        }
        Command::Index { corpus, out } => {
            let corpus = run.corpus(corpus.as_deref())?;
            let index = VectorIndex::build(&corpus, run.embedder()?.as_ref(), &run.cfg.synthesis.embed)?;
            index.save_jsonl(&out)?;
            run.produced(&out);
            run.finish(name, &out, json!({ "vectors": index.len(), "dim": index.dim() }))
        }
        Command::Dedup { input, out, threshold } => {
            let corpus = run.corpus(Some(&input))?;
            let threshold = threshold.unwrap_or(run.cfg.synthesis.dedup_threshold);
            let items: Vec<(String, String)> =
                corpus.documents().iter().map(|d| (d.id.clone(), d.text.clone())).collect();
            let kept = dedup_by_embedding(&items, run.embedder()?.as_ref(), &run.cfg.synthesis.embed, threshold)?;
            let kept_set: std::collections::HashSet<&str> = kept.iter().map(String::as_str).collect();
            let lines = corpus
                .documents()
                .iter()
                .filter(|d| kept_set.contains(d.id.as_str()))
                .map(|d| json!({ "id": d.id, "text": d.text, "source": d.source }));
            run.write(&out, jsonl(lines))?;
            let stats = json!({ "documents_in": corpus.len(), "documents_out": kept.len(), "threshold": threshold });
            run.finish(name, &out, stats)
        }
        Command::Synth { corpus, index, n, out, dry_run: _ } => {
            let corpus = run.corpus(corpus.as_deref())?;
            let embedder = run.embedder()?;
            let index = match index {
                Some(p) => VectorIndex::load_jsonl(&p)?,
                None => VectorIndex::build(&corpus, embedder.as_ref(), &run.cfg.synthesis.embed)?,
            };
            let ctx =
                SynthContext { corpus: &corpus, index: &index, embedder: embedder.as_ref(), gateway: &run.gateway };
            let batch = synthesize_long_input_batch(&ctx, n, seed, &run.cfg.synthesis)?;
            run.write(&out, jsonl(batch.samples.iter().map(SampleRecord::from)))?;
            write_exchanges(&mut run, &out)?;
            let stats = json!({
                "requested": n,
                "samples": batch.samples.len(),
                "instructions_generated": batch.instructions_generated,
                "instructions_kept": batch.instructions_kept,
                "skipped": batch.skipped,
            });
            run.finish(name, &out, stats)
        }
        Command::Backtranslate { corpus, out, limit } => {
            let corpus = run.corpus(corpus.as_deref())?;
            let bt = &run.cfg.backtranslation;
            let mut docs = corpus.select_by_length(bt.min_tokens, bt.max_tokens)?;
            if let Some(l) = limit {
                docs.truncate(l);
            }
            let results: Vec<_> = docs
                .par_iter()
                .enumerate()
                .map(|(i, d)| {
                    backtranslate_document(d, &run.gateway, &run.tok, seed::derive(seed, i as u64), bt)
                        .map_err(|e| json!({ "doc_id": d.id, "reason": e.to_string() }))
                })
                .collect();
            let (ok, failed): (Vec<_>, Vec<_>) = results.into_iter().partition(Result::is_ok);
            let samples: Vec<_> = ok.into_iter().map(Result::unwrap).collect();
            let failed: Vec<_> = failed.into_iter().map(|r| r.unwrap_err()).collect();
            run.write(&out, jsonl(samples.iter().map(SampleRecord::from)))?;
            write_exchanges(&mut run, &out)?;
            let stats = json!({ "eligible": docs.len(), "samples": samples.len(), "skipped": failed });
            run.finish(name, &out, stats)
        }
        Command::Mix { spec, out } => {
            let spec = match spec {
                Some(p) => MixtureSpec::load(&p)?,
                None => run.cfg.mixture.clone(),
            };
            let mixture = build_mixture(&spec, seed::derive_named(seed, "mixture"))?;
            write_mixture_jsonl(&out, &mixture)?;
            run.produced(&out);
            let mut per_source = std::collections::BTreeMap::<&str, usize>::new();
            for s in &mixture {
                *per_source.entry(s.source.as_str()).or_default() += 1;
            }
            run.finish(name, &out, json!({ "samples": mixture.len(), "per_source": per_source }))
        }
        Command::Pack { input, out, max_len } => {
            let max_len = max_len.unwrap_or(run.cfg.packing.max_len);
            let samples = read_mixture_jsonl(&input)?;
            let seqs = pack_sequences(&to_pack_inputs(&samples)?, max_len, &run.tok)?;
            write_packed_jsonl(&out, &seqs)?;
            run.produced(&out);
            let stats = json!({
                "samples": samples.len(),
                "sequences": seqs.len(),
                "max_len": max_len,
                "tokens": seqs.iter().map(|s| s.total_tokens).sum::<usize>(),
                "loss_tokens": seqs.iter().map(|s| s.loss_tokens()).sum::<usize>(),
                "truncated_samples": seqs.iter().map(|s| s.truncated.len()).sum::<usize>(),
            });
            run.finish(name, &out, stats)
        }
        Command::Plan { out } => {
            let stages = progressive_schedule(&run.cfg.schedule)?;
            emit(&format_schedule(&stages));
            if let Some(out) = out {
                let text = serde_json::to_string_pretty(&stages).expect("stages serialize") + "\n";
                run.write(&out, text)?;
                run.finish(name, &out, json!({ "stages": stages.len() }))?;
            }
            Ok(())
        }
        Command::EvalNeedle { essays, out, max_len, length_step, n_depths } => {
            let path = essays
                .or_else(|| run.cfg.corpus.essays_path.clone())
                .context("no essays given (pass --essays or set corpus.essays_path)")?;
            let file = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            let essays = read_jsonl(std::io::BufReader::new(file), run.tok.clone())?;
            let mut ncfg = run.cfg.needle.clone();
            ncfg.max_len = max_len.unwrap_or(ncfg.max_len);
            ncfg.length_step = length_step.unwrap_or(ncfg.length_step);
            ncfg.n_depths = n_depths.unwrap_or(ncfg.n_depths);
            if ncfg.length_step == 0 || ncfg.n_depths == 0 {
                bail!("length step and depth count must be positive");
            }
            let hay = Haystack::build(&essays, &ncfg.probe.needle, seed::derive_named(seed, "needle"))?;
            let depths = longweave_core::evalbench::default_depths(ncfg.n_depths);
            let grid = run_needle_grid(&run.gateway, &hay, &ncfg.lengths(), &depths, &ncfg.probe)?;
            run.write(&out, grid.to_csv()?)?;
            let scored: Vec<f64> = grid.cells.iter().map(|c| c.recall).filter(|r| *r >= 0.0).collect();
            let stats = json!({
                "lengths": grid.lengths.len(),
                "depths": grid.depths.len(),
                "failed_cells": grid.cells.len() - scored.len(),
                "mean_recall": if scored.is_empty() { 0.0 } else { scored.iter().sum::<f64>() / scored.len() as f64 },
            });
            run.finish(name, &out, stats)
        }
        Command::EvalLength { input, out } => {
            let mut reader = csv::Reader::from_path(&input).with_context(|| format!("opening {}", input.display()))?;
            let pairs = reader
                .deserialize::<(f64, f64)>()
                .enumerate()
                .map(|(i, r)| r.with_context(|| format!("{}: row {}", input.display(), i + 1)))
                .collect::<Result<Vec<_>>>()?;
            let report = length_report(&pairs)?;
            if let Some(f) = &report.fit {
                emit(&format!("n={} a={:.4} b={:.2} c={:.4} mse={:.3e}\n", report.n, f.a, f.b, f.c, f.residual));
            } else {
                emit(&format!("n={} fit unavailable: {}\n", report.n, report.fit_error.as_deref().unwrap_or("")));
            }
            let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
            run.write(&out, text)?;
            run.finish(name, &out, json!({ "n": report.n, "fit": report.fit }))
        }
        Command::Solve { context, query, out } => {
            let text = std::fs::read_to_string(&context).with_context(|| format!("reading {}", context.display()))?;
            let outcome = solve_with_workflow(&text, &query, &run.gateway, &run.tok, &run.cfg.solve)?;
            emit(&format!("{}\n", outcome.answer));
            let body = serde_json::to_string_pretty(&outcome).expect("outcome serializes") + "\n";
            run.write(&out, body)?;
            write_exchanges(&mut run, &out)?;
            let stats = json!({ "chunks": outcome.chunks, "rounds": outcome.rounds });
            run.finish(name, &out, stats)
        }
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The error chain on one line, skipping causes their parent already quotes.
fn diagnostic(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if parts.last().is_some_and(|p| p.contains(&text)) {
            continue;
        }
        parts.push(text);
    }
    one_line(&parts.join(": "))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", diagnostic(&e));
            ExitCode::FAILURE
        }
    }
}
