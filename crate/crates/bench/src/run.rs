//! Prefill plus greedy generation under one policy, with metrics export.

use std::fs::{self, File};
use std::io::BufWriter;
use std::time::Instant;

use anyhow::{Context, Result};
use delta_core::{Engine32, EngineOptions, LayerRole, Observation, StepMetrics, WeightSet32};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::weights_file::read_weights;

/// One metrics CSV row; the field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub step: u64,
    pub seq_len: usize,
    pub policy: &'static str,
    pub budget_k: usize,
    pub recency_l: usize,
    pub tokens_attended_mean_sparse: Option<f64>,
    pub recall_mean: Option<f64>,
    pub recall_min: Option<f64>,
    pub attn_time_ns: u64,
    pub ffn_time_ns: u64,
}

pub const CSV_COLUMNS: [&str; 10] = [
    "step",
    "seq_len",
    "policy",
    "budget_k",
    "recency_l",
    "tokens_attended_mean_sparse",
    "recall_mean",
    "recall_min",
    "attn_time_ns",
    "ffn_time_ns",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
struct LayerRow {
    sequence: usize,
    step: u64,
    seq_len: usize,
    layer: usize,
    role: &'static str,
    tokens_attended: usize,
    recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub policy: &'static str,
    pub budget_k: usize,
    pub recency_l: usize,
    pub page_size: usize,
    pub batch: usize,
    pub prompt_len: usize,
    pub generated_tokens: usize,
    pub final_seq_len: usize,
    pub wall_time_ns: u64,
    pub tokens_per_second: f64,
    pub tokens: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct TraceStep {
    pub step: u64,
    pub seq_len: usize,
    pub layers: Vec<Vec<usize>>,
}

impl From<&Observation> for TraceStep {
    fn from(o: &Observation) -> Self {
        Self { step: o.step, seq_len: o.seq_len, layers: o.layers.clone() }
    }
}

impl From<TraceStep> for Observation {
    fn from(t: TraceStep) -> Self {
        Observation { step: t.step, seq_len: t.seq_len, layers: t.layers }
    }
}

/// Per-layer top-k attention sets recorded during a run, one list per sequence.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct TraceFile {
    pub top_k: usize,
    pub every: usize,
    pub sequences: Vec<Vec<TraceStep>>,
}

impl TraceFile {
    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn observations(&self) -> Vec<Vec<Observation>> {
        self.sequences.iter().map(|s| s.iter().cloned().map(Observation::from).collect()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SequenceResult {
    pub prompt: Vec<u32>,
    pub tokens: Vec<u32>,
    pub metrics: Vec<StepMetrics>,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: RunConfig,
    pub roles: Vec<LayerRole>,
    pub sequences: Vec<SequenceResult>,
    pub wall_time_ns: u64,
}

impl RunReport {
    /// One row per generated token, sequences in batch order.
    pub fn rows(&self) -> Vec<CsvRow> {
        let c = &self.config;
        self.sequences
            .iter()
            .flat_map(|s| s.metrics.iter())
            .map(|m| CsvRow {
                step: m.step,
                seq_len: m.seq_len,
                policy: c.policy.as_str(),
                budget_k: c.budget_k,
                recency_l: c.recency_l,
                tokens_attended_mean_sparse: m.tokens_attended_mean_sparse,
                recall_mean: m.recall_mean,
                recall_min: m.recall_min,
                attn_time_ns: m.attn_time_ns,
                ffn_time_ns: m.ffn_time_ns,
            })
            .collect()
    }

    pub fn summary(&self) -> RunSummary {
        let c = &self.config;
        let generated: usize = self.sequences.iter().map(|s| s.tokens.len()).sum();
        let secs = self.wall_time_ns as f64 / 1e9;
        RunSummary {
            policy: c.policy.as_str(),
            budget_k: c.budget_k,
            recency_l: c.recency_l,
            page_size: c.page_size,
            batch: c.batch,
            prompt_len: c.prompt_len,
            generated_tokens: generated,
            final_seq_len: c.prompt_len + self.sequences.first().map_or(0, |s| s.tokens.len()),
            wall_time_ns: self.wall_time_ns,
            tokens_per_second: if secs > 0.0 { generated as f64 / secs } else { 0.0 },
            tokens: self.sequences.iter().map(|s| s.tokens.clone()).collect(),
        }
    }
}

/// Deterministic prompt for sequence `index` of a batch.
pub fn synthetic_prompt(seed: u64, index: usize, len: usize, vocab: usize) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    (0..len).map(|_| rng.gen_range(0..vocab as u32)).collect()
}

/// Runs the configured workload without writing anything.
pub fn execute(cfg: &RunConfig, weights: WeightSet32) -> Result<RunReport> {
    let options = EngineOptions {
        record_recall: cfg.record_recall,
        observe_every: cfg.record_overlap_every,
        observe_top_k: cfg.overlap_top_k,
    };
    let vocab = weights.config.vocab_size;
    let engine = Engine32::new(weights, &cfg.tiers(), options)?;
    let started = Instant::now();
    let sequences = (0..cfg.batch)
        .into_par_iter()
        .map(|i| -> Result<SequenceResult> {
            let prompt = synthetic_prompt(cfg.seed, i, cfg.prompt_len, vocab);
            let mut state = engine.new_state();
            engine.prefill(&mut state, &prompt)?;
            let gen = engine.generate(&mut state, cfg.max_new, None)?;
            Ok(SequenceResult {
                prompt,
                tokens: gen.tokens,
                metrics: gen.metrics,
                observations: state.take_observations(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunReport {
        config: cfg.clone(),
        roles: engine.tiers().roles().to_vec(),
        sequences,
        wall_time_ns: started.elapsed().as_nanos() as u64,
    })
}

pub fn write_outputs(report: &RunReport) -> Result<()> {
    let cfg = &report.config;
    if let Some(dir) = cfg.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut w = csv::Writer::from_path(&cfg.out).with_context(|| format!("writing {}", cfg.out.display()))?;
    let rows = report.rows();
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(cfg.layers_path())?;
    for (i, s) in report.sequences.iter().enumerate() {
        for m in &s.metrics {
            for (layer, role) in report.roles.iter().enumerate() {
                w.serialize(LayerRow {
                    sequence: i,
                    step: m.step,
                    seq_len: m.seq_len,
                    layer,
                    role: match role {
                        LayerRole::Full => "full",
                        LayerRole::Delta => "selection",
                        LayerRole::Sparse { .. } => "sparse",
                    },
                    tokens_attended: m.tokens_attended[layer],
                    recall: m.layer_recall[layer],
                })?;
            }
        }
    }
    w.flush()?;

    let summary = File::create(cfg.summary_path())?;
    serde_json::to_writer_pretty(BufWriter::new(summary), &report.summary())?;

    if let Some(every) = cfg.record_overlap_every {
        let trace = TraceFile {
            top_k: cfg.overlap_top_k,
            every,
            sequences: report.sequences.iter().map(|s| s.observations.iter().map(TraceStep::from).collect()).collect(),
        };
        serde_json::to_writer(BufWriter::new(File::create(cfg.trace_path())?), &trace)?;
    }
    Ok(())
}

/// Loads the model, runs, and writes the CSV, summary and optional trace.
pub fn run_benchmark(cfg: &RunConfig) -> Result<RunReport> {
    let weights = read_weights(&cfg.model)?;
    let report = execute(cfg, weights)?;
    write_outputs(&report)?;
    Ok(report)
}
