use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use delta_bench::analysis::{calibrate_delta_layers, mean_layer_drift, mean_layer_overlap};
use delta_bench::sweep::{format_grid, write_grid};
use delta_bench::{gen_model, read_weights, run_benchmark, sweep, RunConfig, RunOverrides, TraceFile};
use delta_core::ModelConfig;
use serde_json::json;

#[derive(Parser)]
#[command(name = "delta-bench", version, about = "Layer-aware sparse attention benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write seeded random weights.
    GenModel {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        layers: usize,
        #[arg(long, default_value_t = 128)]
        hidden: usize,
        #[arg(long, default_value_t = 8)]
        heads: usize,
        #[arg(long, default_value_t = 2)]
        groups: usize,
        #[arg(long, default_value_t = 256)]
        ffn: usize,
        #[arg(long, default_value_t = 256)]
        vocab: usize,
        #[arg(long, default_value_t = ModelConfig::DEFAULT_ROPE_BASE)]
        rope_base: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Prefill and decode one workload, writing per-step metrics.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: RunOverrides,
    },
    /// Run the workload over a grid of token budgets and recency windows.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "64,128,256")]
        k_values: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
        l_values: Vec<usize>,
        #[command(flatten)]
        flags: RunOverrides,
    },
    /// Pick selection layers from a recorded trace.
    Calibrate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 3)]
        n_delta: usize,
        #[arg(long, default_value_t = 2)]
        full_prefix: usize,
    },
    /// Per-layer drift and adjacent-layer overlap of a recorded trace.
    Analyze {
        #[arg(long)]
        trace: PathBuf,
    },
}

fn resolve(config: Option<PathBuf>, flags: RunOverrides) -> Result<RunConfig> {
    let file = match config {
        Some(p) => RunOverrides::from_file(&p)?,
        None => RunOverrides::default(),
    };
    RunConfig::resolve(file.layered(flags))
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::GenModel { out, layers, hidden, heads, groups, ffn, vocab, rope_base, seed } => {
            let cfg = ModelConfig {
                num_layers: layers,
                hidden_dim: hidden,
                num_query_heads: heads,
                num_kv_groups: groups,
                ffn_dim: ffn,
                vocab_size: vocab,
                rope_base,
            };
            gen_model(cfg, seed, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Run { config, flags } => {
            let cfg = resolve(config, flags)?;
            let report = run_benchmark(&cfg)?;
            let s = report.summary();
            println!(
                "{} tokens in {:.3}s ({:.1} tok/s), final seq_len {}, metrics in {}",
                s.generated_tokens,
                s.wall_time_ns as f64 / 1e9,
                s.tokens_per_second,
                s.final_seq_len,
                cfg.out.display()
            );
        }
        Command::Sweep { config, k_values, l_values, flags } => {
            let cfg = resolve(config, flags)?;
            let weights = read_weights(&cfg.model)?;
            let cells = sweep(&cfg, &weights, &k_values, &l_values)?;
            write_grid(&cfg.out, &cells)?;
            print!("{}", format_grid(&cells));
        }
        Command::Calibrate { trace, n_delta, full_prefix } => {
            let trace = TraceFile::read(&trace)?;
            // Drift is measured within a sequence, so calibrate on the first.
            let first = trace.observations().into_iter().next().context("trace holds no sequences")?;
            let layers = calibrate_delta_layers(&first, n_delta, full_prefix)?;
            println!("{}", json!({ "delta_layers": layers }));
        }
        Command::Analyze { trace } => {
            let trace = TraceFile::read(&trace)?;
            let per_seq: Vec<_> = trace
                .observations()
                .iter()
                .map(|obs| json!({ "mean_drift": mean_layer_drift(obs), "mean_overlap": mean_layer_overlap(obs) }))
                .collect();
            println!("{}", serde_json::to_string_pretty(&json!({ "top_k": trace.top_k, "sequences": per_seq }))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
