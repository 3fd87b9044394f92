//! Benchmark harness for the sparse-attention engine: weight files,
//! synthetic workloads, metrics export, budget sweeps and attention-pattern
//! analysis.

pub mod analysis;
pub mod config;
pub mod replay;
pub mod run;
pub mod sweep;
pub mod weights_file;

pub use analysis::{calibrate_delta_layers, drift_metric, layer_overlap};
pub use config::{RunConfig, RunOverrides};
pub use replay::{replay_contrast, ReplayStep};
pub use run::{execute, run_benchmark, synthetic_prompt, write_outputs, CsvRow, RunReport, TraceFile, CSV_COLUMNS};
pub use sweep::{sweep, SweepCell};
pub use weights_file::{gen_model, read_weights, write_weights};
