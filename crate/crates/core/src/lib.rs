//! Decoder-only transformer inference with layer-aware sparse attention.
//!
//! Layers are split into three tiers: a prefix of full-attention layers,
//! selection layers that run full attention and pick the salient pages for
//! the layers above them, and sparse layers that attend only to the picked
//! pages. The full KV cache is always retained; sparsity restricts compute,
//! not memory.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the bottom of this file pin the 32-bit instantiation used by
//! the engine and the benchmark harness.

pub mod baselines;
pub mod engine;
pub mod error;
pub mod kv_cache;
pub mod model;
pub mod scalar;
pub mod selection;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use baselines::{quest_score, quest_select, raas_step, PageReps, RaasState};
pub use engine::{
    validate_tiers, DecodeState, Engine, EngineOptions, Generation, LayerRole, Observation,
    Policy, StepMetrics, TierConfig, ValidatedTiers,
};
pub use kv_cache::{kv_bytes, page_of, Gathered, PagedKvCache};
pub use model::{LayerWeights, ModelConfig, WeightSet};
pub use selection::{
    attention_recall, page_scores, select_page_level, select_token_level, token_scores,
    top_k_indices, PageBudget, ScoreVector, SelectionPlan,
};
pub use tensor::Matrix;

pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
pub type WeightSet32 = WeightSet<f32>;
pub type WeightSet64 = WeightSet<f64>;
pub type Engine32 = Engine<f32>;
pub type Engine64 = Engine<f64>;
pub type DecodeState32 = DecodeState<f32>;
pub type PagedKvCache32 = PagedKvCache<f32>;
