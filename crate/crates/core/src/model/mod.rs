//! Forward-pass math for one grouped-query-attention transformer layer.

mod config;
mod ops;
mod weights;

pub use config::ModelConfig;
pub use ops::{
    attend, attend_segments, ffn_forward, merge_and_project, project_qkv, rms_norm, rope_apply,
    rope_in_place, silu, softmax_in_place, softmax_stable, Attended, KvSegment, Qkv,
};
pub use weights::{LayerWeights, WeightSet};
