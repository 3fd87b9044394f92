use crate::error::{config, Result};

/// Architecture hyperparameters of the decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_query_heads: usize,
    pub num_kv_groups: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub rope_base: f64,
}

impl ModelConfig {
    pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_query_heads.max(1)
    }

    /// Width of the key/value projections, `g * d_head`.
    pub fn kv_dim(&self) -> usize {
        self.num_kv_groups * self.head_dim()
    }

    /// KV group read by query head `head`: contiguous blocks of `m / g` heads.
    #[inline]
    pub fn group_of_head(&self, head: usize) -> usize {
        head * self.num_kv_groups / self.num_query_heads
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_layers", self.num_layers),
            ("hidden_dim", self.hidden_dim),
            ("num_query_heads", self.num_query_heads),
            ("num_kv_groups", self.num_kv_groups),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(config!("{name} must be at least 1"));
            }
        }
        if !self.hidden_dim.is_multiple_of(self.num_query_heads) {
            return Err(config!(
                "hidden_dim {} is not a multiple of num_query_heads {}",
                self.hidden_dim,
                self.num_query_heads
            ));
        }
        if self.num_kv_groups > self.num_query_heads
            || !self.num_query_heads.is_multiple_of(self.num_kv_groups)
        {
            return Err(config!(
                "num_kv_groups {} must divide num_query_heads {}",
                self.num_kv_groups,
                self.num_query_heads
            ));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(config!("head_dim {} must be even for rotary encoding", self.head_dim()));
        }
        if !(self.rope_base.is_finite() && self.rope_base > 0.0) {
            return Err(config!("rope_base must be positive, got {}", self.rope_base));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(h: usize, m: usize, g: usize) -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            hidden_dim: h,
            num_query_heads: m,
            num_kv_groups: g,
            ffn_dim: 16,
            vocab_size: 32,
            rope_base: 10_000.0,
        }
    }

    #[test]
    fn validates_gqa_shapes() {
        assert!(cfg(128, 8, 2).validate().is_ok());
        assert!(cfg(128, 8, 3).validate().is_err());
        assert!(cfg(128, 4, 8).validate().is_err());
        assert!(cfg(100, 8, 2).validate().is_err());
        // d_head = 3 is odd
        assert!(cfg(6, 2, 1).validate().is_err());
        let mut zero = cfg(128, 8, 2);
        zero.vocab_size = 0;
        assert!(zero.validate().is_err());
    }

    #[test]
    fn heads_map_to_contiguous_groups() {
        let c = cfg(128, 8, 2);
        let groups: Vec<_> = (0..8).map(|j| c.group_of_head(j)).collect();
        assert_eq!(groups, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        let mha = cfg(64, 4, 4);
        assert_eq!((0..4).map(|j| mha.group_of_head(j)).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }
}
