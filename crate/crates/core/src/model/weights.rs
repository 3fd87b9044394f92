use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{config, Result};
use crate::{Matrix, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
    pub w_o: Matrix<T>,
    pub w_1: Matrix<T>,
    pub w_2: Matrix<T>,
}

impl<T: Scalar> LayerWeights<T> {
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let h = cfg.hidden_dim;
        let expected = [
            ("Wq", &self.w_q, (h, h)),
            ("Wk", &self.w_k, (h, cfg.kv_dim())),
            ("Wv", &self.w_v, (h, cfg.kv_dim())),
            ("Wo", &self.w_o, (h, h)),
            ("W1", &self.w_1, (h, cfg.ffn_dim)),
            ("W2", &self.w_2, (cfg.ffn_dim, h)),
        ];
        for (name, m, shape) in expected {
            if m.shape() != shape {
                return Err(config!("{name} has shape {:?}, expected {:?}", m.shape(), shape));
            }
            if m.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(config!("{name} contains non-finite entries"));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> LayerWeights<U> {
        LayerWeights {
            w_q: self.w_q.cast(),
            w_k: self.w_k.cast(),
            w_v: self.w_v.cast(),
            w_o: self.w_o.cast(),
            w_1: self.w_1.cast(),
            w_2: self.w_2.cast(),
        }
    }
}

/// Full parameter set: token embedding, per-layer weights, unembedding.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet<T> {
    pub config: ModelConfig,
    pub embedding: Matrix<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub unembedding: Matrix<T>,
}

impl<T: Scalar> WeightSet<T> {
    pub fn new(
        config: ModelConfig,
        embedding: Matrix<T>,
        layers: Vec<LayerWeights<T>>,
        unembedding: Matrix<T>,
    ) -> Result<Self> {
        let ws = Self { config, embedding, layers, unembedding };
        ws.validate()?;
        Ok(ws)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        if self.layers.len() != cfg.num_layers {
            return Err(config!(
                "weight set has {} layers, config says {}",
                self.layers.len(),
                cfg.num_layers
            ));
        }
        if self.embedding.shape() != (cfg.vocab_size, cfg.hidden_dim) {
            return Err(config!("embedding has shape {:?}", self.embedding.shape()));
        }
        if self.unembedding.shape() != (cfg.hidden_dim, cfg.vocab_size) {
            return Err(config!("unembedding has shape {:?}", self.unembedding.shape()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(cfg).map_err(|e| config!("layer {i}: {e}"))?;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> WeightSet<U> {
        WeightSet {
            config: self.config,
            embedding: self.embedding.cast(),
            layers: self.layers.iter().map(LayerWeights::cast).collect(),
            unembedding: self.unembedding.cast(),
        }
    }
}

impl WeightSet<f32> {
    /// Deterministic pseudorandom weights, every entry uniform in
    /// `[-1/sqrt(h), 1/sqrt(h)]`. Matrices are drawn in a fixed order from one
    /// ChaCha8 stream, so a seed fully determines the result.
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let bound = 1.0 / (config.hidden_dim as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| {
            let data = (0..rows * cols).map(|_| dist.sample(&mut rng)).collect();
            Matrix::new(rows, cols, data).expect("shape is consistent by construction")
        };
        let h = config.hidden_dim;
        let embedding = draw(config.vocab_size, h);
        let layers = (0..config.num_layers)
            .map(|_| LayerWeights {
                w_q: draw(h, h),
                w_k: draw(h, config.kv_dim()),
                w_v: draw(h, config.kv_dim()),
                w_o: draw(h, h),
                w_1: draw(h, config.ffn_dim),
                w_2: draw(config.ffn_dim, h),
            })
            .collect();
        let unembedding = draw(h, config.vocab_size);
        WeightSet::new(config, embedding, layers, unembedding)
    }
}
