use super::{LayerWeights, ModelConfig};
use crate::error::{config, usage, Error, Result};
use crate::tensor::{axpy, dot, dot_rows};
use crate::{Matrix, Scalar};

/// Numerically stable softmax. Subtracts the maximum before exponentiating.
pub fn softmax_stable<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out)?;
    Ok(out)
}

pub fn softmax_in_place<T: Scalar>(x: &mut [T]) -> Result<()> {
    if x.is_empty() {
        return Err(usage!("softmax of an empty vector"));
    }
    let mut max = T::neg_infinity();
    for &v in x.iter() {
        if v.is_nan() {
            return Err(Error::Numeric("NaN logit".into()));
        }
        if v > max {
            max = v;
        }
    }
    if !max.is_finite() {
        return Err(Error::Numeric(format!("non-finite maximum logit {max}")));
    }
    let mut sum = T::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in x.iter_mut() {
        *v *= inv;
    }
    Ok(())
}

/// Rotary position encoding: each pair `(x[2i], x[2i+1])` is rotated by
/// `position * base^(-2i/d)`.
pub fn rope_apply<T: Scalar>(x: &[T], position: usize, rope_base: f64) -> Result<Vec<T>> {
    let mut out = x.to_vec();
    rope_in_place(&mut out, position, rope_base)?;
    Ok(out)
}

pub fn rope_in_place<T: Scalar>(x: &mut [T], position: usize, rope_base: f64) -> Result<()> {
    let d = x.len();
    if !d.is_multiple_of(2) {
        return Err(config!("rotary encoding needs an even head dimension, got {d}"));
    }
    if position == 0 {
        return Ok(());
    }
    for (i, pair) in x.chunks_exact_mut(2).enumerate() {
        // Angles are formed in f64; f32 loses too much at large positions.
        let angle = position as f64 * rope_base.powf(-2.0 * i as f64 / d as f64);
        let (sin, cos) = angle.sin_cos();
        let (sin, cos) = (T::lit(sin), T::lit(cos));
        let (a, b) = (pair[0], pair[1]);
        pair[0] = a * cos - b * sin;
        pair[1] = a * sin + b * cos;
    }
    Ok(())
}

#[inline]
pub fn silu<T: Scalar>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

/// RMS normalization without a learned gain.
pub fn rms_norm<T: Scalar>(x: &[T]) -> Vec<T> {
    let eps = T::lit(1e-6);
    let mean_sq = dot(x, x) / T::lit(x.len() as f64);
    let scale = T::one() / (mean_sq + eps).sqrt();
    x.iter().map(|&v| v * scale).collect()
}

/// Per-token projections: `m` query heads, `g` key groups, `g` value groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Qkv<T> {
    pub q: Vec<Vec<T>>,
    pub k: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

/// Projects one hidden vector to queries, keys and values and rotates the
/// queries and keys for `position`. Values are not rotated.
pub fn project_qkv<T: Scalar>(
    x: &[T],
    weights: &LayerWeights<T>,
    cfg: &ModelConfig,
    position: usize,
) -> Result<Qkv<T>> {
    if x.len() != cfg.hidden_dim {
        return Err(config!("hidden vector has length {}, expected {}", x.len(), cfg.hidden_dim));
    }
    if weights.w_q.shape() != (cfg.hidden_dim, cfg.hidden_dim)
        || weights.w_k.shape() != (cfg.hidden_dim, cfg.kv_dim())
        || weights.w_v.shape() != (cfg.hidden_dim, cfg.kv_dim())
    {
        return Err(config!("projection weights do not match the model config"));
    }
    let d = cfg.head_dim();
    let split = |flat: Vec<T>, rotate: bool| -> Result<Vec<Vec<T>>> {
        flat.chunks_exact(d)
            .map(|c| {
                let mut head = c.to_vec();
                if rotate {
                    rope_in_place(&mut head, position, cfg.rope_base)?;
                }
                Ok(head)
            })
            .collect()
    };
    Ok(Qkv {
        q: split(weights.w_q.left_mul(x)?, true)?,
        k: split(weights.w_k.left_mul(x)?, true)?,
        v: split(weights.w_v.left_mul(x)?, false)?,
    })
}

/// A run of cached key/value rows, `keys.len() == values.len() == n * d`.
#[derive(Debug, Clone, Copy)]
pub struct KvSegment<'a, T> {
    pub keys: &'a [T],
    pub values: &'a [T],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attended<T> {
    pub output: Vec<T>,
    /// Softmax weights over the attended rows, in row order.
    pub weights: Option<Vec<T>>,
}

/// Scaled dot-product attention of one query over contiguous key/value rows.
pub fn attend<T: Scalar>(q: &[T], keys: &[T], values: &[T], want_weights: bool) -> Result<Attended<T>> {
    attend_segments(q, &[KvSegment { keys, values }], want_weights)
}

/// Attention over several segments treated as one concatenated row set.
///
/// The softmax is normalized over exactly the rows supplied, so passing a
/// subset of the cache renormalizes over that subset. Results do not depend
/// on how rows are split into segments.
pub fn attend_segments<T: Scalar>(
    q: &[T],
    segments: &[KvSegment<'_, T>],
    want_weights: bool,
) -> Result<Attended<T>> {
    let d = q.len();
    if d == 0 {
        return Err(usage!("empty query vector"));
    }
    let mut n = 0;
    for seg in segments {
        if seg.keys.len() != seg.values.len() || seg.keys.len() % d != 0 {
            return Err(usage!(
                "segment with {} key and {} value entries for head dim {d}",
                seg.keys.len(),
                seg.values.len()
            ));
        }
        n += seg.keys.len() / d;
    }
    if n == 0 {
        return Err(usage!("attention over an empty key set"));
    }
    let scale = T::one() / T::lit(d as f64).sqrt();
    let mut weights = Vec::with_capacity(n);
    for seg in segments {
        let from = weights.len();
        dot_rows(q, seg.keys, &mut weights);
        for w in &mut weights[from..] {
            *w *= scale;
        }
    }
    softmax_in_place(&mut weights)?;
    let mut output = vec![T::zero(); d];
    let mut w = weights.iter();
    for seg in segments {
        for v in seg.values.chunks_exact(d) {
            axpy(*w.next().expect("one weight per row"), v, &mut output);
        }
    }
    Ok(Attended { output, weights: want_weights.then_some(weights) })
}

/// Concatenates the `m` head outputs and multiplies by `W_O`.
pub fn merge_and_project<T: Scalar>(heads: &[Vec<T>], w_o: &Matrix<T>, cfg: &ModelConfig) -> Result<Vec<T>> {
    if heads.len() != cfg.num_query_heads {
        return Err(config!("expected {} head outputs, got {}", cfg.num_query_heads, heads.len()));
    }
    let d = cfg.head_dim();
    let mut concat = Vec::with_capacity(heads.len() * d);
    for h in heads {
        if h.len() != d {
            return Err(config!("head output of length {}, expected {d}", h.len()));
        }
        concat.extend_from_slice(h);
    }
    w_o.left_mul(&concat)
}

/// `silu(x W1) W2`.
pub fn ffn_forward<T: Scalar>(x: &[T], w_1: &Matrix<T>, w_2: &Matrix<T>) -> Result<Vec<T>> {
    if w_1.cols() != w_2.rows() || w_2.cols() != x.len() {
        return Err(config!(
            "FFN shapes {:?} and {:?} do not fit a hidden vector of length {}",
            w_1.shape(),
            w_2.shape(),
            x.len()
        ));
    }
    let mut inner = w_1.left_mul(x)?;
    for v in inner.iter_mut() {
        *v = silu(*v);
    }
    w_2.left_mul(&inner)
}
