//! Inter-layer overlap, sequential drift and selection-layer calibration.

use std::collections::BTreeSet;

use delta_core::{top_k_indices, Error, Observation, Result, Scalar};

/// Top-`k` positions of `weights`, recent positions winning ties.
pub fn top_k_set<T: Scalar>(weights: &[T], k: usize) -> Result<Vec<usize>> {
    if k > weights.len() {
        return Err(Error::Usage(format!("top-{k} of {} positions", weights.len())));
    }
    Ok(top_k_indices(weights, k))
}

/// `|a ∩ b| / k`.
pub fn set_overlap(a: &[usize], b: &[usize], k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let a: BTreeSet<_> = a.iter().collect();
    b.iter().filter(|x| a.contains(x)).count() as f64 / k as f64
}

/// `1 - |a ∩ b| / |a ∪ b|`; two empty sets have distance 0.
pub fn jaccard_distance(a: &[usize], b: &[usize]) -> f64 {
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    1.0 - a.intersection(&b).count() as f64 / union as f64
}

/// Top-`k` overlap between each adjacent pair of layers.
pub fn layer_overlap<T: Scalar, W: AsRef<[T]>>(weights_by_layer: &[W], k: usize) -> Result<Vec<f64>> {
    if let Some(first) = weights_by_layer.first() {
        let n = first.as_ref().len();
        if weights_by_layer.iter().any(|w| w.as_ref().len() != n) {
            return Err(Error::Usage("layers attend over different lengths".into()));
        }
    }
    let sets = weights_by_layer.iter().map(|w| top_k_set(w.as_ref(), k)).collect::<Result<Vec<_>>>()?;
    Ok(sets.windows(2).map(|p| set_overlap(&p[0], &p[1], k)).collect())
}

/// Drift of the top-`k` set between two steps, over their shared prefix.
pub fn drift_metric<T: Scalar>(a: &[T], b: &[T], k: usize) -> Result<f64> {
    let prefix = a.len().min(b.len());
    let sa = top_k_set(&a[..prefix], k)?;
    let sb = top_k_set(&b[..prefix], k)?;
    Ok(jaccard_distance(&sa, &sb))
}

/// Mean drift of each layer across consecutive observations.
pub fn mean_layer_drift(trace: &[Observation]) -> Vec<f64> {
    let layers = trace.first().map_or(0, |o| o.layers.len());
    let mut sums = vec![0.0; layers];
    for pair in trace.windows(2) {
        for (l, s) in sums.iter_mut().enumerate() {
            *s += jaccard_distance(&pair[0].layers[l], &pair[1].layers[l]);
        }
    }
    let pairs = trace.len().saturating_sub(1).max(1) as f64;
    sums.into_iter().map(|s| s / pairs).collect()
}

/// Mean adjacent-layer overlap across observations, normalized by set size.
pub fn mean_layer_overlap(trace: &[Observation]) -> Vec<f64> {
    let layers = trace.first().map_or(0, |o| o.layers.len());
    let mut sums = vec![0.0; layers.saturating_sub(1)];
    for obs in trace {
        for (l, s) in sums.iter_mut().enumerate() {
            let k = obs.layers[l].len().max(obs.layers[l + 1].len());
            *s += set_overlap(&obs.layers[l], &obs.layers[l + 1], k);
        }
    }
    let n = trace.len().max(1) as f64;
    sums.into_iter().map(|s| s / n).collect()
}

/// The `n_delta` layers at or above `full_prefix` with the largest mean
/// drift, ascending. Equal drift favors the earlier layer.
pub fn calibrate_delta_layers(trace: &[Observation], n_delta: usize, full_prefix: usize) -> Result<Vec<usize>> {
    if trace.is_empty() {
        return Err(Error::Usage("empty trace".into()));
    }
    if n_delta == 0 {
        return Err(Error::Config("at least one selection layer is required".into()));
    }
    let layers = trace[0].layers.len();
    if trace.iter().any(|o| o.layers.len() != layers) {
        return Err(Error::Usage("observations disagree on layer count".into()));
    }
    let eligible = layers.saturating_sub(full_prefix);
    if eligible < n_delta {
        return Err(Error::Config(format!("{eligible} eligible layers for {n_delta} selection layers")));
    }
    let drift = mean_layer_drift(trace);
    let mut ranked: Vec<usize> = (full_prefix..layers).collect();
    ranked.sort_by(|&a, &b| drift[b].total_cmp(&drift[a]).then(a.cmp(&b)));
    let mut picked = ranked[..n_delta].to_vec();
    picked.sort_unstable();
    Ok(picked)
}
