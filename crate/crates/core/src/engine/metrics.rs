/// Per-decode-step measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    /// Cache length after this step's token was appended.
    pub seq_len: usize,
    pub tokens_attended: Vec<usize>,
    /// Mean-over-heads recall of each sparse layer, when recorded.
    pub layer_recall: Vec<Option<f64>>,
    pub tokens_attended_mean_sparse: Option<f64>,
    pub recall_mean: Option<f64>,
    pub recall_min: Option<f64>,
    pub attn_time_ns: u64,
    pub ffn_time_ns: u64,
}

/// Top-k positions of each layer's max-over-heads attention at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub step: u64,
    pub seq_len: usize,
    pub layers: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<u32>,
    pub metrics: Vec<StepMetrics>,
}

pub(super) fn summarize(
    step: u64,
    seq_len: usize,
    tokens_attended: Vec<usize>,
    layer_recall: Vec<Option<f64>>,
    sparse: &[usize],
    attn_time_ns: u64,
    ffn_time_ns: u64,
) -> StepMetrics {
    let tokens_attended_mean_sparse = (!sparse.is_empty())
        .then(|| sparse.iter().map(|&l| tokens_attended[l] as f64).sum::<f64>() / sparse.len() as f64);
    let recalls: Vec<f64> = sparse.iter().filter_map(|&l| layer_recall[l]).collect();
    let (recall_mean, recall_min) = if recalls.is_empty() {
        (None, None)
    } else {
        (
            Some(recalls.iter().sum::<f64>() / recalls.len() as f64),
            Some(recalls.iter().copied().fold(f64::INFINITY, f64::min)),
        )
    };
    StepMetrics {
        step,
        seq_len,
        tokens_attended,
        layer_recall,
        tokens_attended_mean_sparse,
        recall_mean,
        recall_min,
        attn_time_ns,
        ffn_time_ns,
    }
}
