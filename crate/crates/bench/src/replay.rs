//! Replays a recorded attention trace through page selection and through
//! eviction, scoring each against the trace's own weights.

use anyhow::{ensure, Result};
use delta_core::{attention_recall, page_scores, raas_step, select_page_level, PageBudget, RaasState};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayStep {
    pub step: usize,
    pub seq_len: usize,
    pub delta_recall: f64,
    pub raas_recall: f64,
}

fn covered(pages: &[usize], page_size: usize, seq_len: usize) -> Vec<usize> {
    pages.iter().flat_map(|&u| u * page_size..((u + 1) * page_size).min(seq_len)).collect()
}

/// `trace[i]` is the attention distribution at step `i`; lengths must not
/// shrink. Selection stays off until the context exceeds `budget_k`.
pub fn replay_contrast(trace: &[Vec<f64>], budget_k: usize, recency_l: usize, page_size: usize) -> Result<Vec<ReplayStep>> {
    let budget = PageBudget::new(budget_k, recency_l, page_size)?;
    let mut raas = RaasState::new(budget.pages, budget.recency_pages)?;
    let mut out = Vec::with_capacity(trace.len());
    let mut prev = 0;
    for (step, alpha) in trace.iter().enumerate() {
        let s = alpha.len();
        ensure!(s >= prev && s > 0, "trace lengths must be positive and non-decreasing");
        prev = s;
        let scores = page_scores(alpha, page_size);
        let total = scores.len();
        let (delta_pages, raas_pages) = if s > budget_k {
            let d = select_page_level(&scores, total, budget.pages, budget.recency_pages)?;
            raas_step(&mut raas, &scores, step as u64, 1.0 / s as f64);
            (d, raas.retained_pages())
        } else {
            ((0..total).collect(), (0..total).collect())
        };
        out.push(ReplayStep {
            step,
            seq_len: s,
            delta_recall: attention_recall(alpha, &covered(&delta_pages, page_size, s))?,
            raas_recall: attention_recall(alpha, &covered(&raas_pages, page_size, s))?,
        });
    }
    Ok(out)
}
