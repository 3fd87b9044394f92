//! Token importance scoring, recency-window merging and page-level budget
//! selection, plus the attention-recall metric.
//!
//! Ties in every top-k are broken toward the larger (more recent) index,
//! which makes selections deterministic and nested in the budget.

use std::cmp::Ordering;

use crate::error::{config, usage, Result};
use crate::kv_cache::page_of;
use crate::Scalar;

/// Per-position importance: the maximum attention weight any head assigns.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<T>(pub Vec<T>);

impl<T: Scalar> ScoreVector<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Scores of positions older than the last `recency` ones.
    pub fn older(&self, recency: usize) -> &[T] {
        &self.0[..self.0.len().saturating_sub(recency)]
    }
}

pub fn token_scores<T: Scalar, H: AsRef<[T]>>(head_weights: &[H]) -> Result<ScoreVector<T>> {
    let Some(first) = head_weights.first() else {
        return Err(usage!("no head weights supplied"));
    };
    let s = first.as_ref().len();
    let mut out = first.as_ref().to_vec();
    for head in &head_weights[1..] {
        let head = head.as_ref();
        if head.len() != s {
            return Err(usage!("head weight vectors have unequal lengths ({} vs {s})", head.len()));
        }
        for (o, &w) in out.iter_mut().zip(head) {
            if w > *o {
                *o = w;
            }
        }
    }
    Ok(ScoreVector(out))
}

/// Sums token scores per page; a partial final page sums its filled slots.
pub fn page_scores<T: Scalar>(scores: &[T], page_size: usize) -> Vec<T> {
    assert!(page_size >= 1, "page size must be positive");
    scores.chunks(page_size).map(|c| c.iter().copied().sum()).collect()
}

fn rank_desc<T: Scalar>(scores: &[T], a: usize, b: usize) -> Ordering {
    scores[b].as_f64().total_cmp(&scores[a].as_f64()).then(b.cmp(&a))
}

/// Indices of the `k` largest scores in ascending index order.
pub fn top_k_indices<T: Scalar>(scores: &[T], k: usize) -> Vec<usize> {
    let k = k.min(scores.len());
    if k == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| rank_desc(scores, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// Token-level selection: top `k - L` older positions united with the last
/// `L` positions. Returns every position when `k >= s`.
pub fn select_token_level<T: Scalar>(scores: &[T], k: usize, recency: usize) -> Result<Vec<usize>> {
    if recency > k {
        return Err(config!("recency window {recency} exceeds token budget {k}"));
    }
    let s = scores.len();
    if k >= s {
        return Ok((0..s).collect());
    }
    let older = s - recency;
    let mut out = top_k_indices(&scores[..older], k - recency);
    out.extend(older..s);
    Ok(out)
}

/// Page-level selection: the last `recency_pages` pages plus the top
/// `budget_pages - recency_pages` older pages by score. `page_scores` holds
/// one score per page; scores of the recency pages are ignored.
pub fn select_page_level<T: Scalar>(
    page_scores: &[T],
    total_pages: usize,
    budget_pages: usize,
    recency_pages: usize,
) -> Result<Vec<usize>> {
    if recency_pages > budget_pages {
        return Err(config!("recency pages {recency_pages} exceed page budget {budget_pages}"));
    }
    if budget_pages >= total_pages {
        return Ok((0..total_pages).collect());
    }
    let older = total_pages - recency_pages;
    if page_scores.len() < older {
        return Err(usage!("{} page scores for {older} selectable pages", page_scores.len()));
    }
    let mut out = top_k_indices(&page_scores[..older], budget_pages - recency_pages);
    out.extend(older..total_pages);
    Ok(out)
}

/// Token budget `k` and recency window `L` rounded to pages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageBudget {
    /// `floor(k / P)`
    pub pages: usize,
    /// `ceil(L / P)`
    pub recency_pages: usize,
}

impl PageBudget {
    pub fn new(budget_k: usize, recency_l: usize, page_size: usize) -> Result<Self> {
        if page_size == 0 {
            return Err(config!("page size must be positive"));
        }
        if recency_l > budget_k {
            return Err(config!("recency window {recency_l} exceeds token budget {budget_k}"));
        }
        let b = Self { pages: budget_k / page_size, recency_pages: recency_l.div_ceil(page_size) };
        if b.pages < b.recency_pages {
            return Err(config!(
                "budget of {} pages cannot hold {} recency pages (k={budget_k}, L={recency_l}, P={page_size})",
                b.pages,
                b.recency_pages
            ));
        }
        Ok(b)
    }
}

/// Reduced context shared by all layers of one sparse group for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPlan {
    pub page_ids: Vec<usize>,
    pub seq_len: usize,
    pub page_size: usize,
    pub budget_k: usize,
    pub recency_l: usize,
    pub created_at_step: u64,
}

impl SelectionPlan {
    pub fn covered_positions(&self) -> Vec<usize> {
        self.page_ids
            .iter()
            .flat_map(|&p| p * self.page_size..((p + 1) * self.page_size).min(self.seq_len))
            .collect()
    }

    pub fn covered_len(&self) -> usize {
        self.page_ids
            .iter()
            .map(|&p| ((p + 1) * self.page_size).min(self.seq_len) - p * self.page_size)
            .sum()
    }

    pub fn covers(&self, position: usize) -> bool {
        self.page_ids.binary_search(&page_of(position, self.page_size)).is_ok()
    }
}

/// Fraction of the attention mass that falls on `selected`.
pub fn attention_recall<T: Scalar>(weights: &[T], selected: &[usize]) -> Result<f64> {
    let mut kept = 0.0;
    for &u in selected {
        let w = weights
            .get(u)
            .ok_or_else(|| usage!("position {u} out of range for {} weights", weights.len()))?;
        kept += w.as_f64();
    }
    let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
    if total <= 0.0 {
        return Err(usage!("attention weights have no mass"));
    }
    Ok(kept / total)
}
