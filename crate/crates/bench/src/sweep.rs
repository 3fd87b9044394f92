//! Budget/recency grid over a fixed model and workload.

use std::path::Path;

use anyhow::Result;
use delta_core::{PageBudget, WeightSet32};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::run::execute;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub budget_k: usize,
    pub recency_l: usize,
    pub recall_mean: f64,
    pub recall_min: f64,
    pub tokens_attended_mean_sparse: f64,
    pub steps: usize,
}

/// The `(K, L)` pairs that can be run, in K-major order. Others are
/// reported on stderr and dropped.
pub fn valid_pairs(ks: &[usize], ls: &[usize], page_size: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for &k in ks {
        for &l in ls {
            match PageBudget::new(k, l, page_size) {
                Ok(b) if b.pages > 0 => out.push((k, l)),
                Ok(_) => eprintln!("warning: skipping K={k} L={l}: budget below one page of {page_size}"),
                Err(e) => eprintln!("warning: skipping K={k} L={l}: {e}"),
            }
        }
    }
    out
}

/// Runs the template once per valid pair with recall recording on.
pub fn sweep(template: &RunConfig, weights: &WeightSet32, ks: &[usize], ls: &[usize]) -> Result<Vec<SweepCell>> {
    valid_pairs(ks, ls, template.page_size)
        .into_par_iter()
        .map(|(k, l)| {
            let cfg = RunConfig { budget_k: k, recency_l: l, record_recall: true, ..template.clone() };
            let report = execute(&cfg, weights.clone())?;
            let metrics: Vec<_> = report.sequences.iter().flat_map(|s| s.metrics.iter()).collect();
            let steps = metrics.len();
            let mean = |f: &dyn Fn(&delta_core::StepMetrics) -> Option<f64>| {
                let v: Vec<f64> = metrics.iter().filter_map(|m| f(m)).collect();
                if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 }
            };
            Ok(SweepCell {
                budget_k: k,
                recency_l: l,
                recall_mean: mean(&|m| m.recall_mean),
                recall_min: metrics.iter().filter_map(|m| m.recall_min).fold(f64::NAN, f64::min),
                tokens_attended_mean_sparse: mean(&|m| m.tokens_attended_mean_sparse),
                steps,
            })
        })
        .collect()
}

pub fn write_grid(path: &Path, cells: &[SweepCell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

/// Text table of mean recall, K down and L across.
pub fn format_grid(cells: &[SweepCell]) -> String {
    let mut ks: Vec<usize> = cells.iter().map(|c| c.budget_k).collect();
    let mut ls: Vec<usize> = cells.iter().map(|c| c.recency_l).collect();
    ks.dedup();
    ls.sort_unstable();
    ls.dedup();
    let mut s = format!("{:>8}", "K \\ L");
    for l in &ls {
        s += &format!("{l:>9}");
    }
    s.push('\n');
    for k in &ks {
        s += &format!("{k:>8}");
        for l in &ls {
            match cells.iter().find(|c| c.budget_k == *k && c.recency_l == *l) {
                Some(c) => s += &format!("{:>9.4}", c.recall_mean),
                None => s += &format!("{:>9}", "-"),
            }
        }
        s.push('\n');
    }
    s
}
