//! Run configuration: a JSON file, command-line flags layered on top, then
//! defaults for whatever neither supplied.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::Args;
use delta_core::{Policy, TierConfig};
use serde::{Deserialize, Serialize};

/// Every run key as optional, shared by the config file and the CLI flags.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOverrides {
    /// Weight file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// One of full, delta, quest, raas.
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub full_layers: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub delta_layers: Option<Vec<usize>>,
    #[arg(long)]
    pub budget_k: Option<usize>,
    #[arg(long)]
    pub recency_l: Option<usize>,
    #[arg(long)]
    pub page_size: Option<usize>,
    #[arg(long)]
    pub prompt_len: Option<usize>,
    #[arg(long)]
    pub max_new: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub record_recall: Option<bool>,
    /// Record per-layer top-k attention sets every N steps.
    #[arg(long)]
    pub record_overlap_every: Option<usize>,
    /// Size of the recorded top-k sets.
    #[arg(long)]
    pub overlap_top_k: Option<usize>,
    /// Metrics CSV path; summary and trace files are written beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunOverrides {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Fields set in `top` win over those in `self`.
    pub fn layered(self, top: RunOverrides) -> RunOverrides {
        RunOverrides {
            model: top.model.or(self.model),
            policy: top.policy.or(self.policy),
            full_layers: top.full_layers.or(self.full_layers),
            delta_layers: top.delta_layers.or(self.delta_layers),
            budget_k: top.budget_k.or(self.budget_k),
            recency_l: top.recency_l.or(self.recency_l),
            page_size: top.page_size.or(self.page_size),
            prompt_len: top.prompt_len.or(self.prompt_len),
            max_new: top.max_new.or(self.max_new),
            batch: top.batch.or(self.batch),
            seed: top.seed.or(self.seed),
            record_recall: top.record_recall.or(self.record_recall),
            record_overlap_every: top.record_overlap_every.or(self.record_overlap_every),
            overlap_top_k: top.overlap_top_k.or(self.overlap_top_k),
            out: top.out.or(self.out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: PathBuf,
    #[serde(serialize_with = "policy_name")]
    pub policy: Policy,
    pub full_layers: Vec<usize>,
    pub delta_layers: Vec<usize>,
    pub budget_k: usize,
    pub recency_l: usize,
    pub page_size: usize,
    pub prompt_len: usize,
    pub max_new: usize,
    pub batch: usize,
    pub seed: u64,
    pub record_recall: bool,
    pub record_overlap_every: Option<usize>,
    pub overlap_top_k: usize,
    pub out: PathBuf,
}

fn policy_name<S: serde::Serializer>(p: &Policy, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(p.as_str())
}

impl RunConfig {
    /// Fills defaults and checks the run invariants. The model file must exist.
    pub fn resolve(o: RunOverrides) -> Result<Self> {
        let cfg = Self::resolve_unchecked(o)?;
        ensure!(cfg.model.is_file(), "model file {} does not exist", cfg.model.display());
        Ok(cfg)
    }

    /// As [`RunConfig::resolve`] without touching the filesystem.
    pub fn resolve_unchecked(o: RunOverrides) -> Result<Self> {
        let policy: Policy = o.policy.as_deref().unwrap_or("delta").parse()?;
        let cfg = RunConfig {
            model: o.model.context("no model file given")?,
            policy,
            full_layers: o.full_layers.unwrap_or_else(|| vec![0, 1]),
            delta_layers: o.delta_layers.unwrap_or_else(|| vec![2]),
            budget_k: o.budget_k.unwrap_or(1024),
            recency_l: o.recency_l.unwrap_or(16),
            page_size: o.page_size.unwrap_or(delta_core::kv_cache::DEFAULT_PAGE_SIZE),
            prompt_len: o.prompt_len.unwrap_or(512),
            max_new: o.max_new.unwrap_or(64),
            batch: o.batch.unwrap_or(1),
            seed: o.seed.unwrap_or(0),
            record_recall: o.record_recall.unwrap_or(false),
            record_overlap_every: o.record_overlap_every,
            overlap_top_k: o.overlap_top_k.unwrap_or(32),
            out: o.out.context("no output path given")?,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.recency_l > self.budget_k {
            bail!("recency_l {} exceeds budget_k {}", self.recency_l, self.budget_k);
        }
        ensure!(self.record_overlap_every != Some(0), "record_overlap_every must be at least 1");
        ensure!(self.batch >= 1, "batch must be at least 1");
        ensure!(self.prompt_len >= 1, "prompt_len must be at least 1");
        ensure!(self.page_size >= 1, "page_size must be at least 1");
        ensure!(self.overlap_top_k >= 1, "overlap_top_k must be at least 1");
        Ok(())
    }

    pub fn tiers(&self) -> TierConfig {
        TierConfig {
            full_layers: self.full_layers.clone(),
            delta_layers: self.delta_layers.clone(),
            policy: self.policy,
            budget_k: self.budget_k,
            recency_l: self.recency_l,
            page_size: self.page_size,
        }
    }

    pub fn summary_path(&self) -> PathBuf {
        sibling(&self.out, "summary.json")
    }

    pub fn trace_path(&self) -> PathBuf {
        sibling(&self.out, "trace.json")
    }

    pub fn layers_path(&self) -> PathBuf {
        sibling(&self.out, "layers.csv")
    }
}

/// `run.csv` -> `run.<suffix>`.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunOverrides {
        RunOverrides { model: Some("m.dltw".into()), out: Some("run.csv".into()), ..Default::default() }
    }

    #[test]
    fn defaults_fill_missing_keys() {
        let c = RunConfig::resolve_unchecked(base()).unwrap();
        assert_eq!(c.policy, Policy::Delta);
        assert_eq!((c.budget_k, c.recency_l, c.page_size), (1024, 16, 16));
        assert_eq!(c.record_overlap_every, None);
        assert_eq!(c.summary_path(), PathBuf::from("run.summary.json"));
        assert_eq!(c.trace_path(), PathBuf::from("run.trace.json"));
    }

    #[test]
    fn flags_override_file_values() {
        let file: RunOverrides = serde_json::from_str(
            r#"{"model": "a.dltw", "policy": "quest", "budget_k": 64, "recency_l": 8, "out": "x.csv",
                "full_layers": [0], "delta_layers": [1, 3], "record_overlap_every": null}"#,
        )
        .unwrap();
        let flags = RunOverrides { budget_k: Some(128), policy: Some("raas".into()), ..Default::default() };
        let c = RunConfig::resolve_unchecked(file.layered(flags)).unwrap();
        assert_eq!(c.budget_k, 128);
        assert_eq!(c.policy, Policy::Raas);
        assert_eq!(c.recency_l, 8);
        assert_eq!(c.delta_layers, vec![1, 3]);
        assert_eq!(c.model, PathBuf::from("a.dltw"));
    }

    #[test]
    fn rejects_invalid_runs() {
        let bad = |o: RunOverrides| RunConfig::resolve_unchecked(o).is_err();
        assert!(bad(RunOverrides { recency_l: Some(32), budget_k: Some(16), ..base() }));
        assert!(bad(RunOverrides { record_overlap_every: Some(0), ..base() }));
        assert!(bad(RunOverrides { policy: Some("h2o".into()), ..base() }));
        assert!(bad(RunOverrides { model: None, ..base() }));
        assert!(serde_json::from_str::<RunOverrides>(r#"{"modle": "x"}"#).is_err());
        assert!(RunConfig::resolve(base()).is_err());
    }
}
