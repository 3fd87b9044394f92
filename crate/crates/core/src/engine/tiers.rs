use std::fmt;
use std::str::FromStr;

use crate::error::{config, Error, Result};
use crate::model::ModelConfig;
use crate::selection::PageBudget;

/// How sparse layers obtain their context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    /// Every layer attends to the whole cache.
    Full,
    /// Selection layers score tokens by max-over-heads attention.
    Delta,
    /// Selection layers rank pages by min/max key bounds against the query.
    Quest,
    /// Pages that stop receiving attention are evicted permanently.
    Raas,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Full => "full",
            Policy::Delta => "delta",
            Policy::Quest => "quest",
            Policy::Raas => "raas",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Policy::Full),
            "delta" => Ok(Policy::Delta),
            "quest" => Ok(Policy::Quest),
            "raas" => Ok(Policy::Raas),
            other => Err(config!("unknown policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TierConfig {
    pub full_layers: Vec<usize>,
    pub delta_layers: Vec<usize>,
    pub policy: Policy,
    pub budget_k: usize,
    pub recency_l: usize,
    pub page_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerRole {
    Full,
    Delta,
    /// Attends to the plan produced by selection layer `governor`.
    Sparse { governor: usize },
}

/// A tier layout checked against a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedTiers {
    config: TierConfig,
    roles: Vec<LayerRole>,
    budget: PageBudget,
}

impl ValidatedTiers {
    pub fn config(&self) -> &TierConfig {
        &self.config
    }

    pub fn policy(&self) -> Policy {
        self.config.policy
    }

    pub fn roles(&self) -> &[LayerRole] {
        &self.roles
    }

    pub fn role(&self, layer: usize) -> LayerRole {
        self.roles[layer]
    }

    pub fn budget(&self) -> PageBudget {
        self.budget
    }

    pub fn sparse_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.roles.iter().enumerate().filter(|(_, r)| matches!(r, LayerRole::Sparse { .. })).map(|(i, _)| i)
    }

    /// `(delta layer, first sparse layer, last sparse layer)` per non-empty group.
    pub fn groups(&self) -> Vec<(usize, usize, usize)> {
        let mut out: Vec<(usize, usize, usize)> = Vec::new();
        for (layer, role) in self.roles.iter().enumerate() {
            if let LayerRole::Sparse { governor } = *role {
                match out.last_mut() {
                    Some(g) if g.0 == governor => g.2 = layer,
                    _ => out.push((governor, layer, layer)),
                }
            }
        }
        out
    }
}

pub fn validate_tiers(config: &TierConfig, model: &ModelConfig) -> Result<ValidatedTiers> {
    let n = model.num_layers;
    let f = config.full_layers.len();
    if config.full_layers.iter().enumerate().any(|(i, &l)| i != l) {
        return Err(config!("full layers must be the prefix 0..F, got {:?}", config.full_layers));
    }
    if f > n {
        return Err(config!("{f} full layers for a {n}-layer model"));
    }
    for (i, &d) in config.delta_layers.iter().enumerate() {
        if d >= n {
            return Err(config!("selection layer {d} out of range for {n} layers"));
        }
        if d < f {
            return Err(config!("selection layer {d} lies inside the full-attention prefix 0..{f}"));
        }
        if i > 0 && config.delta_layers[i - 1] >= d {
            return Err(config!("selection layers must be strictly ascending"));
        }
    }
    if config.page_size == 0 {
        return Err(config!("page size must be at least 1"));
    }
    if config.recency_l > config.budget_k {
        return Err(config!(
            "recency window {} exceeds token budget {}",
            config.recency_l,
            config.budget_k
        ));
    }

    let mut roles = Vec::with_capacity(n);
    let mut governor = None;
    for layer in 0..n {
        let role = if layer < f {
            LayerRole::Full
        } else if config.delta_layers.binary_search(&layer).is_ok() {
            governor = Some(layer);
            LayerRole::Delta
        } else if let Some(g) = governor {
            LayerRole::Sparse { governor: g }
        } else {
            return Err(config!("layer {layer} has no selection layer below it"));
        };
        roles.push(role);
    }

    let budget = if config.policy == Policy::Full {
        PageBudget {
            pages: config.budget_k / config.page_size,
            recency_pages: config.recency_l.div_ceil(config.page_size),
        }
    } else {
        let b = PageBudget::new(config.budget_k, config.recency_l, config.page_size)?;
        if b.pages == 0 {
            return Err(config!(
                "token budget {} is smaller than one page of {}",
                config.budget_k,
                config.page_size
            ));
        }
        b
    };
    Ok(ValidatedTiers { config: config.clone(), roles, budget })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(n: usize) -> ModelConfig {
        ModelConfig {
            num_layers: n,
            hidden_dim: 16,
            num_query_heads: 2,
            num_kv_groups: 1,
            ffn_dim: 16,
            vocab_size: 8,
            rope_base: 10_000.0,
        }
    }

    fn tiers(full: &[usize], delta: &[usize]) -> TierConfig {
        TierConfig {
            full_layers: full.to_vec(),
            delta_layers: delta.to_vec(),
            policy: Policy::Delta,
            budget_k: 1024,
            recency_l: 16,
            page_size: 16,
        }
    }

    #[test]
    fn accepts_28_layer_layout() {
        let v = validate_tiers(&tiers(&[0, 1], &[2, 14, 22]), &model(28)).unwrap();
        assert_eq!(v.groups(), vec![(2, 3, 13), (14, 15, 21), (22, 23, 27)]);
        assert_eq!(v.role(0), LayerRole::Full);
        assert_eq!(v.role(14), LayerRole::Delta);
        assert_eq!(v.role(27), LayerRole::Sparse { governor: 22 });
        assert_eq!(v.sparse_layers().count(), 28 - 5);
    }

    #[test]
    fn accepts_48_layer_layout() {
        let v = validate_tiers(&tiers(&[0, 1], &[2, 6, 42]), &model(48)).unwrap();
        assert_eq!(v.groups(), vec![(2, 3, 5), (6, 7, 41), (42, 43, 47)]);
    }

    #[test]
    fn rejects_unguarded_and_misplaced_layers() {
        assert!(matches!(validate_tiers(&tiers(&[0, 1], &[5]), &model(8)), Err(Error::Config(_))));
        assert!(validate_tiers(&tiers(&[0, 1], &[1, 4]), &model(8)).is_err());
        assert!(validate_tiers(&tiers(&[1, 2], &[3]), &model(8)).is_err());
        assert!(validate_tiers(&tiers(&[0], &[4, 2]), &model(8)).is_err());
        assert!(validate_tiers(&tiers(&[0], &[1, 9]), &model(8)).is_err());
        assert!(validate_tiers(&tiers(&[0, 1], &[]), &model(8)).is_err());
        // All-full needs no selection layer.
        assert!(validate_tiers(&tiers(&[0, 1, 2], &[]), &model(3)).is_ok());
    }

    #[test]
    fn rejects_bad_budgets() {
        let mut t = tiers(&[0], &[1]);
        t.recency_l = 2048;
        assert!(validate_tiers(&t, &model(4)).is_err());
        let mut t = tiers(&[0], &[1]);
        t.budget_k = 8;
        t.recency_l = 0;
        assert!(validate_tiers(&t, &model(4)).is_err());
        let mut t = tiers(&[0], &[1]);
        t.page_size = 0;
        assert!(validate_tiers(&t, &model(4)).is_err());
    }

    #[test]
    fn policy_round_trips_through_strings() {
        for p in [Policy::Full, Policy::Delta, Policy::Quest, Policy::Raas] {
            assert_eq!(p.as_str().parse::<Policy>().unwrap(), p);
        }
        assert!("sparse".parse::<Policy>().is_err());
    }
}
