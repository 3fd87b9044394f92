//! Tiered decode orchestration.
//!
//! Per token and layer: project, append to the cache, then attend according
//! to the layer's role. Full-prefix layers and selection layers attend to the
//! whole cache; a selection layer additionally builds a fresh
//! [`SelectionPlan`] for the sparse layers above it, which attend only to
//! the planned pages. Plans live for exactly one decode step.

mod metrics;
mod tiers;

use std::time::Instant;

pub use metrics::{Generation, Observation, StepMetrics};
pub use tiers::{validate_tiers, LayerRole, Policy, TierConfig, ValidatedTiers};

use crate::baselines::{quest_select, raas_step, PageReps, RaasState};
use crate::error::{usage, Error, Result};
use crate::kv_cache::PagedKvCache;
use crate::model::{
    attend_segments, ffn_forward, merge_and_project, project_qkv, rms_norm, KvSegment, ModelConfig, Qkv,
};
use crate::selection::{page_scores, select_page_level, token_scores, top_k_indices, SelectionPlan};
use crate::{Scalar, WeightSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineOptions {
    /// Compute each sparse layer's recall against its own full attention.
    pub record_recall: bool,
    /// Record per-layer top-k attention sets every N decode steps.
    pub observe_every: Option<usize>,
    pub observe_top_k: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self { record_recall: false, observe_every: None, observe_top_k: 32 }
    }
}

/// Immutable model plus tier layout. Shareable across sequence workers.
#[derive(Debug, Clone)]
pub struct Engine<T> {
    weights: WeightSet<T>,
    tiers: ValidatedTiers,
    options: EngineOptions,
    head_groups: Vec<usize>,
    sparse_layers: Vec<usize>,
}

/// Mutable per-sequence decode state.
#[derive(Debug, Clone)]
pub struct DecodeState<T> {
    cache: PagedKvCache<T>,
    /// Indexed by selection layer.
    plans: Vec<Option<SelectionPlan>>,
    raas: Vec<Option<RaasState>>,
    /// `quest_reps[layer][page][group]`, kept for selection layers only.
    quest_reps: Vec<Vec<Vec<PageReps<T>>>>,
    step: u64,
    last_logits: Option<Vec<T>>,
    observations: Vec<Observation>,
}

impl<T: Scalar> DecodeState<T> {
    pub fn cache(&self) -> &PagedKvCache<T> {
        &self.cache
    }

    pub fn seq_len(&self) -> usize {
        self.cache.seq_len(0)
    }

    /// Number of decode steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn last_logits(&self) -> Option<&[T]> {
        self.last_logits.as_deref()
    }

    pub fn plan(&self, delta_layer: usize) -> Option<&SelectionPlan> {
        self.plans.get(delta_layer)?.as_ref()
    }

    pub fn raas_state(&self, delta_layer: usize) -> Option<&RaasState> {
        self.raas.get(delta_layer)?.as_ref()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn take_observations(&mut self) -> Vec<Observation> {
        std::mem::take(&mut self.observations)
    }
}

const PREFILL_CHUNK: usize = 64;

struct LayerOutcome<T> {
    heads: Vec<Vec<T>>,
    tokens_attended: usize,
}

impl<T: Scalar> Engine<T> {
    pub fn new(weights: WeightSet<T>, tiers: &TierConfig, options: EngineOptions) -> Result<Self> {
        weights.validate()?;
        let tiers = validate_tiers(tiers, &weights.config)?;
        let cfg = weights.config;
        let head_groups = (0..cfg.num_query_heads).map(|j| cfg.group_of_head(j)).collect();
        let sparse_layers = tiers.sparse_layers().collect();
        Ok(Self { weights, tiers, options, head_groups, sparse_layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.weights.config
    }

    pub fn tiers(&self) -> &ValidatedTiers {
        &self.tiers
    }

    pub fn options(&self) -> EngineOptions {
        self.options
    }

    pub fn new_state(&self) -> DecodeState<T> {
        let cfg = self.config();
        let n = cfg.num_layers;
        let cache = PagedKvCache::new(n, cfg.num_kv_groups, cfg.head_dim(), self.tiers.config().page_size)
            .expect("page size validated with the tiers");
        let raas = (0..n)
            .map(|l| {
                (self.tiers.policy() == Policy::Raas && self.tiers.role(l) == LayerRole::Delta).then(|| {
                    let b = self.tiers.budget();
                    RaasState::new(b.pages, b.recency_pages).expect("budget validated with the tiers")
                })
            })
            .collect();
        DecodeState {
            cache,
            plans: vec![None; n],
            raas,
            quest_reps: vec![Vec::new(); n],
            step: 0,
            last_logits: None,
            observations: Vec::new(),
        }
    }

    /// Runs the prompt through every layer with full causal attention.
    /// Returns the logits after the last prompt token. May be called
    /// repeatedly to prefill in chunks, but not once decoding has started.
    pub fn prefill(&self, state: &mut DecodeState<T>, prompt: &[u32]) -> Result<Vec<T>> {
        if prompt.is_empty() {
            return Err(usage!("empty prompt"));
        }
        if state.step != 0 {
            return Err(usage!("prefill after {} decode steps", state.step));
        }
        self.check_tokens(prompt)?;
        let mut logits = Vec::new();
        for chunk in prompt.chunks(PREFILL_CHUNK) {
            logits = self.prefill_chunk(state, chunk)?;
        }
        state.last_logits = Some(logits.clone());
        Ok(logits)
    }

    /// Layer-major pass over a run of prompt tokens. Each token sees exactly
    /// the cache it would see when fed alone, so results match token-by-token
    /// prefill bit for bit while each layer's weights stay hot.
    fn prefill_chunk(&self, state: &mut DecodeState<T>, tokens: &[u32]) -> Result<Vec<T>> {
        let cfg = *self.config();
        let start = state.seq_len();
        let mut hidden: Vec<Vec<T>> =
            tokens.iter().map(|&t| self.weights.embedding.row(t as usize).to_vec()).collect();
        for (layer, lw) in self.weights.layers.iter().enumerate() {
            for (i, h) in hidden.iter_mut().enumerate() {
                let qkv = project_qkv(&rms_norm(h), lw, &cfg, start + i)?;
                self.store_kv(state, layer, &qkv)?;
                let outcome = self.attend_full(&state.cache, layer, &qkv.q, false)?.0;
                let attn = merge_and_project(&outcome.heads, &lw.w_o, &cfg)?;
                for (x, a) in h.iter_mut().zip(&attn) {
                    *x += *a;
                }
                let ffn = ffn_forward(&rms_norm(h), &lw.w_1, &lw.w_2)?;
                for (x, f) in h.iter_mut().zip(&ffn) {
                    *x += *f;
                }
            }
        }
        self.logits(hidden.last().expect("chunks are never empty"))
    }

    fn logits(&self, hidden: &[T]) -> Result<Vec<T>> {
        let logits = self.weights.unembedding.left_mul(&rms_norm(hidden))?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(logits)
    }

    /// Takes over a state built by an engine with the same weights, keeping
    /// its cache and rebuilding the policy-specific bookkeeping.
    pub fn adopt(&self, other: &DecodeState<T>) -> Result<DecodeState<T>> {
        let mut state = self.new_state();
        let (a, b) = (&state.cache, &other.cache);
        if (a.num_layers(), a.num_groups(), a.head_dim(), a.page_size())
            != (b.num_layers(), b.num_groups(), b.head_dim(), b.page_size())
        {
            return Err(usage!("cache shape does not match this engine"));
        }
        state.cache = other.cache.clone();
        state.step = other.step;
        state.last_logits = other.last_logits.clone();
        if self.tiers.policy() == Policy::Quest {
            for layer in 0..self.config().num_layers {
                if self.tiers.role(layer) != LayerRole::Delta {
                    continue;
                }
                state.quest_reps[layer] = (0..state.cache.page_count(layer))
                    .map(|id| {
                        (0..state.cache.num_groups())
                            .map(|g| {
                                let seg = &state.cache.segments(layer, g, &[id])?[0];
                                let d = state.cache.head_dim();
                                let mut rows = seg.keys.chunks(d);
                                let mut reps = PageReps::new(rows.next().expect("pages are never empty"));
                                rows.for_each(|k| reps.update(k));
                                Ok(reps)
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<_>>()?;
            }
        }
        Ok(state)
    }

    /// Feeds one token through the tiered stack and returns next-token logits.
    pub fn decode_step(&self, state: &mut DecodeState<T>, token: u32) -> Result<(Vec<T>, StepMetrics)> {
        if state.last_logits.is_none() {
            return Err(usage!("decode_step before prefill"));
        }
        self.check_tokens(&[token])?;
        let (logits, metrics) = self.forward(state, token)?;
        state.step += 1;
        state.last_logits = Some(logits.clone());
        Ok((logits, metrics))
    }

    /// Greedy generation. Every emitted token is fed back through
    /// [`Engine::decode_step`], so there is one metrics record per token.
    pub fn generate(&self, state: &mut DecodeState<T>, max_new: usize, eos: Option<u32>) -> Result<Generation> {
        let mut out = Generation { tokens: Vec::with_capacity(max_new), metrics: Vec::with_capacity(max_new) };
        for _ in 0..max_new {
            let logits = state.last_logits.as_deref().ok_or_else(|| usage!("generate before prefill"))?;
            let tok = argmax(logits);
            out.tokens.push(tok);
            let (_, m) = self.decode_step(state, tok)?;
            out.metrics.push(m);
            if Some(tok) == eos {
                break;
            }
        }
        Ok(out)
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        let vocab = self.config().vocab_size;
        match tokens.iter().find(|&&t| t as usize >= vocab) {
            Some(t) => Err(usage!("token id {t} outside vocabulary of {vocab}")),
            None => Ok(()),
        }
    }

    fn forward(&self, state: &mut DecodeState<T>, token: u32) -> Result<(Vec<T>, StepMetrics)> {
        let cfg = *self.config();
        let position = state.seq_len();
        let mut hidden = self.weights.embedding.row(token as usize).to_vec();
        let mut tokens_attended = vec![0; cfg.num_layers];
        let mut layer_recall = vec![None; cfg.num_layers];
        let mut observed = Vec::new();
        let observe = self
            .options
            .observe_every.is_some_and(|n| n > 0 && state.step.is_multiple_of(n as u64));
        let (mut attn_ns, mut ffn_ns) = (0u64, 0u64);

        for layer in 0..cfg.num_layers {
            let lw = &self.weights.layers[layer];
            let t0 = Instant::now();
            let normed = rms_norm(&hidden);
            let qkv = project_qkv(&normed, lw, &cfg, position)?;
            self.store_kv(state, layer, &qkv)?;
            let outcome = self.attend_tiered(state, layer, &qkv.q)?;
            let attn = merge_and_project(&outcome.heads, &lw.w_o, &cfg)?;
            attn_ns += t0.elapsed().as_nanos() as u64;
            tokens_attended[layer] = outcome.tokens_attended;

            let want_recall =
                self.options.record_recall && matches!(self.tiers.role(layer), LayerRole::Sparse { .. });
            if want_recall || observe {
                let (_, weights) = self.attend_full(&state.cache, layer, &qkv.q, true)?;
                if want_recall {
                    layer_recall[layer] = Some(self.layer_recall(state, layer, &weights)?);
                }
                if observe {
                    let scores = token_scores(&weights)?;
                    observed.push(top_k_indices(scores.as_slice(), self.options.observe_top_k));
                }
            }

            for (h, a) in hidden.iter_mut().zip(&attn) {
                *h += *a;
            }
            let t1 = Instant::now();
            let ffn = ffn_forward(&rms_norm(&hidden), &lw.w_1, &lw.w_2)?;
            ffn_ns += t1.elapsed().as_nanos() as u64;
            for (h, f) in hidden.iter_mut().zip(&ffn) {
                *h += *f;
            }
        }

        let logits = self.logits(&hidden)?;
        let seq_len = state.seq_len();
        if observe {
            state.observations.push(Observation { step: state.step, seq_len, layers: observed });
        }
        let metrics = metrics::summarize(
            state.step,
            seq_len,
            tokens_attended,
            layer_recall,
            &self.sparse_layers,
            attn_ns,
            ffn_ns,
        );
        Ok((logits, metrics))
    }

    fn store_kv(&self, state: &mut DecodeState<T>, layer: usize, qkv: &Qkv<T>) -> Result<()> {
        let position = state.cache.append(layer, &qkv.k, &qkv.v)?;
        if self.tiers.policy() == Policy::Quest && self.tiers.role(layer) == LayerRole::Delta {
            let reps = &mut state.quest_reps[layer];
            if position % self.tiers.config().page_size == 0 {
                reps.push(qkv.k.iter().map(|k| PageReps::new(k)).collect());
            } else {
                let page = reps.last_mut().ok_or_else(|| Error::Invariant("missing page reps".into()))?;
                for (r, k) in page.iter_mut().zip(&qkv.k) {
                    r.update(k);
                }
            }
        }
        Ok(())
    }

    /// Full attention of every head over the layer's entire cache.
    fn attend_full(
        &self,
        cache: &PagedKvCache<T>,
        layer: usize,
        queries: &[Vec<T>],
        want_weights: bool,
    ) -> Result<(LayerOutcome<T>, Vec<Vec<T>>)> {
        let groups: Vec<Vec<KvSegment<'_, T>>> =
            (0..cache.num_groups()).map(|g| cache.all_segments(layer, g)).collect();
        self.attend_heads(&groups, queries, want_weights, cache.seq_len(layer))
    }

    fn attend_heads(
        &self,
        groups: &[Vec<KvSegment<'_, T>>],
        queries: &[Vec<T>],
        want_weights: bool,
        tokens_attended: usize,
    ) -> Result<(LayerOutcome<T>, Vec<Vec<T>>)> {
        let mut heads = Vec::with_capacity(queries.len());
        let mut weights = Vec::new();
        for (q, &g) in queries.iter().zip(&self.head_groups) {
            let a = attend_segments(q, &groups[g], want_weights)?;
            heads.push(a.output);
            if let Some(w) = a.weights {
                weights.push(w);
            }
        }
        Ok((LayerOutcome { heads, tokens_attended }, weights))
    }

    fn attend_tiered(&self, state: &mut DecodeState<T>, layer: usize, queries: &[Vec<T>]) -> Result<LayerOutcome<T>> {
        let policy = self.tiers.policy();
        match self.tiers.role(layer) {
            LayerRole::Full => Ok(self.attend_full(&state.cache, layer, queries, false)?.0),
            _ if policy == Policy::Full => Ok(self.attend_full(&state.cache, layer, queries, false)?.0),
            LayerRole::Delta => {
                let seq_len = state.cache.seq_len(layer);
                let active = seq_len > self.tiers.config().budget_k;
                let needs_weights = active && matches!(policy, Policy::Delta | Policy::Raas);
                let (outcome, weights) = self.attend_full(&state.cache, layer, queries, needs_weights)?;
                let page_ids = if active {
                    self.select_pages(state, layer, queries, &weights)?
                } else {
                    (0..state.cache.page_count(layer)).collect()
                };
                let cfg = self.tiers.config();
                state.plans[layer] = Some(SelectionPlan {
                    page_ids,
                    seq_len,
                    page_size: cfg.page_size,
                    budget_k: cfg.budget_k,
                    recency_l: cfg.recency_l,
                    created_at_step: state.step,
                });
                Ok(outcome)
            }
            LayerRole::Sparse { governor } => {
                let plan = self.current_plan(state, governor)?;
                if plan.seq_len != state.cache.seq_len(layer) {
                    return Err(Error::Invariant(format!(
                        "plan built at length {} read at length {}",
                        plan.seq_len,
                        state.cache.seq_len(layer)
                    )));
                }
                if let Some(raas) = &state.raas[governor] {
                    check_readable(plan, raas)?;
                }
                let groups: Vec<Vec<KvSegment<'_, T>>> = (0..state.cache.num_groups())
                    .map(|g| state.cache.segments(layer, g, &plan.page_ids))
                    .collect::<Result<_>>()?;
                Ok(self.attend_heads(&groups, queries, false, plan.covered_len())?.0)
            }
        }
    }

    fn select_pages(
        &self,
        state: &mut DecodeState<T>,
        layer: usize,
        queries: &[Vec<T>],
        head_weights: &[Vec<T>],
    ) -> Result<Vec<usize>> {
        let budget = self.tiers.budget();
        let total = state.cache.page_count(layer);
        let page_size = self.tiers.config().page_size;
        match self.tiers.policy() {
            Policy::Delta => {
                let scores = token_scores(head_weights)?;
                let pages = page_scores(scores.as_slice(), page_size);
                select_page_level(&pages, total, budget.pages, budget.recency_pages)
            }
            Policy::Quest => quest_select(
                queries,
                &self.head_groups,
                &state.quest_reps[layer],
                budget.pages,
                budget.recency_pages,
            ),
            Policy::Raas => {
                let scores = token_scores(head_weights)?;
                let pages = page_scores(scores.as_slice(), page_size);
                let threshold = T::one() / T::lit(state.cache.seq_len(layer) as f64);
                let raas = state.raas[layer]
                    .as_mut()
                    .ok_or_else(|| Error::Invariant(format!("no eviction state at layer {layer}")))?;
                raas_step(raas, &pages, state.step, threshold);
                Ok(raas.retained_pages())
            }
            Policy::Full => Ok((0..total).collect()),
        }
    }

    fn current_plan<'s>(&self, state: &'s DecodeState<T>, governor: usize) -> Result<&'s SelectionPlan> {
        let plan = state.plans[governor]
            .as_ref()
            .ok_or_else(|| Error::Invariant(format!("selection layer {governor} has no plan")))?;
        if plan.created_at_step != state.step {
            return Err(Error::Invariant(format!(
                "stale plan from step {} read at step {}",
                plan.created_at_step, state.step
            )));
        }
        Ok(plan)
    }

    /// Mean over heads of the mass the current plan captures.
    fn layer_recall(&self, state: &DecodeState<T>, layer: usize, weights: &[Vec<T>]) -> Result<f64> {
        let LayerRole::Sparse { governor } = self.tiers.role(layer) else {
            return Ok(1.0);
        };
        let plan = self.current_plan(state, governor)?;
        let p = plan.page_size;
        let mut total = 0.0;
        for w in weights {
            let all: f64 = w.iter().map(|v| v.as_f64()).sum();
            let kept: f64 = plan
                .page_ids
                .iter()
                .map(|&id| w[id * p..((id + 1) * p).min(w.len())].iter().map(|v| v.as_f64()).sum::<f64>())
                .sum();
            total += kept / all;
        }
        Ok(total / weights.len() as f64)
    }
}

fn check_readable(plan: &SelectionPlan, raas: &RaasState) -> Result<()> {
    match plan.page_ids.iter().find(|&&p| raas.is_evicted(p)) {
        Some(p) => Err(Error::Invariant(format!("evicted page {p} requested by a sparse layer"))),
        None => Ok(()),
    }
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax<T: Scalar>(logits: &[T]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}
