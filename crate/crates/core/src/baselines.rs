//! Reference policies: query-aware page retrieval from per-page key bounds,
//! and threshold-refresh page eviction.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{config, usage, Result};
use crate::selection::top_k_indices;
use crate::Scalar;

/// Elementwise min/max of the keys stored in one page for one KV group.
#[derive(Debug, Clone, PartialEq)]
pub struct PageReps<T> {
    pub min_key: Vec<T>,
    pub max_key: Vec<T>,
}

impl<T: Scalar> PageReps<T> {
    pub fn new(first_key: &[T]) -> Self {
        Self { min_key: first_key.to_vec(), max_key: first_key.to_vec() }
    }

    pub fn update(&mut self, key: &[T]) {
        for ((lo, hi), &k) in self.min_key.iter_mut().zip(self.max_key.iter_mut()).zip(key) {
            *lo = lo.min(k);
            *hi = hi.max(k);
        }
    }
}

/// Folds `key` into `reps`, starting fresh when there is no page yet.
pub fn quest_update_reps<T: Scalar>(reps: Option<PageReps<T>>, key: &[T]) -> PageReps<T> {
    match reps {
        None => PageReps::new(key),
        Some(mut r) => {
            r.update(key);
            r
        }
    }
}

/// Upper bound on `q · k` over every key the representatives summarize.
pub fn quest_score<T: Scalar>(q: &[T], reps: &PageReps<T>) -> T {
    q.iter()
        .zip(reps.min_key.iter().zip(&reps.max_key))
        .map(|(&qd, (&lo, &hi))| (qd * lo).max(qd * hi))
        .sum()
}

/// Picks pages by their bound against the current queries.
///
/// `page_reps[u][g]` summarizes page `u` for KV group `g`; query head `j`
/// reads group `head_groups[j]`. A page's score is the maximum over heads.
pub fn quest_select<T: Scalar, Q: AsRef<[T]>>(
    queries: &[Q],
    head_groups: &[usize],
    page_reps: &[Vec<PageReps<T>>],
    budget_pages: usize,
    recency_pages: usize,
) -> Result<Vec<usize>> {
    if recency_pages > budget_pages {
        return Err(config!("recency pages {recency_pages} exceed page budget {budget_pages}"));
    }
    if queries.len() != head_groups.len() {
        return Err(usage!("{} queries but {} head-group entries", queries.len(), head_groups.len()));
    }
    let total = page_reps.len();
    if budget_pages >= total {
        return Ok((0..total).collect());
    }
    let older = total - recency_pages;
    let scores: Vec<T> = page_reps[..older]
        .iter()
        .map(|groups| {
            queries
                .iter()
                .zip(head_groups)
                .map(|(q, &g)| quest_score(q.as_ref(), &groups[g]))
                .fold(T::neg_infinity(), T::max)
        })
        .collect();
    let mut out = top_k_indices(&scores, budget_pages - recency_pages);
    out.extend(older..total);
    Ok(out)
}

/// Eviction bookkeeping: the last step each retained page was salient.
#[derive(Debug, Clone, PartialEq)]
pub struct RaasState {
    capacity: usize,
    recency_pages: usize,
    last_salient: BTreeMap<usize, u64>,
    evicted: BTreeSet<usize>,
    known_pages: usize,
}

impl RaasState {
    pub fn new(capacity: usize, recency_pages: usize) -> Result<Self> {
        if capacity < recency_pages {
            return Err(config!("capacity {capacity} below recency pages {recency_pages}"));
        }
        Ok(Self {
            capacity,
            recency_pages,
            last_salient: BTreeMap::new(),
            evicted: BTreeSet::new(),
            known_pages: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn retained_pages(&self) -> Vec<usize> {
        self.last_salient.keys().copied().collect()
    }

    pub fn is_evicted(&self, page: usize) -> bool {
        self.evicted.contains(&page)
    }

    pub fn last_salient_step(&self, page: usize) -> Option<u64> {
        self.last_salient.get(&page).copied()
    }
}

/// One eviction pass.
///
/// New pages enter with `last_salient_step = current_step`. Retained pages
/// scoring at least `threshold` are refreshed. While more than `capacity`
/// pages remain, the page with the oldest refresh outside the last
/// `recency_pages` pages is evicted for good. Equally stale pages go in
/// order of current score, then index. Scores of evicted pages are ignored.
pub fn raas_step<T: Scalar>(
    state: &mut RaasState,
    page_scores: &[T],
    current_step: u64,
    threshold: T,
) -> Vec<usize> {
    let total = page_scores.len().max(state.known_pages);
    for page in state.known_pages..total {
        state.last_salient.insert(page, current_step);
    }
    state.known_pages = total;

    for (page, step) in state.last_salient.iter_mut() {
        if page_scores.get(*page).is_some_and(|&s| s >= threshold) {
            *step = current_step;
        }
    }

    let protected_from = total.saturating_sub(state.recency_pages);
    let mut evicted = Vec::new();
    while state.last_salient.len() > state.capacity {
        let victim = state
            .last_salient
            .iter()
            .filter(|(&p, _)| p < protected_from)
            .min_by(|(&pa, &sa), (&pb, &sb)| {
                let score = |p: usize| page_scores.get(p).copied().unwrap_or_else(T::zero);
                sa.cmp(&sb).then(score(pa).partial_cmp(&score(pb)).unwrap_or(Ordering::Equal)).then(pa.cmp(&pb))
            })
            .map(|(&p, _)| p);
        let Some(victim) = victim else { break };
        state.last_salient.remove(&victim);
        state.evicted.insert(victim);
        evicted.push(victim);
    }
    evicted
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reps_fold_examples() {
        let r = quest_update_reps(None, &[1.0f64, -2.0]);
        assert_eq!(r.min_key, r.max_key);
        let r = quest_update_reps(Some(r), &[-1.0, 4.0]);
        assert_eq!(r.min_key, vec![-1.0, -2.0]);
        assert_eq!(r.max_key, vec![1.0, 4.0]);
    }

    #[test]
    fn reps_match_fold_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let keys: Vec<Vec<f32>> = (0..100).map(|_| (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let mut reps: Option<PageReps<f32>> = None;
        for k in &keys {
            reps = Some(quest_update_reps(reps, k));
        }
        let reps = reps.unwrap();
        for d in 0..8 {
            let mut lo = f32::INFINITY;
            let mut hi = f32::NEG_INFINITY;
            for k in &keys {
                lo = lo.min(k[d]);
                hi = hi.max(k[d]);
            }
            assert_eq!(reps.min_key[d], lo);
            assert_eq!(reps.max_key[d], hi);
        }
    }

    #[test]
    fn quest_score_examples() {
        let reps = PageReps { min_key: vec![0.0f64, 0.0], max_key: vec![2.0, 3.0] };
        assert_eq!(quest_score(&[0.0, 0.0], &reps), 0.0);
        assert_eq!(quest_score(&[1.0, -1.0], &reps), 2.0);
        let single = PageReps::new(&[0.5f64, -3.0]);
        assert_eq!(quest_score(&[2.0, 1.0], &single), 2.0 * 0.5 - 3.0);
    }

    #[test]
    fn quest_bound_holds_on_random_pages() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let keys: Vec<Vec<f64>> = (0..16).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let mut reps = PageReps::new(&keys[0]);
            keys[1..].iter().for_each(|k| reps.update(k));
            let q: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bound = quest_score(&q, &reps);
            for k in &keys {
                let exact: f64 = q.iter().zip(k).map(|(a, b)| a * b).sum();
                assert!(bound >= exact - 1e-12);
            }
        }
    }

    fn reps_for(keys_per_page: &[Vec<Vec<f64>>]) -> Vec<Vec<PageReps<f64>>> {
        keys_per_page
            .iter()
            .map(|keys| {
                let mut r = PageReps::new(&keys[0]);
                keys[1..].iter().for_each(|k| r.update(k));
                vec![r]
            })
            .collect()
    }

    #[test]
    fn quest_select_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = vec![1.0f64, 0.5, -0.25];
        let mut pages: Vec<Vec<Vec<f64>>> = (0..6)
            .map(|_| (0..4).map(|_| (0..3).map(|_| rng.gen_range(-0.1..0.1)).collect()).collect())
            .collect();
        pages[2] = vec![q.clone(); 4];
        let reps = reps_for(&pages);
        let heads = [0usize];
        assert_eq!(quest_select(&[&q], &heads, &reps, 6, 1).unwrap(), (0..6).collect::<Vec<_>>());
        assert_eq!(quest_select(&[&q], &heads, &reps, 2, 1).unwrap(), vec![2, 5]);
        assert!(quest_select(&[&q], &heads, &reps, 1, 2).is_err());
    }

    #[test]
    fn quest_select_agrees_with_sort_oracle() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pages: Vec<Vec<Vec<f64>>> = (0..12)
                .map(|_| (0..16).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
                .collect();
            let reps = reps_for(&pages);
            let qs: Vec<Vec<f64>> = (0..2).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let got = quest_select(&qs, &[0, 0], &reps, 5, 2).unwrap();
            // Oracle: bound per page by explicit min/max, full sort.
            let mut scored: Vec<(f64, usize)> = (0..10)
                .map(|u| {
                    let mut best = f64::NEG_INFINITY;
                    for q in &qs {
                        let mut b = 0.0;
                        for d in 0..4 {
                            let col: Vec<f64> = pages[u].iter().map(|k| k[d]).collect();
                            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            b += (q[d] * lo).max(q[d] * hi);
                        }
                        best = best.max(b);
                    }
                    (best, u)
                })
                .collect();
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)));
            let mut want: Vec<usize> = scored[..3].iter().map(|p| p.1).collect();
            want.sort();
            want.extend([10, 11]);
            assert_eq!(got, want, "seed {seed}");
        }
    }

    #[test]
    fn raas_no_eviction_under_capacity() {
        let mut st = RaasState::new(8, 1).unwrap();
        assert!(raas_step(&mut st, &[0.0f64; 5], 0, 0.5).is_empty());
        assert_eq!(st.retained_pages(), vec![0, 1, 2, 3, 4]);
        assert!(RaasState::new(1, 2).is_err());
    }

    #[test]
    fn raas_evicts_never_salient_page_first() {
        let mut st = RaasState::new(3, 1).unwrap();
        raas_step(&mut st, &[0.0f64; 3], 0, 0.5);
        // Pages 0 and 2 stay salient, page 1 never is.
        raas_step(&mut st, &[0.9f64, 0.0, 0.9], 1, 0.5);
        let ev = raas_step(&mut st, &[0.9f64, 0.0, 0.9, 0.0], 2, 0.5);
        assert_eq!(ev, vec![1]);
        assert!(st.is_evicted(1));
    }

    #[test]
    fn raas_scripted_sequence_matches_hand_simulation() {
        // capacity 3, one recency page, threshold 0.5; pages appear over time.
        let mut st = RaasState::new(3, 1).unwrap();
        let script: [(&[f64], &[usize]); 6] = [
            (&[0.6, 0.1], &[]),
            (&[0.1, 0.7, 0.2], &[]),
            // 4 pages: last_salient = {0:0, 1:1, 2:1, 3:2}; page 3 protected; evict 0.
            (&[0.1, 0.1, 0.1, 0.1], &[0]),
            // 5 pages: {1:1, 2:3, 3:2, 4:3}, page 4 protected; evict 1.
            (&[9.0, 0.1, 0.8, 0.1, 0.1], &[1]),
            // {2:3, 3:4, 4:4}: within capacity.
            (&[0.0, 0.0, 0.1, 0.6, 0.9], &[]),
            // 6 pages: {2:3, 3:4, 4:4, 5:5}; evict 2.
            (&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[2]),
        ];
        for (step, (scores, want)) in script.iter().enumerate() {
            let got = raas_step(&mut st, scores, step as u64, 0.5);
            assert_eq!(&got, want, "step {step}");
            assert!(st.retained_pages().len() <= 3);
        }
        assert_eq!(st.retained_pages(), vec![3, 4, 5]);
        assert_eq!(st.last_salient_step(3), Some(4));
    }

    #[test]
    fn equally_stale_pages_leave_in_score_order() {
        let mut st = RaasState::new(2, 0).unwrap();
        assert_eq!(raas_step(&mut st, &[0.9, 0.2, 0.5, 0.2], 0, 0.1), vec![1, 3]);
        assert_eq!(st.retained_pages(), vec![0, 2]);
    }
}
