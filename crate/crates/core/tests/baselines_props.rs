use delta_core::baselines::quest_update_reps;
use delta_core::{quest_score, quest_select, raas_step, PageReps, RaasState};
use proptest::prelude::*;

proptest! {
    #[test]
    fn quest_score_bounds_every_key(
        q in prop::collection::vec(-3.0f64..3.0, 8),
        keys in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 8), 1..16),
    ) {
        let reps = keys.iter().fold(None, |r, k| Some(quest_update_reps(r, k))).unwrap();
        let bound = quest_score(&q, &reps);
        for k in &keys {
            let exact: f64 = q.iter().zip(k).map(|(a, b)| a * b).sum();
            prop_assert!(bound >= exact - 1e-12);
        }
    }

    #[test]
    fn quest_select_keeps_recency_and_budget(
        pages in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..20),
        q in prop::collection::vec(-1.0f64..1.0, 4),
        b in 1usize..10,
        r in 0usize..10,
    ) {
        prop_assume!(r <= b);
        let reps: Vec<Vec<PageReps<f64>>> = pages.iter().map(|k| vec![PageReps::new(k)]).collect();
        let picked = quest_select(&[q], &[0], &reps, b, r).unwrap();
        let n = pages.len();
        prop_assert_eq!(picked.len(), b.min(n));
        for u in n - r.min(n)..n {
            prop_assert!(picked.contains(&u));
        }
    }

    #[test]
    fn raas_respects_capacity_and_spares_recent_pages(
        script in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 1..4), 1..30),
        cap in 1usize..6,
        recent in 0usize..6,
    ) {
        prop_assume!(recent <= cap);
        let mut st = RaasState::new(cap, recent).unwrap();
        let mut scores: Vec<f64> = Vec::new();
        for (step, fresh) in script.iter().enumerate() {
            scores.extend(fresh);
            let evicted = raas_step(&mut st, &scores, step as u64, 0.5);
            let n = scores.len();
            prop_assert!(st.retained_pages().len() <= cap);
            for u in n - recent.min(n)..n {
                prop_assert!(!st.is_evicted(u));
            }
            prop_assert!(evicted.iter().all(|&u| st.is_evicted(u)));
        }
    }
}
