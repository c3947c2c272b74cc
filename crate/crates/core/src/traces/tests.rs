use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn all_strategies(n_pairs: usize, rng: &mut impl Rng) -> Vec<TraceStrategy> {
    let mut v = TraceStrategy::standard_suite();
    v.push(TraceStrategy::Composite {
        discount: PairTable::PerPair((0..n_pairs).map(|_| rng.random_range(0.5..=1.0)).collect()),
        lambda: PairTable::PerPair((0..n_pairs).map(|_| rng.random::<f64>()).collect()),
    });
    v
}

fn random_history(
    rng: &mut impl Rng,
    n_states: usize,
    n_actions: usize,
    max_len: usize,
) -> History {
    let len = rng.random_range(1..=max_len);
    History::new(
        (0..len)
            .map(|_| (rng.random_range(0..n_states), rng.random_range(0..n_actions)))
            .collect(),
    )
    .unwrap()
}

fn fold(strategy: &TraceStrategy, h: &History, pi: &PolicyTable, mu: &PolicyTable) -> f64 {
    let mut summary = init_summary(strategy);
    let mut beta = 1.0;
    for &pair in &h.pairs()[1..] {
        let (next, b) = step_summary(strategy, summary, pair, pi, mu).unwrap();
        summary = next;
        beta = b;
    }
    beta
}

#[test]
fn one_pair_history_has_unit_beta() {
    let pi = PolicyTable::uniform(3, 2);
    let mu = PolicyTable::prefer(3, 2, 0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for s in all_strategies(6, &mut rng) {
        let h = History::new(vec![(2, 1)]).unwrap();
        assert_eq!(beta(&s, &h, &pi, &mu).unwrap(), 1.0, "{s}");
        assert_eq!(init_summary(&s).beta(&s), 1.0);
    }
}

#[test]
fn retrace_clips_a_large_ratio() {
    // pi(a|s) = 1, mu(a|s) = 0.5 -> rho = 2.
    let pi = PolicyTable::deterministic(2, &[1]).unwrap();
    let mu = PolicyTable::uniform(1, 2);
    let h = History::new(vec![(0, 0), (0, 1)]).unwrap();
    assert_eq!(beta(&TraceStrategy::Retrace { lambda: 1.0 }, &h, &pi, &mu).unwrap(), 1.0);
    assert_eq!(beta(&TraceStrategy::ImportanceSampling, &h, &pi, &mu).unwrap(), 2.0);
}

#[test]
fn nonmarkov_retrace_releases_the_clip() {
    // State 0: rho(action 0) = 0.25; state 1: rho(action 0) = 8.
    let pi = PolicyTable::new(2, 2, vec![0.125, 0.875, 0.8, 0.2]).unwrap();
    let mu = PolicyTable::new(2, 2, vec![0.5, 0.5, 0.1, 0.9]).unwrap();
    let h1 = History::new(vec![(0, 1), (0, 0)]).unwrap();
    let h2 = History::new(vec![(0, 1), (0, 0), (1, 0)]).unwrap();
    let nm = TraceStrategy::NonMarkovRetrace { lambda: 1.0 };
    let rt = TraceStrategy::Retrace { lambda: 1.0 };
    assert_eq!(beta(&nm, &h1, &pi, &mu).unwrap(), 0.25);
    assert_eq!(beta(&nm, &h2, &pi, &mu).unwrap(), 1.0);
    assert_eq!(beta(&rt, &h2, &pi, &mu).unwrap(), 0.25);
}

#[test]
fn truncated_is_summary_tracks_raw_product() {
    // rho sequence (2, 0.1).
    let pi = PolicyTable::new(2, 2, vec![1.0, 0.0, 0.05, 0.95]).unwrap();
    let mu = PolicyTable::new(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
    let s = TraceStrategy::TruncatedIs { clip: 1.0 };
    let first = init_summary(&s);
    let (a, beta_a) = step_summary(&s, first, (0, 0), &pi, &mu).unwrap();
    let (b, beta_b) = step_summary(&s, a, (1, 0), &pi, &mu).unwrap();
    assert_eq!(a.value, 2.0);
    assert!((b.value - 0.2).abs() < 1e-15);
    assert_eq!(beta_a, 1.0);
    assert!((beta_b - 0.2).abs() < 1e-15);
}

#[test]
fn is_beta_matches_ratio_product_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let pi = PolicyTable::random(4, 3, &mut rng);
        let mu = PolicyTable::random(4, 3, &mut rng);
        let h = random_history(&mut rng, 4, 3, 10);
        let mut oracle = 1.0;
        for &(s, a) in &h.pairs()[1..] {
            oracle *= pi.probs()[s * 3 + a] / mu.probs()[s * 3 + a];
        }
        let got = beta(&TraceStrategy::ImportanceSampling, &h, &pi, &mu).unwrap();
        assert!((got - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }
}

#[test]
fn incremental_fold_matches_full_history() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10_000 {
        let pi = PolicyTable::random(3, 2, &mut rng);
        let mu = PolicyTable::random(3, 2, &mut rng);
        let h = random_history(&mut rng, 3, 2, 12);
        for s in all_strategies(6, &mut rng) {
            let full = beta(&s, &h, &pi, &mu).unwrap();
            let inc = fold(&s, &h, &pi, &mu);
            assert!((full - inc).abs() <= 1e-12 * full.abs().max(1.0), "{s}: {full} vs {inc}");
        }
    }
}

/// All histories of length 1..=max_len over `n_states x n_actions`.
fn enumerate_histories(n_states: usize, n_actions: usize, max_len: usize) -> Vec<History> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<(usize, usize)>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for prefix in &frontier {
            for s in 0..n_states {
                for a in 0..n_actions {
                    let mut p = prefix.clone();
                    p.push((s, a));
                    out.push(History::new(p.clone()).unwrap());
                    next.push(p);
                }
            }
        }
        frontier = next;
    }
    out
}

#[test]
fn exhaustive_chain_histories_fold_admissibility_and_monotonicity() {
    let pi = PolicyTable::prefer(2, 2, 1, 0.2).unwrap();
    let mu = PolicyTable::uniform(2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let strategies = all_strategies(4, &mut rng);
    let histories = enumerate_histories(2, 2, 5);
    assert_eq!(histories.len(), 4 + 16 + 64 + 256 + 1024);
    for h in &histories {
        for s in &strategies {
            let full = beta(s, h, &pi, &mu).unwrap();
            assert!(full >= 0.0);
            assert!((full - fold(s, h, &pi, &mu)).abs() <= 1e-12);
            if !matches!(s, TraceStrategy::QLambda { .. }) {
                assert!(is_admissible(s, h, &pi, &mu).unwrap().ok, "{s} on {h:?}");
            }
            if matches!(s, TraceStrategy::Retrace { .. } | TraceStrategy::TreeBackup { .. })
                && h.steps() >= 1
            {
                let shorter = History::new(h.pairs()[..h.pairs().len() - 1].to_vec()).unwrap();
                assert!(full <= beta(s, &shorter, &pi, &mu).unwrap() + 1e-15);
            }
        }
    }
}

#[test]
fn sampled_admissibility_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let checked = [
        TraceStrategy::TreeBackup { lambda: 1.0 },
        TraceStrategy::NonMarkovRetrace { lambda: 0.9 },
        TraceStrategy::NonMarkovRetrace { lambda: 1.0 },
        TraceStrategy::TruncatedIs { clip: 1.0 },
        TraceStrategy::Retrace { lambda: 1.0 },
    ];
    for _ in 0..100_000 {
        let pi = PolicyTable::random(3, 2, &mut rng);
        let mu = PolicyTable::random(3, 2, &mut rng);
        let h = random_history(&mut rng, 3, 2, 8);
        for s in &checked {
            assert!(is_admissible(s, &h, &pi, &mu).unwrap().ok, "{s}");
        }
    }
}

#[test]
fn qlambda_violates_admissibility_off_policy() {
    let pi = PolicyTable::deterministic(2, &[1]).unwrap();
    let mu = PolicyTable::uniform(1, 2);
    let h = History::new(vec![(0, 1), (0, 0)]).unwrap();
    let adm = is_admissible(&TraceStrategy::QLambda { lambda: 1.0 }, &h, &pi, &mu).unwrap();
    assert!(!adm.ok);
    assert_eq!(adm.beta, 1.0);
    assert_eq!(adm.is_bound, 0.0);
}

#[test]
fn zero_behavior_probability_names_the_index() {
    let pi = PolicyTable::uniform(2, 2);
    let mu = PolicyTable::deterministic(2, &[0, 0]).unwrap();
    let h = History::new(vec![(0, 1), (1, 0), (1, 1)]).unwrap();
    let err = beta(&TraceStrategy::Retrace { lambda: 1.0 }, &h, &pi, &mu).unwrap_err();
    assert!(matches!(err, Error::ZeroBehavior { index: 2, state: 1, action: 1 }));
    // The first pair contributes no ratio, so an off-support start is fine.
    let h = History::new(vec![(0, 1), (1, 0)]).unwrap();
    assert!(beta(&TraceStrategy::Retrace { lambda: 1.0 }, &h, &pi, &mu).is_ok());
}

#[test]
fn upper_bounds() {
    let q = TraceStrategy::QLambda { lambda: 0.8 };
    assert!((beta_upper_bound(&q, 3).constant.unwrap() - 0.512).abs() < 1e-15);
    assert!(!beta_upper_bound(&q, 3).dominated_by_is);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for s in all_strategies(4, &mut rng) {
        let b = beta_upper_bound(&s, 0);
        assert_eq!(b.constant, Some(1.0));
    }
    assert!(beta_upper_bound(&TraceStrategy::Retrace { lambda: 0.9 }, 5).dominated_by_is);
    let t = beta_upper_bound(&TraceStrategy::TruncatedIs { clip: 1.5 }, 4);
    assert!(t.dominated_by_is);
    assert_eq!(t.constant, Some(1.5));
}

#[test]
fn markov_traces() {
    // rho = 2 for (0, 1).
    let pi = PolicyTable::deterministic(2, &[1]).unwrap();
    let mu = PolicyTable::uniform(1, 2);
    let r = TraceStrategy::Retrace { lambda: 0.9 };
    assert_eq!(markov_trace(&r, 0, 1, &pi, &mu).unwrap(), 0.9);
    assert_eq!(
        markov_trace(&TraceStrategy::ImportanceSampling, 0, 1, &pi, &mu).unwrap(),
        2.0
    );
    for s in [
        TraceStrategy::NonMarkovRetrace { lambda: 0.9 },
        TraceStrategy::TruncatedIs { clip: 1.0 },
    ] {
        assert!(matches!(
            markov_trace(&s, 0, 1, &pi, &mu),
            Err(Error::Unsupported { .. })
        ));
    }
}

#[test]
fn markov_trace_products_match_beta() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..10_000 {
        let pi = PolicyTable::random(3, 2, &mut rng);
        let mu = PolicyTable::random(3, 2, &mut rng);
        let h = random_history(&mut rng, 3, 2, 10);
        for s in all_strategies(6, &mut rng).iter().filter(|s| s.is_factorable()) {
            let product: f64 = h.pairs()[1..]
                .iter()
                .map(|&(st, a)| markov_trace(s, st, a, &pi, &mu).unwrap())
                .product();
            let b = beta(s, &h, &pi, &mu).unwrap();
            assert!((product - b).abs() <= 1e-12 * b.max(1.0), "{s}");
        }
    }
}
