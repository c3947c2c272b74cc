use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::mdp::{chain2, chain2_episodic};
use crate::operator::expected_m_markov_closed_form;
use crate::traces::{beta, markov_trace, History};

fn episodic_policies() -> (PolicyTable, PolicyTable) {
    let pi = PolicyTable::prefer(3, 2, 1, 0.2).unwrap();
    let mu = PolicyTable::uniform(3, 2);
    (pi, mu)
}

fn recorded(max_steps: usize) -> EpisodeOptions {
    EpisodeOptions {
        max_steps: Some(max_steps),
        record: true,
        ..EpisodeOptions::default()
    }
}

/// One state whose only transition ends the episode.
fn one_step_mdp() -> FiniteMdp {
    FiniteMdp::new(
        2,
        2,
        vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
        vec![1.5, -0.5, 0.0, 0.0],
        0.9,
        BTreeSet::from([1]),
    )
    .unwrap()
}

#[test]
fn one_step_episode_is_a_td0_update() {
    let mdp = one_step_mdp();
    let pi = PolicyTable::uniform(2, 2);
    let mu = PolicyTable::new(2, 2, vec![0.3, 0.7, 0.5, 0.5]).unwrap();
    let q0 = QTable::from_vec(2, vec![0.4, 0.1, 0.0, 0.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for strategy in TraceStrategy::standard_suite() {
        let (q, log) =
            run_episode_with(&mdp, &pi, &mu, &strategy, q0.clone(), 0.5, &recorded(10), &mut rng)
                .unwrap();
        assert_eq!(log.steps, 1);
        let (s, a) = log.pairs[0];
        let delta = mdp.reward(s, a) - q0.get(s, a);
        let mut expected = q0.clone();
        *expected.get_mut(s, a) += 0.5 * delta;
        assert_eq!(q, expected);
    }
}

#[test]
fn zero_step_size_leaves_q_unchanged() {
    let mdp = chain2_episodic();
    let (pi, mu) = episodic_policies();
    let q0 = QTable::from_vec(2, vec![0.3, 0.2, 0.1, 0.9, 0.0, 0.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for strategy in TraceStrategy::standard_suite() {
        let (q, _) = run_episode(&mdp, &pi, &mu, &strategy, q0.clone(), 0.0, &mut rng).unwrap();
        assert_eq!(q, q0);
    }
}

#[test]
fn factorable_weights_are_trace_products() {
    let mdp = chain2_episodic();
    let (pi, mu) = episodic_policies();
    let gamma = mdp.discount();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for strategy in TraceStrategy::standard_suite()
        .into_iter()
        .filter(|s| s.is_factorable())
    {
        let mut q = QTable::zeros(3, 2);
        for _ in 0..200 {
            let (next, log) =
                run_episode_with(&mdp, &pi, &mu, &strategy, q, 0.3, &recorded(40), &mut rng).unwrap();
            q = next;
            for w in &log.weights {
                let product: f64 = log.pairs[w.k + 1..=w.t]
                    .iter()
                    .map(|&(s, a)| markov_trace(&strategy, s, a, &pi, &mu).unwrap())
                    .product();
                let expected = gamma.powi((w.t - w.k) as i32) * product;
                assert!((w.weight - expected).abs() <= 1e-12, "{strategy}");
            }
        }
    }
}

#[test]
fn weights_replay_from_suffix_histories() {
    let mdp = chain2_episodic();
    let (pi, mu) = episodic_policies();
    let gamma = mdp.discount();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut suite = TraceStrategy::standard_suite();
    suite.push(TraceStrategy::truncated_is(0.7).unwrap());
    for strategy in suite {
        let mut checked = 0;
        let mut q = QTable::zeros(3, 2);
        for _ in 0..500 {
            let (next, log) =
                run_episode_with(&mdp, &pi, &mu, &strategy, q, 0.2, &recorded(100), &mut rng).unwrap();
            q = next;
            if log.steps > 8 {
                continue;
            }
            let expected_updates = log.steps * (log.steps + 1) / 2;
            assert_eq!(log.weights.len(), expected_updates);
            for w in &log.weights {
                let suffix = History::new(log.pairs[w.k..=w.t].to_vec()).unwrap();
                let direct = beta(&strategy, &suffix, &pi, &mu).unwrap();
                let expected = gamma.powi((w.t - w.k) as i32) * direct;
                assert!((w.weight - expected).abs() <= 1e-12, "{strategy}");
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }
}

/// Undiscounted coefficient per pair when every visit to a pair feeds one
/// shared stream: the stream gains one on each visit and then follows the
/// strategy's recursion as a whole.
fn collapsed_coefficients(
    strategy: &TraceStrategy,
    pairs: &[(usize, usize)],
    pi: &PolicyTable,
    mu: &PolicyTable,
) -> HashMap<(usize, usize), f64> {
    let mut streams: HashMap<(usize, usize), TraceSummary> = HashMap::new();
    for &pair in pairs {
        for summary in streams.values_mut() {
            *summary = step_summary(strategy, *summary, pair, pi, mu).unwrap().0;
        }
        let merged = match streams.get(&pair) {
            Some(existing) => TraceSummary {
                value: existing.beta(strategy) + 1.0,
                steps: existing.steps.max(1),
            },
            None => init_summary(strategy),
        };
        streams.insert(pair, merged);
    }
    streams.into_iter().map(|(k, v)| (k, v.beta(strategy))).collect()
}

#[test]
fn repeated_visits_keep_separate_streams() {
    // Behavior always takes L in s0, so the episode loops on (s0, L).
    let mdp = chain2();
    let pi = PolicyTable::new(2, 2, vec![0.7, 0.3, 0.5, 0.5]).unwrap();
    let mu = PolicyTable::deterministic(2, &[0, 0]).unwrap();
    let options = EpisodeOptions {
        max_steps: Some(4),
        start: Some((0, 0)),
        record: true,
        ..EpisodeOptions::default()
    };
    let gamma = mdp.discount();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (strategy, should_differ) in [
        (TraceStrategy::nonmarkov_retrace(0.9).unwrap(), true),
        (TraceStrategy::retrace(0.9).unwrap(), false),
    ] {
        let (_, log) = run_episode_with(
            &mdp,
            &pi,
            &mu,
            &strategy,
            QTable::zeros(2, 2),
            0.5,
            &options,
            &mut rng,
        )
        .unwrap();
        assert!(log.truncated);
        assert_eq!(log.pairs, vec![(0, 0); 4]);
        let t = log.steps - 1;
        let per_visit: f64 = log
            .weights
            .iter()
            .filter(|w| w.t == t)
            .map(|w| w.weight / gamma.powi((w.t - w.k) as i32))
            .sum();
        let collapsed = collapsed_coefficients(&strategy, &log.pairs, &pi, &mu)[&(0, 0)];
        let differs = (per_visit - collapsed).abs() > 1e-9;
        assert_eq!(differs, should_differ, "{strategy}: {per_visit} vs {collapsed}");
    }
}

#[test]
fn offline_mode_applies_the_accumulated_updates() {
    let mdp = chain2_episodic();
    let (pi, mu) = episodic_policies();
    let strategy = TraceStrategy::nonmarkov_retrace(0.9).unwrap();
    let q0 = QTable::from_vec(2, vec![0.3, 0.2, 0.1, 0.9, 0.0, 0.0]).unwrap();
    let options = EpisodeOptions {
        mode: UpdateMode::Offline,
        ..recorded(100)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let (q, log) =
            run_episode_with(&mdp, &pi, &mu, &strategy, q0.clone(), 0.4, &options, &mut rng).unwrap();
        let mut expected = q0.clone();
        for w in &log.weights {
            let (s, a) = log.pairs[w.k];
            *expected.get_mut(s, a) += 0.4 * w.weight * log.deltas[w.t];
        }
        assert!(q.sup_distance(&expected) <= 1e-12);
        // The TD errors bootstrap from the frozen table.
        for (t, &(s, a)) in log.pairs.iter().enumerate() {
            let next_value = match log.pairs.get(t + 1) {
                Some(&(next, _)) => pi.expected_value(&q0, next),
                None => 0.0,
            };
            if log.pairs.get(t + 1).is_some() {
                let delta = mdp.reward(s, a) + mdp.discount() * next_value - q0.get(s, a);
                assert!((delta - log.deltas[t]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn truncation_is_flagged() {
    let mdp = chain2();
    let pi = PolicyTable::uniform(2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let strategy = TraceStrategy::retrace(0.9).unwrap();
    let (_, log) = run_episode_with(
        &mdp,
        &pi,
        &pi,
        &strategy,
        QTable::zeros(2, 2),
        0.1,
        &recorded(3),
        &mut rng,
    )
    .unwrap();
    assert_eq!(log.steps, 3);
    assert!(log.truncated);
}

#[test]
fn episode_update_matches_the_expected_operator() {
    let mdp = chain2_episodic();
    let (pi, mu) = episodic_policies();
    let strategy = TraceStrategy::retrace(0.9).unwrap();
    let q = QTable::from_vec(2, vec![0.3, -0.2, 0.1, 0.9, 0.0, 0.0]).unwrap();
    let expected = expected_m_markov_closed_form(&mdp, &pi, &mu, &strategy, &q).unwrap();
    let start = (1, 0);
    let options = EpisodeOptions {
        start: Some(start),
        ..recorded(500)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 20_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let (_, log) =
            run_episode_with(&mdp, &pi, &mu, &strategy, q.clone(), 0.0, &options, &mut rng).unwrap();
        let direction: f64 = log
            .weights
            .iter()
            .filter(|w| w.k == 0)
            .map(|w| w.weight * log.deltas[w.t])
            .sum();
        sum += direction;
        sum_sq += direction * direction;
    }
    let mean = sum / n as f64;
    let std_error = ((sum_sq / n as f64 - mean * mean) / (n - 1) as f64).sqrt();
    let target = expected.get(start.0, start.1) - q.get(start.0, start.1);
    assert!((mean - target).abs() <= 4.0 * std_error, "{mean} vs {target} ({std_error})");
}

#[test]
fn train_is_deterministic_and_handles_zero_episodes() {
    let mdp = chain2_episodic();
    let (pi, mu) = episodic_policies();
    let strategy = TraceStrategy::nonmarkov_retrace(0.9).unwrap();
    let schedule = StepSizeSchedule::Harmonic {
        alpha0: 0.5,
        n0: 100.0,
    };
    let empty = train(&mdp, &pi, &mu, &LearnerConfig::new(strategy.clone(), schedule, 0, 3), QTable::zeros(3, 2))
        .unwrap();
    assert!(empty.curve.is_empty());
    assert_eq!(empty.q, QTable::zeros(3, 2));

    let config = LearnerConfig::new(strategy, schedule, 300, 3);
    let a = train(&mdp, &pi, &mu, &config, QTable::zeros(3, 2)).unwrap();
    let b = train(&mdp, &pi, &mu, &config, QTable::zeros(3, 2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.curve.len(), 300);
    assert_eq!(a.curve[299].episode, 300);
}

#[test]
fn configuration_is_validated() {
    let strategy = TraceStrategy::retrace(0.9).unwrap();
    for schedule in [
        StepSizeSchedule::Constant(0.0),
        StepSizeSchedule::Constant(1.5),
        StepSizeSchedule::Harmonic {
            alpha0: 0.5,
            n0: 0.0,
        },
    ] {
        assert!(LearnerConfig::new(strategy.clone(), schedule, 1, 0).validate().is_err());
    }
    let mut config = LearnerConfig::new(strategy, StepSizeSchedule::Constant(0.1), 1, 0);
    config.max_steps = 0;
    assert!(config.validate().is_err());
}

#[test]
fn harmonic_schedule_decays() {
    let s = StepSizeSchedule::Harmonic {
        alpha0: 0.8,
        n0: 10.0,
    };
    assert_eq!(s.alpha(0), 0.8);
    assert!((s.alpha(10) - 0.4).abs() < 1e-15);
    assert_eq!(StepSizeSchedule::Constant(0.3).alpha(1000), 0.3);
}

#[test]
fn retrace_learns_q_pi_on_the_episodic_chain() {
    let mdp = chain2_episodic();
    let (pi, mu) = episodic_policies();
    let config = LearnerConfig::new(
        TraceStrategy::retrace(0.9).unwrap(),
        StepSizeSchedule::Harmonic {
            alpha0: 0.5,
            n0: 100.0,
        },
        20_000,
        7,
    );
    let out = train(&mdp, &pi, &mu, &config, QTable::zeros(3, 2)).unwrap();
    let last = out.curve.last().unwrap();
    assert!(last.error < 0.05, "final error {}", last.error);
}
