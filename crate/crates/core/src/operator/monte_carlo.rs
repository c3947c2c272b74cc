use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, PolicyTable, QTable};
use crate::traces::{init_summary, step_summary, TraceStrategy};

/// Sample-mean estimate of `MQ` with per-entry standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloEstimate {
    pub estimate: QTable,
    pub std_error: QTable,
}

/// Averages `sum_{t=0}^{horizon} gamma^t beta_t delta_t` over independent
/// behavior rollouts from every start pair.
///
/// Start pair `i` draws from ChaCha stream `i` of `seed`, so the output does not
/// depend on how rows are scheduled across threads. TD errors use the
/// continuing view: terminal states are ordinary absorbing states here, as in
/// the operator itself.
#[allow(clippy::too_many_arguments)]
pub fn expected_m_monte_carlo(
    mdp: &FiniteMdp,
    target: &PolicyTable,
    behavior: &PolicyTable,
    strategy: &TraceStrategy,
    q: &QTable,
    n_samples: usize,
    horizon: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if n_samples < 2 {
        return Err(Error::InvalidParameter(format!(
            "n_samples must be at least 2, got {n_samples}"
        )));
    }
    if horizon < 1 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    mdp.check_policy(target)?;
    mdp.check_policy(behavior)?;
    mdp.check_q(q)?;
    strategy.validate()?;

    let na = mdp.n_actions();
    let gamma = mdp.discount();
    let bootstrap: Vec<f64> = (0..mdp.n_states())
        .map(|s| target.expected_value(q, s))
        .collect();

    let rows = (0..mdp.n_pairs())
        .into_par_iter()
        .map(|start| -> Result<(f64, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(start as u64);
            let (mut mean, mut m2) = (0.0, 0.0);
            for i in 0..n_samples {
                let (mut s, mut a) = (start / na, start % na);
                let mut summary = init_summary(strategy);
                let mut beta = 1.0;
                let mut discount = 1.0;
                let mut total = 0.0;
                for t in 0..=horizon {
                    let next = mdp.sample_next(s, a, &mut rng);
                    let delta = mdp.reward(s, a) + gamma * bootstrap[next] - q.get(s, a);
                    total += discount * beta * delta;
                    if t == horizon {
                        break;
                    }
                    let next_action = behavior.sample(next, &mut rng);
                    let (stepped, b) =
                        step_summary(strategy, summary, (next, next_action), target, behavior)?;
                    summary = stepped;
                    beta = b;
                    if beta == 0.0 {
                        break;
                    }
                    discount *= gamma;
                    s = next;
                    a = next_action;
                }
                // Welford update.
                let delta = total - mean;
                mean += delta / (i + 1) as f64;
                m2 += delta * (total - mean);
            }
            let variance = m2 / (n_samples - 1) as f64;
            Ok((q.as_slice()[start] + mean, (variance / n_samples as f64).sqrt()))
        })
        .collect::<Result<Vec<_>>>()?;

    let (estimate, std_error): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    Ok(MonteCarloEstimate {
        estimate: QTable::from_vec(na, estimate)?,
        std_error: QTable::from_vec(na, std_error)?,
    })
}
