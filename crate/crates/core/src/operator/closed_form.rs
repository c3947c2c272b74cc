//! Markov special case: when `beta` factors into traces `c(s, a)` the occupancy
//! is the geometric series `sum_t (gamma P_cmu)^t = (I - gamma P_cmu)^{-1}`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mdp::{bellman::solve_refined, bellman_backup, FiniteMdp, PolicyTable, QTable};
use crate::traces::{markov_trace, TraceStrategy};

const RESIDUAL_TOL: f64 = 1e-10;

fn require_factorable(strategy: &TraceStrategy) -> Result<()> {
    if strategy.is_factorable() {
        Ok(())
    } else {
        Err(Error::Unsupported {
            strategy: strategy.to_string(),
            reason: "closed form needs per-decision traces".into(),
        })
    }
}

/// `P_cmu[(s,a), (s',a')] = P(s'|s,a) mu(a'|s') c(s',a')`.
pub fn trace_transition_matrix(
    mdp: &FiniteMdp,
    target: &PolicyTable,
    behavior: &PolicyTable,
    strategy: &TraceStrategy,
) -> Result<DMatrix<f64>> {
    require_factorable(strategy)?;
    mdp.check_policy(target)?;
    mdp.check_policy(behavior)?;
    let na = mdp.n_actions();
    let n = mdp.n_pairs();
    // mu(a'|s') c(s', a'), zero off the behavior support.
    let mut weighted = vec![0.0; n];
    for s in 0..mdp.n_states() {
        for a in 0..na {
            let mu = behavior.prob(s, a);
            if mu > 0.0 {
                weighted[s * na + a] = mu * markov_trace(strategy, s, a, target, behavior)?;
            }
        }
    }
    let mut m = DMatrix::zeros(n, n);
    for s in 0..mdp.n_states() {
        for a in 0..na {
            let row = s * na + a;
            for (next, &p) in mdp.successors(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for b in 0..na {
                    m[(row, next * na + b)] += p * weighted[next * na + b];
                }
            }
        }
    }
    Ok(m)
}

/// `C = (I - gamma P_cmu)^{-1}`.
pub fn occupancy_closed_form(
    mdp: &FiniteMdp,
    target: &PolicyTable,
    behavior: &PolicyTable,
    strategy: &TraceStrategy,
) -> Result<DMatrix<f64>> {
    let n = mdp.n_pairs();
    let system =
        DMatrix::identity(n, n) - trace_transition_matrix(mdp, target, behavior, strategy)? * mdp.discount();
    let inverse = system
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numeric("I - gamma P_cmu is singular".into()))?;
    let residual = (&system * &inverse - DMatrix::<f64>::identity(n, n)).amax();
    if residual > RESIDUAL_TOL {
        return Err(Error::Numeric(format!(
            "occupancy inverse residual {residual:e} exceeds tolerance"
        )));
    }
    Ok(inverse)
}

/// `MQ = q + (I - gamma P_cmu)^{-1} (T_pi q - q)` for factorable strategies.
pub fn expected_m_markov_closed_form(
    mdp: &FiniteMdp,
    target: &PolicyTable,
    behavior: &PolicyTable,
    strategy: &TraceStrategy,
    q: &QTable,
) -> Result<QTable> {
    let n = mdp.n_pairs();
    let td = bellman_backup(mdp, target, q)?.into_vector() - q.values();
    let system =
        DMatrix::identity(n, n) - trace_transition_matrix(mdp, target, behavior, strategy)? * mdp.discount();
    let x = solve_refined(&system, &td)?;
    let residual = (&system * &x - &td).amax();
    if residual > RESIDUAL_TOL * x.amax().max(1.0) {
        return Err(Error::Numeric(format!(
            "closed-form residual {residual:e} exceeds tolerance"
        )));
    }
    QTable::from_vector(mdp.n_actions(), q.values() + x)
}
