use nalgebra::{DMatrix, DVector};

use super::{FiniteMdp, PolicyTable, QTable, Transition};
use crate::error::{Error, Result};

const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

/// `(P_pi q)(s, a) = sum_{s', a'} P(s'|s, a) pi(a'|s') q(s', a')`.
pub fn apply_policy_operator(mdp: &FiniteMdp, policy: &PolicyTable, q: &QTable) -> Result<QTable> {
    mdp.check_policy(policy)?;
    mdp.check_q(q)?;
    let next_values: Vec<f64> = (0..mdp.n_states())
        .map(|s| policy.expected_value(q, s))
        .collect();
    Ok(q.with_values(propagate(mdp, &next_values)))
}

/// `T_pi q = R + gamma P_pi q`.
pub fn bellman_backup(mdp: &FiniteMdp, policy: &PolicyTable, q: &QTable) -> Result<QTable> {
    let pq = apply_policy_operator(mdp, policy, q)?;
    let values = mdp.reward_vector() + pq.into_vector() * mdp.discount();
    Ok(q.with_values(values))
}

/// Optimality backup `Tq = R + gamma P max_a' q`, together with the deterministic
/// policy that is greedy on the backed-up values (ties to the lowest action).
pub fn bellman_optimality(mdp: &FiniteMdp, q: &QTable) -> Result<(QTable, PolicyTable)> {
    mdp.check_q(q)?;
    let next_values: Vec<f64> = (0..mdp.n_states()).map(|s| q.max_value(s)).collect();
    let values = mdp.reward_vector() + propagate(mdp, &next_values) * mdp.discount();
    let tq = q.with_values(values);
    let greedy = PolicyTable::greedy(&tq);
    Ok((tq, greedy))
}

/// `(s, a) -> sum_{s'} P(s'|s, a) v(s')`.
fn propagate(mdp: &FiniteMdp, state_values: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        mdp.n_pairs(),
        (0..mdp.n_states()).flat_map(|s| {
            (0..mdp.n_actions()).map(move |a| {
                mdp.successors(s, a)
                    .iter()
                    .zip(state_values)
                    .map(|(p, v)| p * v)
                    .sum::<f64>()
            })
        }),
    )
}

/// Dense `n x n` matrix of `P_pi` over flattened state-action pairs.
pub fn policy_matrix(mdp: &FiniteMdp, policy: &PolicyTable) -> Result<DMatrix<f64>> {
    mdp.check_policy(policy)?;
    let n = mdp.n_pairs();
    let na = mdp.n_actions();
    let mut m = DMatrix::zeros(n, n);
    for s in 0..mdp.n_states() {
        for a in 0..na {
            let row = mdp.pair_index(s, a);
            for (next, p) in mdp.successors(s, a).iter().enumerate() {
                if *p == 0.0 {
                    continue;
                }
                for b in 0..na {
                    m[(row, next * na + b)] += p * policy.prob(next, b);
                }
            }
        }
    }
    Ok(m)
}

/// Solves `(I - gamma P_pi) Q = R` directly and checks the Bellman residual.
pub fn exact_q_pi(mdp: &FiniteMdp, policy: &PolicyTable) -> Result<QTable> {
    let n = mdp.n_pairs();
    let system = DMatrix::identity(n, n) - policy_matrix(mdp, policy)? * mdp.discount();
    let rhs = mdp.reward_vector();
    let solution = solve_refined(&system, &rhs)?;
    let q = QTable::from_vector(mdp.n_actions(), solution)?;
    let residual = bellman_backup(mdp, policy, &q)?.sup_distance(&q);
    if residual > SOLVE_RESIDUAL_TOL * q.sup_norm().max(1.0) {
        return Err(Error::Numeric(format!(
            "policy evaluation residual {residual:e} exceeds tolerance"
        )));
    }
    Ok(q)
}

/// Partial-pivot LU solve followed by one step of iterative refinement.
pub(crate) fn solve_refined(system: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = system.clone().lu();
    let mut x = lu
        .solve(rhs)
        .ok_or_else(|| Error::Numeric("singular linear system".into()))?;
    let r = rhs - system * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("linear solve produced non-finite values".into()));
    }
    Ok(x)
}

/// Value iteration until `||Tq - q|| <= tol (1 - gamma) / (2 gamma)`, which puts
/// the returned table within `tol` of `Q*`.
pub fn exact_q_star(mdp: &FiniteMdp, tol: f64) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    let gamma = mdp.discount();
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    if gamma == 0.0 {
        return Ok(bellman_optimality(mdp, &q)?.0);
    }
    let stop = tol * (1.0 - gamma) / (2.0 * gamma);
    loop {
        let next = bellman_optimality(mdp, &q)?.0;
        let gap = next.sup_distance(&q);
        q = next;
        if gap <= stop {
            return Ok(q);
        }
    }
}

/// `delta = r + gamma sum_a' pi(a'|s') q(s', a') - q(s, a)`, with no bootstrap
/// when `s'` is terminal.
pub fn td_error(
    mdp: &FiniteMdp,
    transition: &Transition,
    policy: &PolicyTable,
    q: &QTable,
) -> Result<f64> {
    let Transition {
        state,
        action,
        reward,
        next_state,
    } = *transition;
    if state >= mdp.n_states() || next_state >= mdp.n_states() || action >= mdp.n_actions() {
        return Err(Error::Dimension(format!(
            "transition ({state}, {action}, {next_state}) out of range"
        )));
    }
    let bootstrap = if mdp.is_terminal(next_state) {
        0.0
    } else {
        policy.expected_value(q, next_state)
    };
    Ok(reward + mdp.discount() * bootstrap - q.get(state, action))
}
