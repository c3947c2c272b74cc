//! Exact expectation over behavior trajectories.
//!
//! Trajectories are expanded level by level from every start pair, and what is
//! accumulated is the discounted occupancy
//! `C[(s,a), (s',a')] = sum_t gamma^t E_mu[beta_t 1{(s_t,a_t) = (s',a')}]`,
//! from which `MQ = Q + C (T_pi Q - Q)` for every `Q`.
//!
//! Branches at the same pair with the same trace summary have identical
//! futures and are merged exactly. For factorable strategies every future
//! coefficient is the current one times per-step factors, so all branches at a
//! pair merge into one node carrying their coefficient-weighted probability.
//!
//! For the two history-dependent strategies the future is a monotone function
//! of the summary with a known Lipschitz constant, so a branch may be moved down
//! onto a nearby smaller summary at a cost of `mass * shift * K_t`. Whole
//! subtrees are dropped at the cost of a bound on their remaining mass. Both
//! costs are charged against the tolerance, so `row_error` is a certificate
//! rather than an estimate. Both operations only lower coefficients, so the
//! enumerated occupancy never exceeds the true one entrywise.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, PolicyTable};
use crate::traces::{beta_upper_bound, step_summary, TraceStrategy, TraceSummary};

/// Default cap on generated branches across all start pairs.
pub const DEFAULT_EXPANSION_BUDGET: u64 = 50_000_000;

/// Shares of the tolerance that dropping and moving branches may use before
/// the final cut.
const PRUNE_SHARE: f64 = 0.25;
const MERGE_SHARE: f64 = 0.5;

/// Enumerated discounted occupancy matrix with its truncation certificate.
#[derive(Debug, Clone)]
pub struct Occupancy {
    /// `n x n`, rows are start pairs.
    pub matrix: DMatrix<f64>,
    /// Certified bound on the missing row mass, `max_row sum_j (C_true - C)`.
    pub row_error: f64,
    /// Deepest level whose contributions were accumulated.
    pub horizon: usize,
    /// Branches generated, before merging.
    pub expanded: u64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Cut {
    /// Stop as soon as the certified row error fits under the tolerance.
    Tolerance(f64),
    /// Accumulate levels `0..=h` exactly; only exact merges are made.
    Horizon(usize),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    pair: usize,
    /// Trace summary value; always one in linear mode.
    value: f64,
    /// Behavior probability of the merged branches; in linear mode weighted by
    /// each branch's coefficient.
    mu_mass: f64,
    /// `sum over merged branches of w * prod rho`.
    pi_mass: f64,
}

/// How the future coefficients of a node depend on its summary.
#[derive(Debug, Clone, Copy)]
enum Shape {
    /// `beta_{t+j} = beta_t * prod c_k` with `c_k <= factor` when known.
    Linear { factor: Option<f64> },
    /// `beta = min(clip, value)`, `value` the raw ratio product.
    Truncated { clip: f64 },
    /// `beta_{t+1} = lambda min(1, beta_t rho)`, `value = beta_t`.
    Recursive { lambda: f64 },
}

#[derive(Debug, Clone, Copy)]
struct TailModel {
    gamma: f64,
    shape: Shape,
    /// `beta <= prod rho` on every history.
    dominated: bool,
}

impl TailModel {
    fn new(strategy: &TraceStrategy, gamma: f64) -> Self {
        let shape = match strategy {
            TraceStrategy::TruncatedIs { clip } => Shape::Truncated { clip: *clip },
            TraceStrategy::NonMarkovRetrace { lambda } => Shape::Recursive { lambda: *lambda },
            TraceStrategy::TreeBackup { lambda }
            | TraceStrategy::Retrace { lambda }
            | TraceStrategy::QLambda { lambda } => Shape::Linear {
                factor: Some(*lambda),
            },
            TraceStrategy::ImportanceSampling | TraceStrategy::Composite { .. } => {
                Shape::Linear { factor: None }
            }
        };
        Self {
            gamma,
            shape,
            dominated: beta_upper_bound(strategy, 1).dominated_by_is,
        }
    }

    fn is_linear(&self) -> bool {
        matches!(self.shape, Shape::Linear { .. })
    }

    /// Bound on `sum_{j >= 0} gamma^{t+j} E[beta_{t+j}]` over the node's subtree.
    ///
    /// Validated strategies satisfy `beta <= prod rho` except Q(lambda), whose
    /// factor is at most `lambda <= 1`. Under `mu`, `E[rho] <= 1` at every step, so by
    /// concavity the expected future of a clipped summary never exceeds its
    /// current value.
    fn subtree(&self, node: &Node, t: usize) -> f64 {
        let g = self.gamma;
        let gt = g.powi(t as i32);
        let by_ratio = node.pi_mass * gt / (1.0 - g);
        match self.shape {
            Shape::Linear { factor: Some(c) } => {
                let by_factor = node.mu_mass * gt / (1.0 - g * c);
                if self.dominated {
                    by_factor.min(by_ratio)
                } else {
                    by_factor
                }
            }
            Shape::Linear { factor: None } => by_ratio,
            Shape::Truncated { clip } => {
                let now = if t == 0 { 1.0 } else { clip.min(node.value) };
                let later = clip.min(node.value) * g / (1.0 - g);
                by_ratio.min(node.mu_mass * gt * (now + later))
            }
            Shape::Recursive { lambda } => {
                by_ratio.min(node.mu_mass * node.value * gt / (1.0 - g * lambda))
            }
        }
    }

    /// `K_t` with `|future(x) - future(y)| <= K_t |x - y|` per unit mass.
    fn lipschitz(&self, t: usize) -> f64 {
        let g = self.gamma;
        let gt = g.powi(t as i32);
        match self.shape {
            Shape::Truncated { .. } => gt / (1.0 - g),
            Shape::Recursive { lambda } => gt / (1.0 - g * lambda),
            Shape::Linear { .. } => 0.0,
        }
    }

    /// Smallest level whose bound falls below `budget` for a unit root.
    fn horizon_estimate(&self, budget: f64) -> usize {
        let root = Node {
            pair: 0,
            value: 1.0,
            mu_mass: 1.0,
            pi_mass: 1.0,
        };
        (1..10_000)
            .find(|&t| self.subtree(&root, t) <= budget)
            .unwrap_or(10_000)
    }
}

pub(crate) fn enumerate_occupancy(
    mdp: &FiniteMdp,
    target: &PolicyTable,
    behavior: &PolicyTable,
    strategy: &TraceStrategy,
    cut: Cut,
    budget: u64,
) -> Result<Occupancy> {
    mdp.check_policy(target)?;
    mdp.check_policy(behavior)?;
    strategy.validate()?;
    if let Cut::Tolerance(tol) = cut {
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "enumeration tolerance must be positive, got {tol}"
            )));
        }
    }
    let model = TailModel::new(strategy, mdp.discount());
    let n = mdp.n_pairs();
    let counter = AtomicU64::new(0);
    let rows = (0..n)
        .into_par_iter()
        .map(|start| {
            let ctx = RowContext {
                mdp,
                target,
                behavior,
                strategy,
                model,
                cut,
                budget,
                counter: &counter,
            };
            ctx.run(start)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut matrix = DMatrix::zeros(n, n);
    let mut row_error: f64 = 0.0;
    let mut horizon = 0;
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.values.into_iter().enumerate() {
            matrix[(i, j)] = v;
        }
        row_error = row_error.max(row.error);
        horizon = horizon.max(row.horizon);
    }
    Ok(Occupancy {
        matrix,
        row_error,
        horizon,
        expanded: counter.load(Ordering::Relaxed),
    })
}

struct RowResult {
    values: Vec<f64>,
    error: f64,
    horizon: usize,
}

struct RowContext<'a> {
    mdp: &'a FiniteMdp,
    target: &'a PolicyTable,
    behavior: &'a PolicyTable,
    strategy: &'a TraceStrategy,
    model: TailModel,
    cut: Cut,
    budget: u64,
    counter: &'a AtomicU64,
}

impl RowContext<'_> {
    fn run(&self, start: usize) -> Result<RowResult> {
        let gamma = self.mdp.discount();
        let mut values = vec![0.0; self.mdp.n_pairs()];
        let (tol, ramp) = match self.cut {
            Cut::Tolerance(tol) => (tol, self.model.horizon_estimate(tol * PRUNE_SHARE).max(1)),
            Cut::Horizon(_) => (0.0, 1),
        };
        let adaptive = matches!(self.cut, Cut::Tolerance(_));
        // Cumulative allowance at level `t`, reaching `share * tol` at the ramp.
        let allowance = |share: f64, t: usize| share * tol * (t as f64 / ramp as f64).min(1.0);

        let mut level = vec![Node {
            pair: start,
            value: 1.0,
            mu_mass: 1.0,
            pi_mass: 1.0,
        }];
        let mut pruned = 0.0;
        let mut moved = 0.0;
        let mut bounds = Vec::new();
        let mut t = 0usize;
        loop {
            bounds.clear();
            bounds.extend(level.iter().map(|node| self.model.subtree(node, t)));
            let level_total: f64 = bounds.iter().sum();
            match self.cut {
                Cut::Tolerance(_) if t > 0 && pruned + moved + level_total <= tol => {
                    pruned += level_total;
                    break;
                }
                Cut::Horizon(h) if t > h => {
                    pruned += level_total;
                    break;
                }
                _ => {}
            }
            if level.is_empty() {
                break;
            }

            // Drop the lightest subtrees while the allowance lasts.
            let mut keep = vec![true; level.len()];
            if adaptive && t > 0 {
                let limit = allowance(PRUNE_SHARE, t);
                let mut order: Vec<usize> = (0..level.len()).collect();
                order.sort_by(|&a, &b| bounds[a].total_cmp(&bounds[b]).then(a.cmp(&b)));
                for i in order {
                    if pruned + bounds[i] > limit {
                        break;
                    }
                    pruned += bounds[i];
                    keep[i] = false;
                }
            }

            let discount_t = gamma.powi(t as i32);
            let mut children = Vec::new();
            for (node, _) in level.iter().zip(&keep).filter(|(_, k)| **k) {
                let summary = TraceSummary {
                    value: node.value,
                    steps: t,
                };
                values[node.pair] += discount_t * node.mu_mass * summary.beta(self.strategy);
                self.expand(node, summary, &mut children)?;
            }
            let generated = children.len() as u64;
            let total = self.counter.fetch_add(generated, Ordering::Relaxed) + generated;
            if total > self.budget {
                return Err(Error::Budget {
                    budget: self.budget,
                    horizon: t + 1,
                    expanded: total,
                });
            }

            children.sort_by(|a, b| a.pair.cmp(&b.pair).then(a.value.total_cmp(&b.value)));
            level = if adaptive && !self.model.is_linear() {
                let limit = allowance(MERGE_SHARE, t + 1) - moved;
                let (merged, cost) = self.cluster(children, self.model.lipschitz(t + 1), limit);
                moved += cost;
                merged
            } else {
                merge_equal(children)
            };
            t += 1;
        }
        Ok(RowResult {
            values,
            error: pruned + moved,
            horizon: t.saturating_sub(1),
        })
    }

    fn expand(&self, node: &Node, summary: TraceSummary, out: &mut Vec<Node>) -> Result<()> {
        let n_actions = self.mdp.n_actions();
        let (s, a) = (node.pair / n_actions, node.pair % n_actions);
        for (next_state, &p) in self.mdp.successors(s, a).iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (next_action, &mu) in self.behavior.row(next_state).iter().enumerate() {
                if mu == 0.0 {
                    continue;
                }
                let (child, beta) = step_summary(
                    self.strategy,
                    summary,
                    (next_state, next_action),
                    self.target,
                    self.behavior,
                )?;
                if beta == 0.0 {
                    // Zero coefficients stay zero for every strategy.
                    continue;
                }
                let pi_mass = node.pi_mass * p * self.target.prob(next_state, next_action);
                let (value, mu_mass) = if self.model.is_linear() {
                    (1.0, node.mu_mass * p * mu * child.value)
                } else {
                    (child.value, node.mu_mass * p * mu)
                };
                out.push(Node {
                    pair: next_state * n_actions + next_action,
                    value,
                    mu_mass,
                    pi_mass,
                });
            }
        }
        Ok(())
    }

    /// Moves nodes down onto the smallest summary of their cluster within one
    /// pair. Input is sorted by `(pair, value)`. Returns the merged level and
    /// the certified cost spent, at most `limit`.
    fn cluster(&self, sorted: Vec<Node>, lipschitz: f64, limit: f64) -> (Vec<Node>, f64) {
        let sorted = merge_equal(sorted);
        if limit <= 0.0 || sorted.len() < 2 {
            return (sorted, 0.0);
        }
        // Threshold on single-move cost chosen so that moving every node onto
        // its immediate predecessor would fit in the limit.
        let mut costs: Vec<f64> = sorted
            .windows(2)
            .filter(|w| w[0].pair == w[1].pair)
            .map(|w| w[1].mu_mass * (w[1].value - w[0].value) * lipschitz)
            .collect();
        costs.sort_by(f64::total_cmp);
        let mut threshold = 0.0;
        let mut acc = 0.0;
        for c in costs {
            if acc + c > limit {
                break;
            }
            acc += c;
            threshold = c;
        }

        let mut spent = 0.0;
        let mut out: Vec<Node> = Vec::with_capacity(sorted.len());
        for node in sorted {
            if let Some(rep) = out.last_mut() {
                if rep.pair == node.pair {
                    let cost = node.mu_mass * (node.value - rep.value) * lipschitz;
                    if cost <= threshold && spent + cost <= limit {
                        spent += cost;
                        rep.mu_mass += node.mu_mass;
                        rep.pi_mass += node.pi_mass;
                        continue;
                    }
                }
            }
            out.push(node);
        }
        (out, spent)
    }
}

/// Merges runs of identical `(pair, value)` in a sorted level.
fn merge_equal(sorted: Vec<Node>) -> Vec<Node> {
    let mut out: Vec<Node> = Vec::with_capacity(sorted.len());
    for node in sorted {
        match out.last_mut() {
            Some(last) if last.pair == node.pair && last.value == node.value => {
                last.mu_mass += node.mu_mass;
                last.pi_mass += node.pi_mass;
            }
            _ => out.push(node),
        }
    }
    out
}
