//! History-dependent trace coefficients.
//!
//! A [`TraceStrategy`] maps a state-action history `(s0, a0), ..., (st, at)`
//! to a nonnegative coefficient `beta_t` that weights the TD error at time `t`.
//! `beta_0 = 1` for every strategy and the products below run over `k = 1..t`;
//! the first pair never contributes a factor.
//!
//! | strategy            | `beta_t`                                   |
//! |---------------------|--------------------------------------------|
//! | `is`                | `prod rho_k`                               |
//! | `truncated_is`      | `min(d, prod rho_k)`                       |
//! | `tree_backup`       | `prod lambda pi(a_k|s_k)`                  |
//! | `retrace`           | `prod lambda min(1, rho_k)`                |
//! | `nonmarkov_retrace` | `lambda min(1, beta_{t-1} rho_t)`          |
//! | `qlambda`           | `lambda^t`                                 |
//! | `composite`         | `prod g(s_k,a_k) l(s_k,a_k) rho_k`         |
//!
//! Every strategy also admits a one-scalar running summary so that learners and
//! the operator engine can advance `beta` one pair at a time.

mod spec;

use crate::error::{Error, Result};
use crate::mdp::PolicyTable;

/// Admissibility slack on `beta <= prod rho` to absorb product rounding.
pub const ADMISSIBILITY_TOL: f64 = 1e-12;

/// Ordered `(state, action)` visits; the first element is `(s0, a0)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct History {
    pairs: Vec<(usize, usize)>,
}

impl History {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidParameter("history must not be empty".into()));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// `t`, the number of pairs after the first.
    pub fn steps(&self) -> usize {
        self.pairs.len() - 1
    }

    pub fn push(&mut self, pair: (usize, usize)) {
        self.pairs.push(pair);
    }

    /// Suffix starting at visit `k`.
    pub fn suffix(&self, k: usize) -> Result<History> {
        History::new(self.pairs.get(k..).unwrap_or_default().to_vec())
    }
}

/// Per-pair multiplier table used by the composite strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum PairTable {
    Constant(f64),
    /// Indexed by flattened pair `s * n_actions + a`.
    PerPair(Vec<f64>),
}

impl PairTable {
    fn lookup(&self, state: usize, action: usize, n_actions: usize) -> Result<f64> {
        match self {
            PairTable::Constant(v) => Ok(*v),
            PairTable::PerPair(values) => values
                .get(state * n_actions + action)
                .copied()
                .ok_or_else(|| {
                    Error::Dimension(format!(
                        "multiplier table has {} entries, pair ({state}, {action}) is out of range",
                        values.len()
                    ))
                }),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let bad = match self {
            PairTable::Constant(v) => !(0.0..=1.0).contains(v),
            PairTable::PerPair(values) => values.iter().any(|v| !(0.0..=1.0).contains(v)),
        };
        if bad {
            return Err(Error::InvalidParameter(format!(
                "composite {name} multipliers must lie in [0, 1]"
            )));
        }
        Ok(())
    }
}

/// Which `beta` rule to apply, with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceStrategy {
    ImportanceSampling,
    TruncatedIs { clip: f64 },
    TreeBackup { lambda: f64 },
    Retrace { lambda: f64 },
    NonMarkovRetrace { lambda: f64 },
    /// Q(lambda) with off-policy corrections.
    QLambda { lambda: f64 },
    /// `prod g(.) l(.) rho` with per-pair discount and lambda multipliers.
    Composite { discount: PairTable, lambda: PairTable },
}

impl TraceStrategy {
    pub fn truncated_is(clip: f64) -> Result<Self> {
        let s = TraceStrategy::TruncatedIs { clip };
        s.validate().map(|_| s)
    }

    pub fn tree_backup(lambda: f64) -> Result<Self> {
        let s = TraceStrategy::TreeBackup { lambda };
        s.validate().map(|_| s)
    }

    pub fn retrace(lambda: f64) -> Result<Self> {
        let s = TraceStrategy::Retrace { lambda };
        s.validate().map(|_| s)
    }

    pub fn nonmarkov_retrace(lambda: f64) -> Result<Self> {
        let s = TraceStrategy::NonMarkovRetrace { lambda };
        s.validate().map(|_| s)
    }

    pub fn qlambda(lambda: f64) -> Result<Self> {
        let s = TraceStrategy::QLambda { lambda };
        s.validate().map(|_| s)
    }

    pub fn composite(discount: PairTable, lambda: PairTable) -> Result<Self> {
        let s = TraceStrategy::Composite { discount, lambda };
        s.validate().map(|_| s)
    }

    /// The seven strategies at their default laboratory parameters.
    pub fn standard_suite() -> Vec<TraceStrategy> {
        vec![
            TraceStrategy::ImportanceSampling,
            TraceStrategy::TruncatedIs { clip: 1.0 },
            TraceStrategy::TreeBackup { lambda: 0.9 },
            TraceStrategy::Retrace { lambda: 0.9 },
            TraceStrategy::NonMarkovRetrace { lambda: 0.9 },
            TraceStrategy::QLambda { lambda: 0.9 },
            TraceStrategy::Composite {
                discount: PairTable::Constant(1.0),
                lambda: PairTable::Constant(0.9),
            },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let check_lambda = |lambda: f64| {
            if (0.0..=1.0).contains(&lambda) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "lambda must lie in [0, 1], got {lambda}"
                )))
            }
        };
        match self {
            TraceStrategy::ImportanceSampling => Ok(()),
            TraceStrategy::TruncatedIs { clip } => {
                if *clip >= 0.0 && clip.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "truncation level d must be finite and >= 0, got {clip}"
                    )))
                }
            }
            TraceStrategy::TreeBackup { lambda }
            | TraceStrategy::Retrace { lambda }
            | TraceStrategy::NonMarkovRetrace { lambda }
            | TraceStrategy::QLambda { lambda } => check_lambda(*lambda),
            TraceStrategy::Composite { discount, lambda } => {
                discount.validate("discount")?;
                lambda.validate("lambda")
            }
        }
    }

    /// Short kind name, as used in strategy specification strings.
    pub fn kind(&self) -> &'static str {
        match self {
            TraceStrategy::ImportanceSampling => "is",
            TraceStrategy::TruncatedIs { .. } => "truncated_is",
            TraceStrategy::TreeBackup { .. } => "tree_backup",
            TraceStrategy::Retrace { .. } => "retrace",
            TraceStrategy::NonMarkovRetrace { .. } => "nonmarkov_retrace",
            TraceStrategy::QLambda { .. } => "qlambda",
            TraceStrategy::Composite { .. } => "composite",
        }
    }

    /// True when `beta` factors into per-decision traces `c(s, a)`.
    pub fn is_factorable(&self) -> bool {
        !matches!(
            self,
            TraceStrategy::TruncatedIs { .. } | TraceStrategy::NonMarkovRetrace { .. }
        )
    }
}

/// Running summary of a history under one strategy.
///
/// `value` is the running `beta`, except for truncated IS where it is the raw
/// ratio product and `beta = min(d, value)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSummary {
    pub value: f64,
    pub steps: usize,
}

impl TraceSummary {
    /// `beta` of the summarised history.
    #[inline]
    pub fn beta(&self, strategy: &TraceStrategy) -> f64 {
        match strategy {
            _ if self.steps == 0 => 1.0,
            TraceStrategy::TruncatedIs { clip } => clip.min(self.value),
            _ => self.value,
        }
    }
}

/// `rho = pi(a|s) / mu(a|s)`; `index` names the history position in errors.
#[inline]
pub(crate) fn ratio(
    state: usize,
    action: usize,
    index: usize,
    target: &PolicyTable,
    behavior: &PolicyTable,
) -> Result<f64> {
    let mu = behavior.prob(state, action);
    if mu <= 0.0 {
        return Err(Error::ZeroBehavior {
            index,
            state,
            action,
        });
    }
    Ok(target.prob(state, action) / mu)
}

fn check_pair(state: usize, action: usize, target: &PolicyTable) -> Result<()> {
    if state >= target.n_states() || action >= target.n_actions() {
        return Err(Error::Dimension(format!(
            "pair ({state}, {action}) out of range"
        )));
    }
    Ok(())
}

/// `beta(F_t)` computed directly from the whole history.
pub fn beta(
    strategy: &TraceStrategy,
    history: &History,
    target: &PolicyTable,
    behavior: &PolicyTable,
) -> Result<f64> {
    for &(s, a) in history.pairs() {
        check_pair(s, a, target)?;
    }
    let tail = || history.pairs().iter().enumerate().skip(1);
    let ratios = || -> Result<Vec<f64>> {
        tail().map(|(k, &(s, a))| ratio(s, a, k, target, behavior)).collect()
    };
    // Every pair after the first must be on the behavior support.
    let rhos = ratios()?;
    let t = history.steps();
    let value = match strategy {
        TraceStrategy::ImportanceSampling => rhos.iter().product(),
        TraceStrategy::TruncatedIs { clip } => {
            if t == 0 {
                1.0
            } else {
                clip.min(rhos.iter().product())
            }
        }
        TraceStrategy::TreeBackup { lambda } => tail()
            .map(|(_, &(s, a))| lambda * target.prob(s, a))
            .product(),
        TraceStrategy::Retrace { lambda } => rhos.iter().map(|r| lambda * r.min(1.0)).product(),
        TraceStrategy::NonMarkovRetrace { lambda } => rhos
            .iter()
            .fold(1.0, |prev, r| lambda * (prev * r).min(1.0)),
        TraceStrategy::QLambda { lambda } => lambda.powi(t as i32),
        TraceStrategy::Composite { discount, lambda } => {
            let n_actions = target.n_actions();
            let mut product = 1.0;
            for ((_, &(s, a)), rho) in tail().zip(&rhos) {
                product *= discount.lookup(s, a, n_actions)?
                    * lambda.lookup(s, a, n_actions)?
                    * rho;
            }
            product
        }
    };
    Ok(value)
}

/// Summary of the one-pair history `F_0`, for which `beta = 1`.
pub fn init_summary(_strategy: &TraceStrategy) -> TraceSummary {
    TraceSummary {
        value: 1.0,
        steps: 0,
    }
}

/// Appends `pair` to the summarised history and returns the new summary and `beta`.
pub fn step_summary(
    strategy: &TraceStrategy,
    summary: TraceSummary,
    pair: (usize, usize),
    target: &PolicyTable,
    behavior: &PolicyTable,
) -> Result<(TraceSummary, f64)> {
    let (s, a) = pair;
    check_pair(s, a, target)?;
    let index = summary.steps + 1;
    let rho = ratio(s, a, index, target, behavior)?;
    let value = match strategy {
        TraceStrategy::ImportanceSampling | TraceStrategy::TruncatedIs { .. } => {
            summary.value * rho
        }
        TraceStrategy::NonMarkovRetrace { lambda } => lambda * (summary.value * rho).min(1.0),
        _ => summary.value * markov_factor(strategy, s, a, rho, target)?,
    };
    let next = TraceSummary {
        value,
        steps: index,
    };
    Ok((next, next.beta(strategy)))
}

/// Per-decision factor of a factorable strategy, given `rho` for the pair.
#[inline]
fn markov_factor(
    strategy: &TraceStrategy,
    state: usize,
    action: usize,
    rho: f64,
    target: &PolicyTable,
) -> Result<f64> {
    match strategy {
        TraceStrategy::ImportanceSampling => Ok(rho),
        TraceStrategy::TreeBackup { lambda } => Ok(lambda * target.prob(state, action)),
        TraceStrategy::Retrace { lambda } => Ok(lambda * rho.min(1.0)),
        TraceStrategy::QLambda { lambda } => Ok(*lambda),
        TraceStrategy::Composite { discount, lambda } => {
            let n_actions = target.n_actions();
            Ok(discount.lookup(state, action, n_actions)?
                * lambda.lookup(state, action, n_actions)?
                * rho)
        }
        TraceStrategy::TruncatedIs { .. } | TraceStrategy::NonMarkovRetrace { .. } => {
            Err(Error::Unsupported {
                strategy: strategy.to_string(),
                reason: "history-dependent coefficients do not factor into per-decision traces"
                    .into(),
            })
        }
    }
}

/// The trace `c(s, a)` with `beta(F_t) = prod_k c(s_k, a_k)`.
pub fn markov_trace(
    strategy: &TraceStrategy,
    state: usize,
    action: usize,
    target: &PolicyTable,
    behavior: &PolicyTable,
) -> Result<f64> {
    if !strategy.is_factorable() {
        return markov_factor(strategy, state, action, 0.0, target);
    }
    check_pair(state, action, target)?;
    let rho = ratio(state, action, 0, target, behavior)?;
    markov_factor(strategy, state, action, rho, target)
}

/// Outcome of checking `beta(F_t) <= prod rho_k` on one history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Admissibility {
    pub ok: bool,
    pub beta: f64,
    pub is_bound: f64,
}

pub fn is_admissible(
    strategy: &TraceStrategy,
    history: &History,
    target: &PolicyTable,
    behavior: &PolicyTable,
) -> Result<Admissibility> {
    let beta = beta(strategy, history, target, behavior)?;
    let is_bound = beta_is_bound(history, target, behavior)?;
    Ok(Admissibility {
        ok: beta <= is_bound + ADMISSIBILITY_TOL,
        beta,
        is_bound,
    })
}

fn beta_is_bound(history: &History, target: &PolicyTable, behavior: &PolicyTable) -> Result<f64> {
    history
        .pairs()
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &(s, a))| ratio(s, a, k, target, behavior))
        .product()
}

/// History-free bound on `beta_t` for a strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaBound {
    /// `beta_t <= prod rho_k` holds for every history.
    pub dominated_by_is: bool,
    /// A constant `u_t` with `beta_t <= u_t`, when one exists.
    pub constant: Option<f64>,
}

pub fn beta_upper_bound(strategy: &TraceStrategy, t: usize) -> BetaBound {
    if t == 0 {
        return BetaBound {
            dominated_by_is: true,
            constant: Some(1.0),
        };
    }
    let pow = |lambda: f64| lambda.powi(t as i32);
    let (dominated_by_is, constant) = match strategy {
        TraceStrategy::ImportanceSampling => (true, None),
        TraceStrategy::TruncatedIs { clip } => (true, Some(*clip)),
        TraceStrategy::TreeBackup { lambda } | TraceStrategy::Retrace { lambda } => {
            (*lambda <= 1.0, Some(pow(*lambda)))
        }
        TraceStrategy::NonMarkovRetrace { lambda } => (*lambda <= 1.0, Some(*lambda)),
        TraceStrategy::QLambda { lambda } => (*lambda == 0.0, Some(pow(*lambda))),
        TraceStrategy::Composite { discount, lambda } => {
            let bounded = |table: &PairTable| match table {
                PairTable::Constant(v) => *v <= 1.0,
                PairTable::PerPair(values) => values.iter().all(|v| *v <= 1.0),
            };
            (bounded(discount) && bounded(lambda), None)
        }
    };
    BetaBound {
        dominated_by_is,
        constant,
    }
}

#[cfg(test)]
mod tests;
