//! Control by iterating `Q_{k+1} = M_k Q_k` with targets that become greedy in
//! the limit and arbitrary full-support behavior policies.
//!
//! Every iteration is checked against
//! `||Q_{k+1} - Q*|| <= gamma ||Q_k - Q*|| + eps_k / (1 - gamma) ||Q_k|| + slack`,
//! where `eps_k` is the smallest constant with `T_{pi_k} Q_k >= T Q_k - eps_k ||Q_k||`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{bellman_backup, bellman_optimality, exact_q_star, FiniteMdp, PolicyTable, QTable};
use crate::operator::{expected_m_enumerate, expected_m_markov_closed_form};
use crate::traces::TraceStrategy;

/// Slack added to the right-hand side of the per-iteration bound.
pub const BOUND_SLACK: f64 = 1e-7;
/// Enumeration tolerance for strategies without a closed form.
pub const ENUMERATION_TOL: f64 = 1e-8;
/// Accuracy of the `Q*` reference.
pub const Q_STAR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonSchedule {
    /// `1 / (k + 1)`.
    Inverse,
    /// `rate^k`, `rate in [0, 1)`.
    Exponential { rate: f64 },
    /// `value` for `k < until`, then `1 / (k + 1)`.
    ConstantThenInverse { value: f64, until: usize },
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EpsilonSchedule::Inverse => Ok(()),
            EpsilonSchedule::Exponential { rate } if (0.0..1.0).contains(&rate) => Ok(()),
            EpsilonSchedule::ConstantThenInverse { value, .. } if (0.0..=1.0).contains(&value) => {
                Ok(())
            }
            other => Err(Error::InvalidParameter(format!("invalid epsilon schedule {other:?}"))),
        }
    }

    pub fn epsilon(&self, k: usize) -> f64 {
        match *self {
            EpsilonSchedule::Inverse => 1.0 / (k as f64 + 1.0),
            EpsilonSchedule::Exponential { rate } => rate.powi(k as i32),
            EpsilonSchedule::ConstantThenInverse { value, until } if k < until => value,
            EpsilonSchedule::ConstantThenInverse { .. } => 1.0 / (k as f64 + 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BehaviorMode {
    Uniform,
    /// Epsilon-greedy on `Q_k` with exploration `max(eps_k, floor)`, `floor > 0`.
    EpsilonGreedyMirror { floor: f64 },
    /// One Dirichlet-random policy drawn from `seed`, used at every iteration.
    FixedRandom { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitMode {
    Zeros,
    /// Every entry `-||R|| / (1 - gamma)`.
    Pessimistic,
    /// Every entry `+||R|| / (1 - gamma)`.
    Optimistic,
    /// Uniform on `[-||R|| / (1 - gamma), ||R|| / (1 - gamma)]`.
    Random { seed: u64 },
}

impl InitMode {
    pub fn initial_q(&self, mdp: &FiniteMdp) -> QTable {
        let bound = mdp.reward_sup_norm() / (1.0 - mdp.discount());
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        match *self {
            InitMode::Zeros => QTable::zeros(ns, na),
            InitMode::Pessimistic => QTable::constant(ns, na, -bound),
            InitMode::Optimistic => QTable::constant(ns, na, bound),
            InitMode::Random { seed } => {
                QTable::random(ns, na, bound, &mut ChaCha8Rng::seed_from_u64(seed))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    pub strategy: TraceStrategy,
    pub schedule: EpsilonSchedule,
    pub behavior: BehaviorMode,
    pub init: InitMode,
    pub iterations: usize,
    /// Early-stop threshold on `||Q_k - Q*||`.
    pub tol: f64,
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        self.schedule.validate()?;
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be >= 0, got {}", self.tol)));
        }
        if let BehaviorMode::EpsilonGreedyMirror { floor } = self.behavior {
            if !(floor > 0.0 && floor <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "mirror floor must lie in (0, 1], got {floor}"
                )));
            }
        }
        Ok(())
    }
}

/// One row of the control trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlRecord {
    pub k: usize,
    /// `||Q_k - Q*||`.
    pub err: f64,
    pub epsilon: f64,
    pub bound_rhs: f64,
    /// `||Q_{k+1} - Q*|| <= bound_rhs`.
    pub bound_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrace {
    pub records: Vec<ControlRecord>,
    pub q_final: QTable,
    pub q_star: QTable,
}

impl ControlTrace {
    pub fn final_error(&self) -> f64 {
        self.q_final.sup_distance(&self.q_star)
    }

    pub fn all_bounds_hold(&self) -> bool {
        self.records.iter().all(|r| r.bound_ok)
    }
}

/// Smallest `eps in [0, 1]` with `T_pi q >= T q - eps ||q||`. Zero when `q = 0`,
/// where any value satisfies the inequality.
pub fn epsilon_of(mdp: &FiniteMdp, q: &QTable, policy: &PolicyTable) -> Result<f64> {
    let norm = q.sup_norm();
    let (tq, _) = bellman_optimality(mdp, q)?;
    let tpi = bellman_backup(mdp, policy, q)?;
    if norm == 0.0 {
        return Ok(0.0);
    }
    let gap = tq
        .as_slice()
        .iter()
        .zip(tpi.as_slice())
        .fold(0.0f64, |m, (a, b)| m.max(a - b));
    Ok((gap / norm).clamp(0.0, 1.0))
}

/// Epsilon-greedy mixture on `q` with `eps = schedule(k)`.
pub fn make_target_policy(q: &QTable, k: usize, schedule: &EpsilonSchedule) -> PolicyTable {
    PolicyTable::epsilon_greedy(q, schedule.epsilon(k))
}

fn behavior_policy(
    mode: &BehaviorMode,
    q: &QTable,
    k: usize,
    schedule: &EpsilonSchedule,
) -> PolicyTable {
    match *mode {
        BehaviorMode::Uniform => PolicyTable::uniform(q.n_states(), q.n_actions()),
        BehaviorMode::EpsilonGreedyMirror { floor } => {
            PolicyTable::epsilon_greedy(q, schedule.epsilon(k).max(floor))
        }
        BehaviorMode::FixedRandom { seed } => PolicyTable::random(
            q.n_states(),
            q.n_actions(),
            &mut ChaCha8Rng::seed_from_u64(seed),
        ),
    }
}

/// One application of `M_k`, exact for factorable strategies and enumerated
/// otherwise.
pub fn control_step(
    mdp: &FiniteMdp,
    q: &QTable,
    k: usize,
    config: &ControlConfig,
    q_star: &QTable,
) -> Result<(QTable, ControlRecord)> {
    let target = make_target_policy(q, k, &config.schedule);
    let behavior = behavior_policy(&config.behavior, q, k, &config.schedule);
    if !behavior.has_full_support() {
        return Err(Error::InvalidPolicy(
            "control needs a behavior policy with full support".into(),
        ));
    }
    let next = if config.strategy.is_factorable() {
        expected_m_markov_closed_form(mdp, &target, &behavior, &config.strategy, q)?
    } else {
        expected_m_enumerate(mdp, &target, &behavior, &config.strategy, q, ENUMERATION_TOL)?.mq
    };
    let gamma = mdp.discount();
    let err = q.sup_distance(q_star);
    let epsilon = epsilon_of(mdp, q, &target)?;
    let bound_rhs = gamma * err + epsilon / (1.0 - gamma) * q.sup_norm() + BOUND_SLACK;
    let record = ControlRecord {
        k,
        err,
        epsilon,
        bound_rhs,
        bound_ok: next.sup_distance(q_star) <= bound_rhs,
    };
    Ok((next, record))
}

/// Iterates [`control_step`] from the configured initial table, stopping early
/// once `||Q_k - Q*|| <= tol`.
pub fn run_control(mdp: &FiniteMdp, config: &ControlConfig) -> Result<ControlTrace> {
    config.validate()?;
    let q_star = exact_q_star(mdp, Q_STAR_TOL)?;
    let mut q = config.init.initial_q(mdp);
    let mut records = Vec::with_capacity(config.iterations);
    for k in 0..config.iterations {
        if q.sup_distance(&q_star) <= config.tol {
            break;
        }
        let (next, record) = control_step(mdp, &q, k, config, &q_star)?;
        records.push(record);
        q = next;
    }
    Ok(ControlTrace {
        records,
        q_final: q,
        q_star,
    })
}
