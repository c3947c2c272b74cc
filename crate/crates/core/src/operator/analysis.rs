use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::closed_form::{expected_m_markov_closed_form, occupancy_closed_form, trace_transition_matrix};
use super::enumerate::{enumerate_occupancy, Cut, Occupancy, DEFAULT_EXPANSION_BUDGET};
use crate::error::{Error, Result};
use crate::mdp::{bellman_backup, exact_q_pi, policy_matrix, FiniteMdp, PolicyTable, QTable};
use crate::traces::{is_admissible, History, TraceStrategy};

/// Default enumeration tolerance.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Histories sampled by the admissibility spot-check in [`contraction_report`].
const ADMISSIBILITY_SAMPLES: usize = 1000;
const ADMISSIBILITY_LENGTH: usize = 12;
const ADMISSIBILITY_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorResult {
    pub mq: QTable,
    /// Certified bound on `||mq - MQ||_inf`.
    pub tail_bound: f64,
    pub horizon: usize,
    pub trajectories_expanded: u64,
}

/// The expected operator for one `(mdp, target, behavior, strategy)`, stored as
/// its enumerated occupancy so it can be applied to many tables.
#[derive(Debug, Clone)]
pub struct ExpectedOperator {
    mdp: FiniteMdp,
    target: PolicyTable,
    occupancy: Occupancy,
}

impl ExpectedOperator {
    /// Enumerates the occupancy with row error at most `row_tol`.
    pub fn enumerate(
        mdp: &FiniteMdp,
        target: &PolicyTable,
        behavior: &PolicyTable,
        strategy: &TraceStrategy,
        row_tol: f64,
    ) -> Result<Self> {
        Self::build(mdp, target, behavior, strategy, Cut::Tolerance(row_tol), DEFAULT_EXPANSION_BUDGET)
    }

    /// Accumulates levels `0..=horizon` exactly and nothing beyond.
    pub fn enumerate_horizon(
        mdp: &FiniteMdp,
        target: &PolicyTable,
        behavior: &PolicyTable,
        strategy: &TraceStrategy,
        horizon: usize,
    ) -> Result<Self> {
        Self::build(mdp, target, behavior, strategy, Cut::Horizon(horizon), DEFAULT_EXPANSION_BUDGET)
    }

    /// As [`ExpectedOperator::enumerate`] with an explicit branch budget.
    pub fn enumerate_with_budget(
        mdp: &FiniteMdp,
        target: &PolicyTable,
        behavior: &PolicyTable,
        strategy: &TraceStrategy,
        row_tol: f64,
        budget: u64,
    ) -> Result<Self> {
        Self::build(mdp, target, behavior, strategy, Cut::Tolerance(row_tol), budget)
    }

    fn build(
        mdp: &FiniteMdp,
        target: &PolicyTable,
        behavior: &PolicyTable,
        strategy: &TraceStrategy,
        cut: Cut,
        budget: u64,
    ) -> Result<Self> {
        let occupancy = enumerate_occupancy(mdp, target, behavior, strategy, cut, budget)?;
        Ok(Self {
            mdp: mdp.clone(),
            target: target.clone(),
            occupancy,
        })
    }

    /// `C[(s,a), (s',a')] = sum_t gamma^t E_mu[beta_t 1{(s_t, a_t) = (s', a')}]`.
    pub fn occupancy(&self) -> &DMatrix<f64> {
        &self.occupancy.matrix
    }

    /// Bound on the missing mass of any row of the occupancy.
    pub fn row_error(&self) -> f64 {
        self.occupancy.row_error
    }

    pub fn horizon(&self) -> usize {
        self.occupancy.horizon
    }

    pub fn expanded(&self) -> u64 {
        self.occupancy.expanded
    }

    /// `MQ = q + C (T_pi q - q)`.
    pub fn apply(&self, q: &QTable) -> Result<OperatorResult> {
        let td = bellman_backup(&self.mdp, &self.target, q)?.into_vector() - q.values();
        let mq = QTable::from_vector(q.n_actions(), q.values() + &self.occupancy.matrix * &td)?;
        Ok(OperatorResult {
            mq,
            tail_bound: self.occupancy.row_error * td.amax(),
            horizon: self.occupancy.horizon,
            trajectories_expanded: self.occupancy.expanded,
        })
    }

    /// `L = I - C (I - gamma P_pi)`, so that `MQ - Q^pi = L (Q - Q^pi)`.
    pub fn linear_map(&self) -> Result<DMatrix<f64>> {
        let n = self.mdp.n_pairs();
        let p = policy_matrix(&self.mdp, &self.target)?;
        let id = DMatrix::<f64>::identity(n, n);
        Ok(&id - &self.occupancy.matrix * (&id - p * self.mdp.discount()))
    }
}

/// Exact expected operator up to a certified truncation error of `tol`.
pub fn expected_m_enumerate(
    mdp: &FiniteMdp,
    target: &PolicyTable,
    behavior: &PolicyTable,
    strategy: &TraceStrategy,
    q: &QTable,
    tol: f64,
) -> Result<OperatorResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    mdp.check_q(q)?;
    let td = bellman_backup(mdp, target, q)?.into_vector() - q.values();
    let scale = td.amax();
    if scale == 0.0 {
        // q = T_pi q is already the fixed point.
        mdp.check_policy(behavior)?;
        strategy.validate()?;
        return Ok(OperatorResult {
            mq: q.clone(),
            tail_bound: 0.0,
            horizon: 0,
            trajectories_expanded: 0,
        });
    }
    ExpectedOperator::enumerate(mdp, target, behavior, strategy, tol / scale)?.apply(q)
}

/// Expected operator truncated after `horizon` steps, with no tail.
pub fn expected_m_enumerate_horizon(
    mdp: &FiniteMdp,
    target: &PolicyTable,
    behavior: &PolicyTable,
    strategy: &TraceStrategy,
    q: &QTable,
    horizon: usize,
) -> Result<QTable> {
    mdp.check_q(q)?;
    Ok(ExpectedOperator::enumerate_horizon(mdp, target, behavior, strategy, horizon)?
        .apply(q)?
        .mq)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveMap {
    pub matrix: DMatrix<f64>,
    /// Certified bound on `||L_true - matrix||_inf`.
    pub error_bound: f64,
}

impl EffectiveMap {
    /// Maximum absolute row sum.
    pub fn norm(&self) -> f64 {
        inf_norm(&self.matrix)
    }
}

/// The matrix `L` with `MQ - Q^pi = L (Q - Q^pi)`.
///
/// `M` is affine in `Q`, so column `i` is `M(e_i) - M(0)`; all columns share one
/// enumerated occupancy. Occupancy row error `tol / (1 + gamma)` keeps the
/// error in `L` within `tol` because `||I - gamma P_pi||_inf <= 1 + gamma`.
pub fn effective_linear_map(
    mdp: &FiniteMdp,
    target: &PolicyTable,
    behavior: &PolicyTable,
    strategy: &TraceStrategy,
    tol: f64,
) -> Result<EffectiveMap> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    let row_tol = tol / (1.0 + mdp.discount());
    let op = ExpectedOperator::enumerate(mdp, target, behavior, strategy, row_tol)?;
    Ok(EffectiveMap {
        matrix: op.linear_map()?,
        error_bound: op.row_error() * (1.0 + mdp.discount()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub norm_before: f64,
    pub norm_after: f64,
    pub gamma: f64,
    pub effective_map_norm: f64,
    /// `||I - C (I - gamma P_pi)||_inf` with exact `C`, factorable strategies only.
    pub lemma2_norm: Option<f64>,
    /// No sampled history violated `beta <= prod rho`.
    pub admissible: bool,
    pub tail_bound: f64,
}

impl ContractionReport {
    /// `norm_after <= gamma norm_before + slack`.
    pub fn contracts(&self, slack: f64) -> bool {
        self.norm_after <= self.gamma * self.norm_before + slack
    }
}

pub fn contraction_report(
    mdp: &FiniteMdp,
    target: &PolicyTable,
    behavior: &PolicyTable,
    strategy: &TraceStrategy,
    q: &QTable,
    tol: f64,
) -> Result<ContractionReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    mdp.check_q(q)?;
    let gamma = mdp.discount();
    let q_pi = exact_q_pi(mdp, target)?;
    let td = bellman_backup(mdp, target, q)?.into_vector() - q.values();
    let row_tol = tol / td.amax().max(1.0 + gamma);
    let op = ExpectedOperator::enumerate(mdp, target, behavior, strategy, row_tol)?;
    let result = op.apply(q)?;
    let lemma2 = if strategy.is_factorable() {
        Some(lemma2_norm(mdp, target, behavior, strategy)?)
    } else {
        None
    };
    Ok(ContractionReport {
        norm_before: q.sup_distance(&q_pi),
        norm_after: result.mq.sup_distance(&q_pi),
        gamma,
        effective_map_norm: inf_norm(&op.linear_map()?),
        lemma2_norm: lemma2,
        admissible: spot_check_admissible(mdp, target, behavior, strategy)?,
        tail_bound: result.tail_bound,
    })
}

/// Samples behavior histories from uniformly drawn start pairs and checks every
/// prefix.
fn spot_check_admissible(
    mdp: &FiniteMdp,
    target: &PolicyTable,
    behavior: &PolicyTable,
    strategy: &TraceStrategy,
) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(ADMISSIBILITY_SEED);
    let na = mdp.n_actions();
    for _ in 0..ADMISSIBILITY_SAMPLES {
        let start = rng.random_range(0..mdp.n_pairs());
        let (mut s, mut a) = (start / na, start % na);
        let mut history = History::new(vec![(s, a)])?;
        for _ in 0..ADMISSIBILITY_LENGTH {
            s = mdp.sample_next(s, a, &mut rng);
            a = behavior.sample(s, &mut rng);
            history.push((s, a));
            if !is_admissible(strategy, &history, target, behavior)?.ok {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// `||I - C (I - gamma P_pi)||_inf` with `C = (I - gamma P_cmu)^{-1}`.
pub fn lemma2_norm(
    mdp: &FiniteMdp,
    target: &PolicyTable,
    behavior: &PolicyTable,
    strategy: &TraceStrategy,
) -> Result<f64> {
    let n = mdp.n_pairs();
    let c = occupancy_closed_form(mdp, target, behavior, strategy)?;
    let id = DMatrix::<f64>::identity(n, n);
    let p = policy_matrix(mdp, target)?;
    Ok(inf_norm(&(&id - c * (&id - p * mdp.discount()))))
}

/// `||(MQ - Q^pi) - sum_{t=1}^{t_max} gamma^t (P_cmu^{t-1} P_pi - P_cmu^t)(Q - Q^pi)||_inf`.
pub fn lemma1_residual(
    mdp: &FiniteMdp,
    target: &PolicyTable,
    behavior: &PolicyTable,
    strategy: &TraceStrategy,
    q: &QTable,
    t_max: usize,
) -> Result<f64> {
    let mq = expected_m_markov_closed_form(mdp, target, behavior, strategy, q)?;
    let q_pi = exact_q_pi(mdp, target)?;
    let p_c = trace_transition_matrix(mdp, target, behavior, strategy)?;
    let p_pi = policy_matrix(mdp, target)?;
    let gamma = mdp.discount();
    let e: DVector<f64> = q.values() - q_pi.values();
    let pi_e = &p_pi * &e;

    let mut sum = DVector::zeros(mdp.n_pairs());
    // `prev = P_cmu^{t-1} P_pi e`, `cur = P_cmu^t e`.
    let mut prev = pi_e;
    let mut cur = &p_c * &e;
    let mut discount = gamma;
    for _ in 1..=t_max {
        sum += (&prev - &cur) * discount;
        prev = &p_c * prev;
        cur = &p_c * cur;
        discount *= gamma;
    }
    Ok((mq.values() - q_pi.values() - sum).amax())
}

/// `2 gamma^{t_max} / (1 - gamma) ||Q - Q^pi||_inf`, the bound on [`lemma1_residual`].
pub fn lemma1_tail_bound(gamma: f64, t_max: usize, distance: f64) -> f64 {
    2.0 * gamma.powi(t_max as i32) / (1.0 - gamma) * distance
}

/// A table on which one application of `M` moves away from `Q^pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonContractionWitness {
    pub q: QTable,
    pub norm_before: f64,
    pub norm_after: f64,
}

/// Random search for `q` with `||Mq - Q^pi|| > ||q - Q^pi||`.
///
/// Candidates are `Q^pi + e` with `e` uniform on `[-1, 1]^n`. Returns `None`
/// when no candidate in `attempts` exceeds the margin `tol`.
pub fn find_noncontraction_witness(
    mdp: &FiniteMdp,
    target: &PolicyTable,
    behavior: &PolicyTable,
    strategy: &TraceStrategy,
    tol: f64,
    attempts: usize,
    seed: u64,
) -> Result<Option<NonContractionWitness>> {
    let q_pi = exact_q_pi(mdp, target)?;
    let op = ExpectedOperator::enumerate(mdp, target, behavior, strategy, tol / 2.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..attempts {
        let e = DVector::from_fn(mdp.n_pairs(), |_, _| rng.random_range(-1.0..=1.0));
        let q = QTable::from_vector(mdp.n_actions(), q_pi.values() + &e)?;
        let result = op.apply(&q)?;
        let norm_before = q.sup_distance(&q_pi);
        let norm_after = result.mq.sup_distance(&q_pi);
        if norm_after > norm_before + tol + result.tail_bound {
            return Ok(Some(NonContractionWitness {
                q,
                norm_before,
                norm_after,
            }));
        }
    }
    Ok(None)
}

pub(crate) fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
