//! Finite MDPs, policies, Q-tables and the Bellman machinery built on them.
//!
//! State-action pairs are flattened row-major: pair `(s, a)` lives at index
//! `s * n_actions + a`. Every dense vector and matrix in the crate uses that
//! ordering.

pub(crate) mod bellman;
mod fixtures;
mod format;
mod garnet;

pub use bellman::{
    apply_policy_operator, bellman_backup, bellman_optimality, exact_q_pi, exact_q_star,
    policy_matrix, td_error,
};
pub use fixtures::{chain2, chain2_episodic, CHAIN2_EPISODIC_TERMINATION};
pub use format::{load_mdp, parse_mdp, MdpFile};
pub use garnet::{generate_random_mdp, GarnetParams};

use std::collections::BTreeSet;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};

/// Tolerance on row sums of transition and policy tables.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// A finite discounted MDP `(S, A, P, R, gamma)` with optional absorbing terminals.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    /// Indexed `(s, a, s')`, row-major.
    transition: Vec<f64>,
    /// Indexed `(s, a)`.
    reward: Vec<f64>,
    discount: f64,
    terminal_states: BTreeSet<usize>,
}

impl FiniteMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
        terminal_states: BTreeSet<usize>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp(
                "n_states and n_actions must be positive".into(),
            ));
        }
        let n_pairs = n_states * n_actions;
        if transition.len() != n_pairs * n_states {
            return Err(Error::Dimension(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_pairs * n_states
            )));
        }
        if reward.len() != n_pairs {
            return Err(Error::Dimension(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                n_pairs
            )));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidMdp(format!(
                "discount must lie in [0, 1), got {discount}"
            )));
        }
        for (i, row) in transition.chunks(n_states).enumerate() {
            let (s, a) = (i / n_actions, i % n_actions);
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidMdp(format!(
                    "transition row ({s}, {a}) has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidMdp(format!(
                    "transition row ({s}, {a}) sums to {sum}"
                )));
            }
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp(format!("non-finite reward {r}")));
        }
        for &t in &terminal_states {
            if t >= n_states {
                return Err(Error::InvalidMdp(format!(
                    "terminal state {t} out of range"
                )));
            }
            for a in 0..n_actions {
                let p = n_states * (t * n_actions + a) + t;
                if transition[p] != 1.0 || reward[t * n_actions + a] != 0.0 {
                    return Err(Error::InvalidMdp(format!(
                        "terminal state {t} must be absorbing with zero reward (action {a})"
                    )));
                }
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            discount,
            terminal_states,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    #[inline]
    pub fn pair_index(&self, state: usize, action: usize) -> usize {
        state * self.n_actions + action
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn terminal_states(&self) -> &BTreeSet<usize> {
        &self.terminal_states
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal_states.contains(&state)
    }

    /// Distribution over next states for `(state, action)`.
    #[inline]
    pub fn successors(&self, state: usize, action: usize) -> &[f64] {
        let start = self.pair_index(state, action) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    #[inline]
    pub fn transition_prob(&self, state: usize, action: usize, next: usize) -> f64 {
        self.successors(state, action)[next]
    }

    #[inline]
    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[self.pair_index(state, action)]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    pub fn reward_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.reward)
    }

    /// `max |R(s, a)|`.
    pub fn reward_sup_norm(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Same dynamics and rewards under a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.reward.clone(),
            discount,
            self.terminal_states.clone(),
        )
    }

    /// Samples a successor state.
    pub fn sample_next<R: Rng + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> usize {
        sample_categorical(self.successors(state, action), rng)
    }

    pub(crate) fn check_q(&self, q: &QTable) -> Result<()> {
        if q.n_actions() != self.n_actions || q.len() != self.n_pairs() {
            return Err(Error::Dimension(format!(
                "Q-table is {}x{}, MDP is {}x{}",
                q.n_states(),
                q.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }

    pub(crate) fn check_policy(&self, policy: &PolicyTable) -> Result<()> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(Error::Dimension(format!(
                "policy is {}x{}, MDP is {}x{}",
                policy.n_states(),
                policy.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }
}

/// Per-state action distribution. Used for both target and behavior policies.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidPolicy("empty policy table".into()));
        }
        if probs.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidPolicy(format!(
                    "row {s} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {sum}")));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// One action per state with probability one.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidPolicy(format!(
                    "action {a} out of range in state {s}"
                )));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    /// Greedy with respect to `q`; ties go to the lowest action index.
    pub fn greedy(q: &QTable) -> Self {
        Self::epsilon_greedy(q, 0.0)
    }

    /// Greedy action gets `1 - eps + eps/|A|`, every other action `eps/|A|`.
    pub fn epsilon_greedy(q: &QTable, eps: f64) -> Self {
        let actions: Vec<usize> = (0..q.n_states()).map(|s| q.argmax(s)).collect();
        Self::mixture_toward(q.n_actions(), &actions, eps)
    }

    /// Every state prefers `action` with the epsilon-greedy split.
    pub fn prefer(n_states: usize, n_actions: usize, action: usize, eps: f64) -> Result<Self> {
        if action >= n_actions {
            return Err(Error::InvalidPolicy(format!(
                "preferred action {action} out of range"
            )));
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::InvalidPolicy(format!("eps must lie in [0, 1], got {eps}")));
        }
        Ok(Self::mixture_toward(n_actions, &vec![action; n_states], eps))
    }

    fn mixture_toward(n_actions: usize, actions: &[usize], eps: f64) -> Self {
        let n_states = actions.len();
        let spread = eps / n_actions as f64;
        let mut probs = vec![spread; n_states * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0 - eps + spread;
        }
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    /// Dirichlet(1) rows; every entry is positive with probability one.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states {
            probs.extend(dirichlet_ones(n_actions, rng));
        }
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state * self.n_actions + action]
    }

    #[inline]
    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// True when every action has positive probability in every state.
    pub fn has_full_support(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    /// `sum_a pi(a|s) q(s, a)`.
    #[inline]
    pub fn expected_value(&self, q: &QTable, state: usize) -> f64 {
        self.row(state)
            .iter()
            .enumerate()
            .map(|(a, p)| p * q.get(state, a))
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        sample_categorical(self.row(state), rng)
    }
}

/// Q-function as a dense vector over state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_actions: usize,
    values: DVector<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::constant(n_states, n_actions, 0.0)
    }

    pub fn constant(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self {
            n_actions,
            values: DVector::from_element(n_states * n_actions, value),
        }
    }

    pub fn from_vec(n_actions: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_vector(n_actions, DVector::from_vec(values))
    }

    pub fn from_vector(n_actions: usize, values: DVector<f64>) -> Result<Self> {
        if n_actions == 0 || !values.len().is_multiple_of(n_actions) || values.is_empty() {
            return Err(Error::Dimension(format!(
                "{} values do not tile {} actions",
                values.len(),
                n_actions
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite Q value {v}")));
        }
        Ok(Self { n_actions, values })
    }

    /// Uniform entries in `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let values = (0..n_states * n_actions)
            .map(|_| rng.random_range(-scale..=scale))
            .collect::<Vec<_>>();
        Self {
            n_actions,
            values: DVector::from_vec(values),
        }
    }

    pub fn n_states(&self) -> usize {
        self.values.len() / self.n_actions
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.n_actions + action]
    }

    #[inline]
    pub fn get_mut(&mut self, state: usize, action: usize) -> &mut f64 {
        &mut self.values[state * self.n_actions + action]
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.values
    }

    /// Lowest-index maximiser of `q(state, .)`.
    pub fn argmax(&self, state: usize) -> usize {
        let row = &self.values.as_slice()[state * self.n_actions..(state + 1) * self.n_actions];
        let mut best = 0;
        for (a, v) in row.iter().enumerate().skip(1) {
            if *v > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max_value(&self, state: usize) -> f64 {
        self.get(state, self.argmax(state))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.amax()
    }

    /// `||self - other||_inf`.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        (&self.values - &other.values).amax()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn with_values(&self, values: DVector<f64>) -> Self {
        Self {
            n_actions: self.n_actions,
            values,
        }
    }
}

/// One sampled step `(s, a, r, s')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

pub(crate) fn dirichlet_ones<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..k)
        .map(|_| {
            let x: f64 = Exp1.sample(rng);
            x.max(f64::MIN_POSITIVE)
        })
        .collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}
