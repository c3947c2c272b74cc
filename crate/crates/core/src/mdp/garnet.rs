use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{dirichlet_ones, FiniteMdp};
use crate::error::{Error, Result};

/// Parameters of a Garnet-style random MDP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GarnetParams {
    pub n_states: usize,
    pub n_actions: usize,
    /// Number of distinct successor states per pair.
    pub branching: usize,
    /// Rewards are uniform in `[-reward_scale, reward_scale]`.
    pub reward_scale: f64,
    pub discount: f64,
}

impl GarnetParams {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        branching: usize,
        reward_scale: f64,
        discount: f64,
    ) -> Self {
        Self {
            n_states,
            n_actions,
            branching,
            reward_scale,
            discount,
        }
    }
}

/// Each pair gets `branching` uniformly chosen successors with Dirichlet(1)
/// weights. Deterministic in `seed`.
pub fn generate_random_mdp(params: &GarnetParams, seed: u64) -> Result<FiniteMdp> {
    let &GarnetParams {
        n_states,
        n_actions,
        branching,
        reward_scale,
        discount,
    } = params;
    if n_states == 0 || n_actions == 0 {
        return Err(Error::InvalidParameter(
            "n_states and n_actions must be positive".into(),
        ));
    }
    if branching == 0 || branching > n_states {
        return Err(Error::InvalidParameter(format!(
            "branching must lie in [1, {n_states}], got {branching}"
        )));
    }
    if !(reward_scale >= 0.0 && reward_scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "reward_scale must be finite and non-negative, got {reward_scale}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward = Vec::with_capacity(n_states * n_actions);
    for pair in 0..n_states * n_actions {
        let targets = index::sample(&mut rng, n_states, branching);
        let weights = dirichlet_ones(branching, &mut rng);
        let row = &mut transition[pair * n_states..(pair + 1) * n_states];
        for (next, w) in targets.iter().zip(weights) {
            row[next] = w;
        }
        reward.push(if reward_scale > 0.0 {
            rng.random_range(-reward_scale..=reward_scale)
        } else {
            0.0
        });
    }
    FiniteMdp::new(
        n_states,
        n_actions,
        transition,
        reward,
        discount,
        BTreeSet::new(),
    )
}
