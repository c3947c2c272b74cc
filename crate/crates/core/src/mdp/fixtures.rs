use std::collections::BTreeSet;

use super::FiniteMdp;

/// Per-step probability of falling into the terminal state of [`chain2_episodic`].
pub const CHAIN2_EPISODIC_TERMINATION: f64 = 0.1;

/// Two states, actions `L = 0` and `R = 1`. `L` moves to `s0`, `R` moves to `s1`,
/// reward 1 only on `(s1, R)`, discount 0.5.
pub fn chain2() -> FiniteMdp {
    #[rustfmt::skip]
    let transition = vec![
        1.0, 0.0, // (s0, L) -> s0
        0.0, 1.0, // (s0, R) -> s1
        1.0, 0.0, // (s1, L) -> s0
        0.0, 1.0, // (s1, R) -> s1
    ];
    let reward = vec![0.0, 0.0, 0.0, 1.0];
    FiniteMdp::new(2, 2, transition, reward, 0.5, BTreeSet::new()).expect("chain2 is valid")
}

/// [`chain2`] plus an absorbing terminal state `2`, entered from every
/// non-terminal pair with probability [`CHAIN2_EPISODIC_TERMINATION`].
pub fn chain2_episodic() -> FiniteMdp {
    let base = chain2();
    let keep = 1.0 - CHAIN2_EPISODIC_TERMINATION;
    let mut transition = Vec::with_capacity(3 * 2 * 3);
    let mut reward = Vec::with_capacity(6);
    for s in 0..2 {
        for a in 0..2 {
            let row = base.successors(s, a);
            transition.extend([row[0] * keep, row[1] * keep, CHAIN2_EPISODIC_TERMINATION]);
            reward.push(base.reward(s, a));
        }
    }
    // The terminal state absorbs under both actions with zero reward.
    transition.extend([0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    reward.extend([0.0, 0.0]);
    FiniteMdp::new(3, 2, transition, reward, 0.5, BTreeSet::from([2]))
        .expect("chain2_episodic is valid")
}
