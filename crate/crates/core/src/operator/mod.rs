//! The expected multistep operator `MQ = Q + sum_t gamma^t E_mu[beta_t delta_t]`.
//!
//! Three independent evaluations are provided: exact trajectory enumeration
//! with a certified truncation bound, the geometric-series closed form for
//! strategies whose coefficients factor into per-step traces, and Monte Carlo.
//! All of them treat terminal states as ordinary absorbing states.

mod analysis;
mod closed_form;
mod enumerate;
mod monte_carlo;


pub use analysis::{
    contraction_report, effective_linear_map, expected_m_enumerate, expected_m_enumerate_horizon,
    find_noncontraction_witness, lemma1_residual, lemma1_tail_bound, lemma2_norm,
    ContractionReport, EffectiveMap, ExpectedOperator, NonContractionWitness, OperatorResult,
    DEFAULT_TOL,
};
pub use closed_form::{expected_m_markov_closed_form, occupancy_closed_form, trace_transition_matrix};
pub use enumerate::{Occupancy, DEFAULT_EXPANSION_BUDGET};
pub use monte_carlo::{expected_m_monte_carlo, MonteCarloEstimate};
