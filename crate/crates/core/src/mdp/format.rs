//! Plain-text MDP fixture files.
//!
//! A fixture is a TOML document with exactly these keys:
//!
//! ```toml
//! n_states = 2
//! n_actions = 2
//! discount = 0.5
//! # (s, a, s') row-major: index = (s * n_actions + a) * n_states + s'
//! transition = [1.0, 0.0,  0.0, 1.0,  1.0, 0.0,  0.0, 1.0]
//! # (s, a) row-major: index = s * n_actions + a
//! reward = [0.0, 0.0, 0.0, 1.0]
//! terminal_states = []
//! ```
//!
//! `terminal_states` may be omitted. Unknown keys are rejected.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FiniteMdp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    #[serde(default)]
    pub terminal_states: Vec<usize>,
}

impl MdpFile {
    pub fn into_mdp(self) -> Result<FiniteMdp> {
        FiniteMdp::new(
            self.n_states,
            self.n_actions,
            self.transition,
            self.reward,
            self.discount,
            self.terminal_states.into_iter().collect::<BTreeSet<_>>(),
        )
    }

    pub fn from_mdp(mdp: &FiniteMdp) -> Self {
        Self {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            discount: mdp.discount(),
            transition: mdp.transitions().to_vec(),
            reward: mdp.rewards().to_vec(),
            terminal_states: mdp.terminal_states().iter().copied().collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("MDP file serializes")
    }
}

pub fn parse_mdp(text: &str) -> Result<FiniteMdp> {
    let file: MdpFile = toml::from_str(text).map_err(|e| {
        let token = e
            .span()
            .and_then(|span| text.get(span))
            .unwrap_or("<document>")
            .to_string();
        Error::parse(token, e.message().to_string())
    })?;
    file.into_mdp()
}

pub fn load_mdp(path: &Path) -> Result<FiniteMdp> {
    parse_mdp(&std::fs::read_to_string(path)?)
}
