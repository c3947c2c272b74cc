//! Sample-based learning with history-dependent eligibility traces.
//!
//! Every visit `k` of an episode keeps its own trace summary of the suffix
//! history `(s_k, a_k), ..., (s_t, a_t)`. At step `t` each summary is advanced
//! with the new pair and the TD error is broadcast as
//! `Q(s_k, a_k) += alpha gamma^{t-k} beta(F_{k:t}) delta_t`. Repeated visits to
//! one pair therefore carry independent streams, which matters whenever `beta`
//! does not factor into per-step traces.
//!
//! Episodes start in a uniformly chosen non-terminal state and stop on entering
//! a terminal state, whose bootstrap is zero, or after `max_steps` steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{exact_q_pi, FiniteMdp, PolicyTable, QTable};
use crate::traces::{init_summary, step_summary, TraceStrategy, TraceSummary};

pub const DEFAULT_MAX_STEPS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSizeSchedule {
    Constant(f64),
    /// `alpha_n = alpha0 / (1 + n / n0)` for episode `n`.
    Harmonic { alpha0: f64, n0: f64 },
}

impl StepSizeSchedule {
    pub fn validate(&self) -> Result<()> {
        let (alpha, extra_ok) = match *self {
            StepSizeSchedule::Constant(alpha) => (alpha, true),
            StepSizeSchedule::Harmonic { alpha0, n0 } => (alpha0, n0 > 0.0 && n0.is_finite()),
        };
        if !(alpha > 0.0 && alpha <= 1.0) || !extra_ok {
            return Err(Error::InvalidParameter(format!(
                "step size schedule {self:?} needs alpha in (0, 1] and n0 > 0"
            )));
        }
        Ok(())
    }

    pub fn alpha(&self, episode: usize) -> f64 {
        match *self {
            StepSizeSchedule::Constant(alpha) => alpha,
            StepSizeSchedule::Harmonic { alpha0, n0 } => alpha0 / (1.0 + episode as f64 / n0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateMode {
    /// Apply each update as soon as it is computed.
    #[default]
    Online,
    /// Accumulate against the episode's initial table and apply at the end.
    Offline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub strategy: TraceStrategy,
    pub schedule: StepSizeSchedule,
    pub max_episodes: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub mode: UpdateMode,
}

impl LearnerConfig {
    pub fn new(strategy: TraceStrategy, schedule: StepSizeSchedule, max_episodes: usize, seed: u64) -> Self {
        Self {
            strategy,
            schedule,
            max_episodes,
            max_steps: DEFAULT_MAX_STEPS,
            seed,
            mode: UpdateMode::Online,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        self.schedule.validate()?;
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Visits of the running episode with one suffix summary per visit.
#[derive(Debug, Clone, Default)]
pub struct EpisodeBuffer {
    pairs: Vec<(usize, usize)>,
    summaries: Vec<TraceSummary>,
}

impl EpisodeBuffer {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn summaries(&self) -> &[TraceSummary] {
        &self.summaries
    }

    /// Advances every stored summary with `pair`, then opens a new visit whose
    /// summary encodes the one-element history.
    fn push(
        &mut self,
        pair: (usize, usize),
        strategy: &TraceStrategy,
        target: &PolicyTable,
        behavior: &PolicyTable,
    ) -> Result<()> {
        for summary in &mut self.summaries {
            // A zero coefficient stays zero for every strategy.
            if summary.steps > 0 && summary.beta(strategy) == 0.0 {
                continue;
            }
            *summary = step_summary(strategy, *summary, pair, target, behavior)?.0;
        }
        self.pairs.push(pair);
        self.summaries.push(init_summary(strategy));
        Ok(())
    }
}

/// Per-episode options beyond the step size.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeOptions {
    pub max_steps: Option<usize>,
    pub mode: UpdateMode,
    /// Fixed first pair instead of a uniform non-terminal state and `a_0 ~ mu`.
    pub start: Option<(usize, usize)>,
    /// Keep every applied weight and TD error in the log.
    pub record: bool,
}

/// One applied update weight `gamma^{t-k} beta(F_{k:t})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateWeight {
    pub k: usize,
    pub t: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLog {
    pub steps: usize,
    /// The episode hit `max_steps` before reaching a terminal state.
    pub truncated: bool,
    pub pairs: Vec<(usize, usize)>,
    /// Filled only when recording.
    pub weights: Vec<UpdateWeight>,
    /// `delta_t` per step, filled only when recording.
    pub deltas: Vec<f64>,
}

/// One online episode with the default step cap. Returns the updated table and
/// the number of steps taken.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    target: &PolicyTable,
    behavior: &PolicyTable,
    strategy: &TraceStrategy,
    q: QTable,
    alpha: f64,
    rng: &mut R,
) -> Result<(QTable, usize)> {
    let (q, log) = run_episode_with(
        mdp,
        target,
        behavior,
        strategy,
        q,
        alpha,
        &EpisodeOptions::default(),
        rng,
    )?;
    Ok((q, log.steps))
}

#[allow(clippy::too_many_arguments)]
pub fn run_episode_with<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    target: &PolicyTable,
    behavior: &PolicyTable,
    strategy: &TraceStrategy,
    mut q: QTable,
    alpha: f64,
    options: &EpisodeOptions,
    rng: &mut R,
) -> Result<(QTable, EpisodeLog)> {
    mdp.check_policy(target)?;
    mdp.check_policy(behavior)?;
    mdp.check_q(&q)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if !q.is_finite() {
        return Err(Error::Numeric("initial Q-table is not finite".into()));
    }
    let max_steps = options.max_steps.unwrap_or(DEFAULT_MAX_STEPS);
    if max_steps == 0 {
        return Err(Error::InvalidParameter("max_steps must be positive".into()));
    }
    let gamma = mdp.discount();
    let (mut s, mut a) = match options.start {
        Some((s, a)) => {
            if s >= mdp.n_states() || a >= mdp.n_actions() || mdp.is_terminal(s) {
                return Err(Error::InvalidParameter(format!(
                    "start pair ({s}, {a}) is out of range or terminal"
                )));
            }
            (s, a)
        }
        None => {
            let s = uniform_start(mdp, rng)?;
            (s, behavior.sample(s, rng))
        }
    };

    // Offline mode bootstraps from the table frozen at the start.
    let frozen = (options.mode == UpdateMode::Offline).then(|| q.clone());
    let mut pending = vec![0.0; mdp.n_pairs()];
    let mut buffer = EpisodeBuffer::default();
    let mut log = EpisodeLog::default();
    let mut t = 0;
    loop {
        buffer.push((s, a), strategy, target, behavior)?;
        let next = mdp.sample_next(s, a, rng);
        let reference = frozen.as_ref().unwrap_or(&q);
        let bootstrap = if mdp.is_terminal(next) {
            0.0
        } else {
            target.expected_value(reference, next)
        };
        let delta = mdp.reward(s, a) + gamma * bootstrap - reference.get(s, a);
        if !delta.is_finite() {
            return Err(Error::Numeric(format!("non-finite TD error at step {t}")));
        }
        if options.record {
            log.deltas.push(delta);
        }
        let mut decay = 1.0;
        for (k, (&(sk, ak), summary)) in buffer
            .pairs
            .iter()
            .zip(&buffer.summaries)
            .enumerate()
            .rev()
        {
            let weight = decay * summary.beta(strategy);
            decay *= gamma;
            if options.record {
                log.weights.push(UpdateWeight { k, t, weight });
            }
            if weight == 0.0 {
                continue;
            }
            let update = alpha * weight * delta;
            match options.mode {
                UpdateMode::Online => *q.get_mut(sk, ak) += update,
                UpdateMode::Offline => pending[sk * mdp.n_actions() + ak] += update,
            }
        }
        t += 1;
        if mdp.is_terminal(next) {
            break;
        }
        if t == max_steps {
            log.truncated = true;
            break;
        }
        s = next;
        a = behavior.sample(s, rng);
    }
    if options.mode == UpdateMode::Offline {
        for (i, v) in pending.into_iter().enumerate() {
            *q.get_mut(i / mdp.n_actions(), i % mdp.n_actions()) += v;
        }
    }
    if !q.is_finite() {
        return Err(Error::Numeric("Q-table diverged".into()));
    }
    log.steps = t;
    log.pairs = buffer.pairs;
    Ok((q, log))
}

fn uniform_start<R: Rng + ?Sized>(mdp: &FiniteMdp, rng: &mut R) -> Result<usize> {
    let starts: Vec<usize> = (0..mdp.n_states()).filter(|s| !mdp.is_terminal(*s)).collect();
    if starts.is_empty() {
        return Err(Error::InvalidMdp("every state is terminal".into()));
    }
    Ok(starts[rng.random_range(0..starts.len())])
}

/// One row of a learning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// One-based episode count.
    pub episode: usize,
    /// `||q - Q^pi||_inf` after the episode.
    pub error: f64,
    pub steps: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub q: QTable,
    pub curve: Vec<CurvePoint>,
}

/// Runs `config.max_episodes` episodes from `q0`, logging the sup-norm error
/// against `Q^pi` after each one.
pub fn train(
    mdp: &FiniteMdp,
    target: &PolicyTable,
    behavior: &PolicyTable,
    config: &LearnerConfig,
    q0: QTable,
) -> Result<TrainOutput> {
    config.validate()?;
    mdp.check_q(&q0)?;
    let q_pi = exact_q_pi(mdp, target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let options = EpisodeOptions {
        max_steps: Some(config.max_steps),
        mode: config.mode,
        ..EpisodeOptions::default()
    };
    let mut q = q0;
    let mut curve = Vec::with_capacity(config.max_episodes);
    for episode in 0..config.max_episodes {
        let alpha = config.schedule.alpha(episode);
        let (next, log) =
            run_episode_with(mdp, target, behavior, &config.strategy, q, alpha, &options, &mut rng)?;
        q = next;
        curve.push(CurvePoint {
            episode: episode + 1,
            error: q.sup_distance(&q_pi),
            steps: log.steps,
            truncated: log.truncated,
        });
    }
    Ok(TrainOutput { q, curve })
}

#[cfg(test)]
mod tests;
