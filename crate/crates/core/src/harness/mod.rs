//! Experiment presets, seeded execution and CSV emission.
//!
//! Every random quantity of a run is drawn from a stream whose seed is
//! [`derive_seed`]`(root, component)`, so one `--seed` fixes every output byte
//! regardless of the worker count.
//!
//! CSV schemas, header row always present:
//!
//! | experiment          | columns |
//! |---------------------|---------|
//! | `evaluate_operator` | `state,action,q,mq,tail_bound,closed_form,q_pi,mc_estimate,mc_std_error` |
//! | `contraction_suite` | `strategy,gamma,norm_before,norm_after,map_norm,lemma2_norm,admissible` |
//! | `learn`             | `episode,sup_norm_error,steps` |
//! | `control`           | `k,err,epsilon,bound_rhs,bound_ok` |
//!
//! Optional values (`closed_form` for non-factorable strategies, `lemma2_norm`
//! likewise) are written as empty fields.

mod args;

pub use args::{
    parse_args, parse_init, parse_mdp_source, parse_policy_spec, parse_schedule,
    DEFAULT_GARNET_DISCOUNT,
};

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::control::{run_control, BehaviorMode, ControlConfig, EpsilonSchedule, InitMode};
use crate::error::{Error, Result};
use crate::learner::{train, LearnerConfig, StepSizeSchedule};
use crate::mdp::{
    chain2, chain2_episodic, exact_q_pi, generate_random_mdp, load_mdp, FiniteMdp, GarnetParams,
    PolicyTable, QTable,
};
use crate::operator::{
    contraction_report, expected_m_enumerate, expected_m_markov_closed_form,
    expected_m_monte_carlo, DEFAULT_TOL,
};
use crate::traces::TraceStrategy;

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "TRACE_LAB_THREADS";
pub const DEFAULT_MIRROR_FLOOR: f64 = 0.1;
pub const DEFAULT_EPISODES: usize = 20_000;
pub const DEFAULT_MC_SAMPLES: usize = 10_000;
pub const DEFAULT_CONTROL_ITERATIONS: usize = 200;
pub const LEARN_SCHEDULE: StepSizeSchedule = StepSizeSchedule::Harmonic {
    alpha0: 0.5,
    n0: 100.0,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    EvaluateOperator,
    ContractionSuite,
    Learn,
    Control,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MdpSource {
    Chain2,
    Chain2Episodic,
    /// Generated from the `garnet` stream of the root seed.
    Garnet(GarnetParams),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Uniform,
    /// Every state prefers `action` with the epsilon-greedy split.
    EpsGreedy { action: usize, eps: f64 },
    /// Dirichlet(1) rows; the seed defaults to the component stream.
    Random { seed: Option<u64> },
    /// Row-major probabilities.
    Table(Vec<f64>),
    /// Control only: epsilon-greedy on the current table, exploration floored.
    Mirror { floor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitSpec {
    Zeros,
    Pessimistic,
    Optimistic,
    Random { seed: Option<u64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    pub mdp: MdpSource,
    pub strategy: TraceStrategy,
    /// Defaults to `eps_greedy:action=0,eps=0.2`.
    pub target: Option<PolicySpec>,
    /// Defaults to `uniform`, or `random` for control.
    pub behavior: Option<PolicySpec>,
    /// Operator tolerance, or the early-stop threshold for control.
    pub tol: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub iterations: Option<usize>,
    /// Learner episodes, or Monte Carlo samples per pair for `evaluate_operator`.
    pub episodes: Option<usize>,
    pub schedule: EpsilonSchedule,
    pub init: InitSpec,
}

impl ExperimentSpec {
    /// The preset for `experiment` with every optional field at its default.
    pub fn preset(experiment: ExperimentKind, seed: u64) -> Self {
        Self {
            experiment,
            mdp: match experiment {
                ExperimentKind::Learn => MdpSource::Chain2Episodic,
                _ => MdpSource::Chain2,
            },
            strategy: TraceStrategy::Retrace { lambda: 0.9 },
            target: None,
            behavior: None,
            tol: None,
            seed,
            out: None,
            iterations: None,
            episodes: None,
            schedule: EpsilonSchedule::Inverse,
            init: InitSpec::Zeros,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// `splitmix64(splitmix64(root) ^ fnv1a(component))`.
pub fn derive_seed(root: u64, component: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in component.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(root) ^ hash)
}

/// Installs the global worker pool, capped by [`THREADS_ENV`] when set.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::parse(value.clone(), format!("{THREADS_ENV} must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidParameter(format!("cannot configure worker pool: {e}")))
}

pub fn load_source(source: &MdpSource, root_seed: u64) -> Result<FiniteMdp> {
    match source {
        MdpSource::Chain2 => Ok(chain2()),
        MdpSource::Chain2Episodic => Ok(chain2_episodic()),
        MdpSource::Garnet(params) => generate_random_mdp(params, derive_seed(root_seed, "garnet")),
        MdpSource::File(path) => load_mdp(path),
    }
}

/// Resolves a non-mirror policy spec against `mdp`.
pub fn build_policy(spec: &PolicySpec, mdp: &FiniteMdp, stream_seed: u64) -> Result<PolicyTable> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    match spec {
        PolicySpec::Uniform => Ok(PolicyTable::uniform(ns, na)),
        PolicySpec::EpsGreedy { action, eps } => PolicyTable::prefer(ns, na, *action, *eps),
        PolicySpec::Random { seed } => Ok(PolicyTable::random(
            ns,
            na,
            &mut ChaCha8Rng::seed_from_u64(seed.unwrap_or(stream_seed)),
        )),
        PolicySpec::Table(probs) => PolicyTable::new(ns, na, probs.clone()),
        PolicySpec::Mirror { .. } => Err(Error::InvalidPolicy(
            "mirror behavior depends on the iterate and only applies to control".into(),
        )),
    }
}

const DEFAULT_TARGET: PolicySpec = PolicySpec::EpsGreedy {
    action: 0,
    eps: 0.2,
};

/// A CSV document held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        writer.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            writer.write_record(row).map_err(csv_err)?;
        }
        writer
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Runs the experiment and returns its CSV table without writing anything.
pub fn execute(spec: &ExperimentSpec) -> Result<Table> {
    let mdp = load_source(&spec.mdp, spec.seed)?;
    match spec.experiment {
        ExperimentKind::EvaluateOperator => evaluate_operator(spec, &mdp),
        ExperimentKind::ContractionSuite => contraction_suite(spec, &mdp),
        ExperimentKind::Learn => learn(spec, &mdp),
        ExperimentKind::Control => control(spec, &mdp),
    }
}

fn policies(spec: &ExperimentSpec, mdp: &FiniteMdp) -> Result<(PolicyTable, PolicyTable)> {
    let target = build_policy(
        spec.target.as_ref().unwrap_or(&DEFAULT_TARGET),
        mdp,
        derive_seed(spec.seed, "target"),
    )?;
    let behavior = build_policy(
        spec.behavior.as_ref().unwrap_or(&PolicySpec::Uniform),
        mdp,
        derive_seed(spec.seed, "behavior"),
    )?;
    Ok((target, behavior))
}

/// Uniform on `[-||R|| / (1 - gamma), ||R|| / (1 - gamma)]` from the `q` stream.
fn random_q(spec: &ExperimentSpec, mdp: &FiniteMdp) -> QTable {
    let bound = (mdp.reward_sup_norm() / (1.0 - mdp.discount())).max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "q"));
    QTable::random(mdp.n_states(), mdp.n_actions(), bound, &mut rng)
}

fn evaluate_operator(spec: &ExperimentSpec, mdp: &FiniteMdp) -> Result<Table> {
    let (target, behavior) = policies(spec, mdp)?;
    let q = random_q(spec, mdp);
    let tol = spec.tol.unwrap_or(DEFAULT_TOL);
    let result = expected_m_enumerate(mdp, &target, &behavior, &spec.strategy, &q, tol)?;
    let closed = if spec.strategy.is_factorable() {
        Some(expected_m_markov_closed_form(mdp, &target, &behavior, &spec.strategy, &q)?)
    } else {
        None
    };
    let q_pi = exact_q_pi(mdp, &target)?;
    let mc = expected_m_monte_carlo(
        mdp,
        &target,
        &behavior,
        &spec.strategy,
        &q,
        spec.episodes.unwrap_or(DEFAULT_MC_SAMPLES),
        result.horizon.max(1),
        derive_seed(spec.seed, "monte_carlo"),
    )?;
    let mut table = Table::new(&[
        "state",
        "action",
        "q",
        "mq",
        "tail_bound",
        "closed_form",
        "q_pi",
        "mc_estimate",
        "mc_std_error",
    ]);
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            table.rows.push(vec![
                s.to_string(),
                a.to_string(),
                num(q.get(s, a)),
                num(result.mq.get(s, a)),
                num(result.tail_bound),
                opt_num(closed.as_ref().map(|c| c.get(s, a))),
                num(q_pi.get(s, a)),
                num(mc.estimate.get(s, a)),
                num(mc.std_error.get(s, a)),
            ]);
        }
    }
    Ok(table)
}

fn contraction_suite(spec: &ExperimentSpec, mdp: &FiniteMdp) -> Result<Table> {
    let (target, behavior) = policies(spec, mdp)?;
    let q = random_q(spec, mdp);
    let tol = spec.tol.unwrap_or(DEFAULT_TOL);
    let mut table = Table::new(&[
        "strategy",
        "gamma",
        "norm_before",
        "norm_after",
        "map_norm",
        "lemma2_norm",
        "admissible",
    ]);
    for strategy in TraceStrategy::standard_suite() {
        let report = contraction_report(mdp, &target, &behavior, &strategy, &q, tol)?;
        table.rows.push(vec![
            strategy.to_string(),
            num(report.gamma),
            num(report.norm_before),
            num(report.norm_after),
            num(report.effective_map_norm),
            opt_num(report.lemma2_norm),
            report.admissible.to_string(),
        ]);
    }
    Ok(table)
}

fn learn(spec: &ExperimentSpec, mdp: &FiniteMdp) -> Result<Table> {
    let (target, behavior) = policies(spec, mdp)?;
    let config = LearnerConfig::new(
        spec.strategy.clone(),
        LEARN_SCHEDULE,
        spec.episodes.unwrap_or(DEFAULT_EPISODES),
        derive_seed(spec.seed, "learner"),
    );
    let output = train(
        mdp,
        &target,
        &behavior,
        &config,
        QTable::zeros(mdp.n_states(), mdp.n_actions()),
    )?;
    let mut table = Table::new(&["episode", "sup_norm_error", "steps"]);
    for point in &output.curve {
        table.rows.push(vec![
            point.episode.to_string(),
            num(point.error),
            point.steps.to_string(),
        ]);
    }
    Ok(table)
}

fn control_config(spec: &ExperimentSpec) -> Result<ControlConfig> {
    let behavior = match spec.behavior.as_ref().unwrap_or(&PolicySpec::Random { seed: None }) {
        PolicySpec::Uniform => BehaviorMode::Uniform,
        PolicySpec::Random { seed } => BehaviorMode::FixedRandom {
            seed: seed.unwrap_or_else(|| derive_seed(spec.seed, "behavior")),
        },
        PolicySpec::Mirror { floor } => BehaviorMode::EpsilonGreedyMirror { floor: *floor },
        other => {
            return Err(Error::InvalidPolicy(format!(
                "control behavior must be uniform, random or mirror, got {other:?}"
            )))
        }
    };
    let init = match spec.init {
        InitSpec::Zeros => InitMode::Zeros,
        InitSpec::Pessimistic => InitMode::Pessimistic,
        InitSpec::Optimistic => InitMode::Optimistic,
        InitSpec::Random { seed } => InitMode::Random {
            seed: seed.unwrap_or_else(|| derive_seed(spec.seed, "init")),
        },
    };
    Ok(ControlConfig {
        strategy: spec.strategy.clone(),
        schedule: spec.schedule,
        behavior,
        init,
        iterations: spec.iterations.unwrap_or(DEFAULT_CONTROL_ITERATIONS),
        tol: spec.tol.unwrap_or(0.0),
    })
}

fn control(spec: &ExperimentSpec, mdp: &FiniteMdp) -> Result<Table> {
    let trace = run_control(mdp, &control_config(spec)?)?;
    let mut table = Table::new(&["k", "err", "epsilon", "bound_rhs", "bound_ok"]);
    for r in &trace.records {
        table.rows.push(vec![
            r.k.to_string(),
            num(r.err),
            num(r.epsilon),
            num(r.bound_rhs),
            r.bound_ok.to_string(),
        ]);
    }
    Ok(table)
}

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut file = tempfile::NamedTempFile::new_in(dir)?;
    file.write_all(bytes)?;
    file.as_file().sync_all()?;
    file.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Exit status for a failed run: numeric and resource failures are 1, invalid
/// input is 2.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Numeric(_) | Error::Budget { .. } | Error::Io(_) => EXIT_FAILURE,
        _ => EXIT_USAGE,
    }
}

/// Executes `spec`, writes its CSV to `spec.out` or standard output and returns
/// the process exit code. Diagnostics go to standard error.
pub fn run(spec: &ExperimentSpec) -> i32 {
    let outcome = execute(spec).and_then(|table| table.to_csv()).and_then(|bytes| {
        match &spec.out {
            Some(path) => write_atomic(path, &bytes),
            None => std::io::stdout().write_all(&bytes).map_err(Error::from),
        }
    });
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("trace-lab: {e}");
            exit_code(&e)
        }
    }
}
