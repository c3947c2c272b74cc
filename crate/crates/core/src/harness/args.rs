//! Command-line grammar.
//!
//! ```text
//! --mdp       chain2 | chain2_episodic | garnet:ns,na,b,scale[,gamma] | <path>
//! --target    uniform | eps_greedy:action=A,eps=E | random[:seed=N] | table:p,p,...
//! --behavior  the --target grammar, plus mirror[:floor=F] for control
//! --schedule  inverse | exponential:rate=R | delayed:value=V,until=N
//! --init      zeros | pessimistic | optimistic | random[:seed=N]
//! ```

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use super::{ExperimentKind, ExperimentSpec, InitSpec, MdpSource, PolicySpec};
use crate::control::EpsilonSchedule;
use crate::error::{Error, Result};
use crate::mdp::GarnetParams;
use crate::traces::TraceStrategy;

/// Discount used by `garnet:` sources that omit it.
pub const DEFAULT_GARNET_DISCOUNT: f64 = 0.5;

#[derive(Debug, Parser)]
#[command(
    name = "trace-lab",
    version,
    about = "Evaluate, analyse and learn with off-policy multistep operators on tabular MDPs"
)]
struct Cli {
    #[arg(long, value_enum)]
    experiment: ExperimentArg,
    /// `chain2`, `chain2_episodic`, `garnet:ns,na,b,scale[,gamma]` or a fixture path.
    #[arg(long, value_parser = parse_mdp_source)]
    mdp: Option<MdpSource>,
    /// Trace strategy, `kind[:param=value,...]`.
    #[arg(long, value_parser = parse_strategy, default_value = "retrace:lambda=0.9")]
    strategy: TraceStrategy,
    #[arg(long, value_parser = parse_policy_spec)]
    target: Option<PolicySpec>,
    #[arg(long, value_parser = parse_policy_spec)]
    behavior: Option<PolicySpec>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Exploration schedule for `control`.
    #[arg(long, value_parser = parse_schedule, default_value = "inverse")]
    schedule: EpsilonSchedule,
    /// Initial table for `control`.
    #[arg(long, value_parser = parse_init, default_value = "zeros")]
    init: InitSpec,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ExperimentArg {
    EvaluateOperator,
    ContractionSuite,
    Learn,
    Control,
}

impl From<ExperimentArg> for ExperimentKind {
    fn from(arg: ExperimentArg) -> Self {
        match arg {
            ExperimentArg::EvaluateOperator => ExperimentKind::EvaluateOperator,
            ExperimentArg::ContractionSuite => ExperimentKind::ContractionSuite,
            ExperimentArg::Learn => ExperimentKind::Learn,
            ExperimentArg::Control => ExperimentKind::Control,
        }
    }
}

/// Parses a full argument vector, program name first. Usage errors carry clap's
/// exit code 2.
pub fn parse_args<I, T>(argv: I) -> std::result::Result<ExperimentSpec, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let experiment = ExperimentKind::from(cli.experiment);
    let invalid = |message: String| clap::Error::raw(clap::error::ErrorKind::ValueValidation, message);
    if let Some(tol) = cli.tol {
        if !(tol >= 0.0 && tol.is_finite()) {
            return Err(invalid(format!("--tol must be finite and >= 0, got {tol}\n")));
        }
    }
    if matches!(cli.target, Some(PolicySpec::Mirror { .. })) {
        return Err(invalid("--target does not accept `mirror`\n".into()));
    }
    if matches!(cli.behavior, Some(PolicySpec::Mirror { .. })) && experiment != ExperimentKind::Control {
        return Err(invalid("`mirror` behavior is only meaningful for control\n".into()));
    }
    Ok(ExperimentSpec {
        experiment,
        mdp: cli.mdp.unwrap_or(match experiment {
            ExperimentKind::Learn => MdpSource::Chain2Episodic,
            _ => MdpSource::Chain2,
        }),
        strategy: cli.strategy,
        target: cli.target,
        behavior: cli.behavior,
        tol: cli.tol,
        seed: cli.seed,
        out: cli.out,
        iterations: cli.iterations,
        episodes: cli.episodes,
        schedule: cli.schedule,
        init: cli.init,
    })
}

fn parse_strategy(text: &str) -> Result<TraceStrategy> {
    text.parse()
}

pub fn parse_mdp_source(text: &str) -> Result<MdpSource> {
    let text = text.trim();
    match text {
        "chain2" => return Ok(MdpSource::Chain2),
        "chain2_episodic" => return Ok(MdpSource::Chain2Episodic),
        _ => {}
    }
    if let Some(params) = text.strip_prefix("garnet:") {
        let fields: Vec<&str> = params.split(',').map(str::trim).collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(Error::parse(params, "expected garnet:ns,na,b,scale[,gamma]"));
        }
        let n_states = parse_number(fields[0])?;
        let n_actions = parse_number(fields[1])?;
        let branching = parse_number(fields[2])?;
        let scale = parse_number(fields[3])?;
        let discount = match fields.get(4) {
            Some(field) => parse_number(field)?,
            None => DEFAULT_GARNET_DISCOUNT,
        };
        return Ok(MdpSource::Garnet(GarnetParams::new(
            n_states, n_actions, branching, scale, discount,
        )));
    }
    let path = PathBuf::from(text);
    if !path.is_file() {
        return Err(Error::parse(text, "not a builtin fixture, garnet spec or existing file"));
    }
    Ok(MdpSource::File(path))
}

pub fn parse_policy_spec(text: &str) -> Result<PolicySpec> {
    let text = text.trim();
    let (kind, params) = text.split_once(':').unwrap_or((text, ""));
    match kind.trim() {
        "uniform" => {
            expect_empty(params)?;
            Ok(PolicySpec::Uniform)
        }
        "eps_greedy" => {
            let mut kv = KeyValues::parse(params)?;
            let action = kv.required("action")?;
            let eps = kv.required("eps")?;
            kv.finish()?;
            Ok(PolicySpec::EpsGreedy { action, eps })
        }
        "random" => {
            let mut kv = KeyValues::parse(params)?;
            let seed = kv.optional("seed")?;
            kv.finish()?;
            Ok(PolicySpec::Random { seed })
        }
        "mirror" => {
            let mut kv = KeyValues::parse(params)?;
            let floor = kv.optional("floor")?.unwrap_or(super::DEFAULT_MIRROR_FLOOR);
            kv.finish()?;
            if !(floor > 0.0 && floor <= 1.0) {
                return Err(Error::parse(params, "floor must lie in (0, 1]"));
            }
            Ok(PolicySpec::Mirror { floor })
        }
        "table" => {
            let probs = params
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(parse_number)
                .collect::<Result<Vec<f64>>>()?;
            if probs.is_empty() {
                return Err(Error::parse(text, "table needs at least one probability"));
            }
            Ok(PolicySpec::Table(probs))
        }
        other => Err(Error::parse(other, "unknown policy kind")),
    }
}

pub fn parse_schedule(text: &str) -> Result<EpsilonSchedule> {
    let text = text.trim();
    let (kind, params) = text.split_once(':').unwrap_or((text, ""));
    let mut kv = KeyValues::parse(params)?;
    let schedule = match kind.trim() {
        "inverse" => EpsilonSchedule::Inverse,
        "exponential" => EpsilonSchedule::Exponential {
            rate: kv.required("rate")?,
        },
        "delayed" => EpsilonSchedule::ConstantThenInverse {
            value: kv.required("value")?,
            until: kv.required("until")?,
        },
        other => return Err(Error::parse(other, "unknown schedule kind")),
    };
    kv.finish()?;
    schedule.validate().map_err(|e| Error::parse(text, e.to_string()))?;
    Ok(schedule)
}

pub fn parse_init(text: &str) -> Result<InitSpec> {
    let text = text.trim();
    let (kind, params) = text.split_once(':').unwrap_or((text, ""));
    let mut kv = KeyValues::parse(params)?;
    let init = match kind.trim() {
        "zeros" => InitSpec::Zeros,
        "pessimistic" => InitSpec::Pessimistic,
        "optimistic" => InitSpec::Optimistic,
        "random" => InitSpec::Random {
            seed: kv.optional("seed")?,
        },
        other => return Err(Error::parse(other, "unknown init kind")),
    };
    kv.finish()?;
    Ok(init)
}

fn parse_number<T: std::str::FromStr>(token: &str) -> Result<T> {
    token
        .trim()
        .parse()
        .map_err(|_| Error::parse(token, "not a valid number"))
}

fn expect_empty(params: &str) -> Result<()> {
    if params.trim().is_empty() {
        Ok(())
    } else {
        Err(Error::parse(params, "takes no parameters"))
    }
}

struct KeyValues<'a> {
    entries: Vec<(&'a str, &'a str)>,
}

impl<'a> KeyValues<'a> {
    fn parse(text: &'a str) -> Result<Self> {
        let mut entries: Vec<(&str, &str)> = Vec::new();
        for token in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| Error::parse(token, "expected key=value"))?;
            let key = key.trim();
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(Error::parse(token, "duplicate key"));
            }
            entries.push((key, value.trim()));
        }
        Ok(Self { entries })
    }

    fn optional<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.iter().position(|(k, _)| *k == key) {
            Some(i) => parse_number(self.entries.remove(i).1).map(Some),
            None => Ok(None),
        }
    }

    fn required<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.optional(key)?
            .ok_or_else(|| Error::parse(key, "missing required key"))
    }

    fn finish(self) -> Result<()> {
        match self.entries.first() {
            Some((key, _)) => Err(Error::parse(*key, "unknown key")),
            None => Ok(()),
        }
    }
}
