//! `kind[:param=value,...]` strategy strings, e.g. `retrace:lambda=0.9`.

use std::fmt;
use std::str::FromStr;

use super::{PairTable, TraceStrategy};
use crate::error::{Error, Result};

impl FromStr for TraceStrategy {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        let (kind, params) = match text.split_once(':') {
            Some((kind, params)) => (kind.trim(), params),
            None => (text, ""),
        };
        let mut params = Params::parse(params)?;
        let strategy = match kind.to_ascii_lowercase().as_str() {
            "is" | "importance_sampling" => TraceStrategy::ImportanceSampling,
            "truncated_is" => TraceStrategy::TruncatedIs {
                clip: params.take("d", 1.0)?,
            },
            "tree_backup" | "tb" => TraceStrategy::TreeBackup {
                lambda: params.take("lambda", 1.0)?,
            },
            "retrace" => TraceStrategy::Retrace {
                lambda: params.take("lambda", 1.0)?,
            },
            "nonmarkov_retrace" => TraceStrategy::NonMarkovRetrace {
                lambda: params.take("lambda", 1.0)?,
            },
            "qlambda" | "qlambda_opc" => TraceStrategy::QLambda {
                lambda: params.take("lambda", 1.0)?,
            },
            "composite" => TraceStrategy::Composite {
                discount: PairTable::Constant(params.take("gamma", 1.0)?),
                lambda: PairTable::Constant(params.take("lambda", 1.0)?),
            },
            _ => return Err(Error::parse(kind, "unknown strategy kind")),
        };
        params.finish()?;
        strategy.validate().map_err(|e| Error::parse(text, e.to_string()))?;
        Ok(strategy)
    }
}

struct Params<'a> {
    entries: Vec<(&'a str, &'a str)>,
}

impl<'a> Params<'a> {
    fn parse(text: &'a str) -> Result<Self> {
        let mut entries: Vec<(&str, &str)> = Vec::new();
        for token in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| Error::parse(token, "expected param=value"))?;
            let key = key.trim();
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(Error::parse(token, "duplicate parameter"));
            }
            entries.push((key, value.trim()));
        }
        Ok(Self { entries })
    }

    fn take(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.entries.iter().position(|(k, _)| *k == key) {
            None => Ok(default),
            Some(i) => {
                let (_, value) = self.entries.remove(i);
                value
                    .parse::<f64>()
                    .map_err(|_| Error::parse(value, format!("`{key}` expects a number")))
            }
        }
    }

    fn finish(self) -> Result<()> {
        match self.entries.first() {
            None => Ok(()),
            Some((key, _)) => Err(Error::parse(*key, "unknown parameter")),
        }
    }
}

impl fmt::Display for TraceStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceStrategy::ImportanceSampling => write!(f, "is"),
            TraceStrategy::TruncatedIs { clip } => write!(f, "truncated_is:d={clip}"),
            TraceStrategy::TreeBackup { lambda }
            | TraceStrategy::Retrace { lambda }
            | TraceStrategy::NonMarkovRetrace { lambda }
            | TraceStrategy::QLambda { lambda } => write!(f, "{}:lambda={lambda}", self.kind()),
            TraceStrategy::Composite {
                discount: PairTable::Constant(g),
                lambda: PairTable::Constant(l),
            } => write!(f, "composite:lambda={l},gamma={g}"),
            TraceStrategy::Composite { .. } => write!(f, "composite:per_pair"),
        }
    }
}
