//! Estimates of `|beta|_2` used by the stopping rule.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormProvider {
    Oracle,
    OracleNoisy,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub provider: NormProvider,
}

/// True norm scaled by `1 + b`, `b ~ U[-bias, bias]`.
pub fn oracle_norm(scenario: &Scenario, relative_bias: f64, seed: u64) -> Result<NormEstimate> {
    if !(relative_bias.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "relative bias {relative_bias} must lie in (-1, 1)"
        )));
    }
    let bias = relative_bias.abs();
    let truth = scenario.beta_norm();
    if bias == 0.0 {
        return Ok(NormEstimate {
            value: truth,
            provider: NormProvider::Oracle,
        });
    }
    let mut rng = rng::stream(seed, 0x6e6f726d);
    let b = rng.random_range(-bias..=bias);
    Ok(NormEstimate {
        value: truth * (1.0 + b),
        provider: NormProvider::OracleNoisy,
    })
}

/// Wraps a caller-supplied estimate.
pub fn external_norm(value: f64) -> Result<NormEstimate> {
    if !(value >= 0.0) || !value.is_finite() {
        return Err(Error::NegativeNorm(value));
    }
    Ok(NormEstimate {
        value,
        provider: NormProvider::External,
    })
}

/// How a run obtains its norm estimate: `oracle`, `oracle_noisy:<bias>` or
/// `external:<value>`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum NormSource {
    #[default]
    Oracle,
    OracleNoisy(f64),
    External(f64),
}

impl NormSource {
    pub fn resolve(&self, scenario: &Scenario, seed: u64) -> Result<NormEstimate> {
        match *self {
            NormSource::Oracle => oracle_norm(scenario, 0.0, seed),
            NormSource::OracleNoisy(b) => oracle_norm(scenario, b, seed),
            NormSource::External(v) => external_norm(v),
        }
    }
}

impl FromStr for NormSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number in norm_provider `{s}`")))
        };
        match s.split_once(':') {
            None if s == "oracle" => Ok(NormSource::Oracle),
            Some(("oracle_noisy", v)) => {
                let b = num(v)?;
                if !(b.abs() < 1.0) {
                    return Err(Error::Config(format!("oracle_noisy bias {b} must be < 1")));
                }
                Ok(NormSource::OracleNoisy(b))
            }
            Some(("external", v)) => {
                let v = num(v)?;
                if !(v >= 0.0) {
                    return Err(Error::NegativeNorm(v));
                }
                Ok(NormSource::External(v))
            }
            _ => Err(Error::Config(format!("unknown norm_provider `{s}`"))),
        }
    }
}

impl fmt::Display for NormSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormSource::Oracle => write!(f, "oracle"),
            NormSource::OracleNoisy(b) => write!(f, "oracle_noisy:{b}"),
            NormSource::External(v) => write!(f, "external:{v}"),
        }
    }
}

impl Serialize for NormSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NormSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
