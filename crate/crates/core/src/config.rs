//! Run configuration files.
//!
//! Flat UTF-8 `key = value` lines in any order. `#` starts a comment, blank
//! lines are ignored and every key may appear once.
//!
//! ```text
//! # grid unicast
//! lambda = 0.1
//! rows = 40
//! cols = 1000000
//! w0 = 1440
//! target = 999999, 0
//! ```

use std::collections::BTreeMap;

use thiserror::Error;

use crate::engine::{RandomConfig, RunConfig, VerifyMode};
use crate::fieldmap::{RenderMode, Viewport};
use crate::phasor::{ChannelParams, Position};
use crate::placement::{make_grid, make_random, PlacementError};
use crate::schedule::{min_w0, DelayPolicy, RectSpec, Variant};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {key}: {msg}")]
    Value { line: usize, key: String, msg: String },
    #[error("missing required key {0}")]
    Missing(&'static str),
    #[error(transparent)]
    Placement(#[from] PlacementError),
}

const KEYS: &[&str] = &[
    "placement",
    "rows",
    "cols",
    "n",
    "seed",
    "k",
    "lambda",
    "tau",
    "grid_spacing_m",
    "light_speed",
    "variant",
    "w0",
    "source",
    "target",
    "t0",
    "verify",
    "samples",
    "verify_seed",
    "strict",
    "senders",
    "receivers",
    "viewport",
    "resolution",
    "mode",
];

/// Parsed key/value pairs with their line numbers.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, String)>,
}

/// What a configuration describes.
#[derive(Debug, Clone)]
pub enum RunTarget {
    Grid(RunConfig),
    Random(RandomConfig),
}

/// An explicit sender rectangle to rasterise, phase-aligned to the
/// canonical reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSetup {
    pub senders: RectSpec,
    pub receivers: Option<RectSpec>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, msg: format!("expected key = value, got {body:?}") })?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(ConfigError::Syntax { line, msg: format!("unknown key {key:?}") });
            }
            if let Some((first, _)) = entries.insert(key.to_string(), (line, value.trim().to_string())) {
                return Err(ConfigError::Syntax { line, msg: format!("{key} already set on line {first}") });
            }
        }
        Ok(ConfigFile { entries })
    }

    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.entries.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn bad(&self, key: &str, msg: impl Into<String>) -> ConfigError {
        let line = self.entries.get(key).map_or(0, |e| e.0);
        ConfigError::Value { line, key: key.to_string(), msg: msg.into() }
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((_, v)) => v.parse().map(Some).map_err(|_| self.bad(key, format!("cannot parse {v:?}"))),
        }
    }

    fn real(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get::<f64>(key)? {
            Some(x) if !x.is_finite() => Err(self.bad(key, "must be finite")),
            x => Ok(x),
        }
    }

    fn reals<const N: usize>(&self, key: &str) -> Result<Option<[f64; N]>, ConfigError> {
        let Some((_, v)) = self.raw(key) else { return Ok(None) };
        let parts: Vec<f64> = v
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| self.bad(key, format!("cannot parse {v:?} as numbers")))?;
        let arr: [f64; N] =
            parts.try_into().map_err(|_| self.bad(key, format!("expected {N} comma-separated numbers")))?;
        if arr.iter().any(|x| !x.is_finite()) {
            return Err(self.bad(key, "must be finite"));
        }
        Ok(Some(arr))
    }

    fn position(&self, key: &str) -> Result<Option<Position>, ConfigError> {
        Ok(self.reals::<2>(key)?.map(|[x, y]| Position::new(x, y)))
    }

    fn rect(&self, key: &str) -> Result<Option<RectSpec>, ConfigError> {
        let Some([x_lo, x_hi, y_lo, y_hi]) = self.reals::<4>(key)? else { return Ok(None) };
        if x_hi < x_lo || y_hi < y_lo {
            return Err(self.bad(key, "expected x_lo, x_hi, y_lo, y_hi with lo <= hi"));
        }
        Ok(Some(RectSpec { round: 0, x_lo, x_hi, y_lo, y_hi, policy: DelayPolicy::PhaseCorrected }))
    }

    fn params(&self) -> Result<ChannelParams, ConfigError> {
        let lambda = self.real("lambda")?.ok_or(ConfigError::Missing("lambda"))?;
        let mut p = ChannelParams::grid(lambda);
        if let Some(tau) = self.real("tau")? {
            p.tau = tau;
        }
        if let Some(c) = self.real("light_speed")? {
            p.light_speed = c;
        }
        if let Some(s) = self.real("grid_spacing_m")? {
            p.grid_spacing_m = s;
        }
        Ok(p.with_lambda(lambda))
    }

    pub fn strict(&self) -> Result<bool, ConfigError> {
        Ok(self.get::<bool>("strict")?.unwrap_or(false))
    }

    pub fn resolution(&self) -> Result<f64, ConfigError> {
        Ok(self.real("resolution")?.unwrap_or(1.0))
    }

    pub fn viewport(&self) -> Result<Option<Viewport>, ConfigError> {
        Ok(self.reals::<4>("viewport")?.map(|[x_lo, x_hi, y_lo, y_hi]| Viewport { x_lo, x_hi, y_lo, y_hi }))
    }

    pub fn mode(&self) -> Result<Option<RenderMode>, ConfigError> {
        match self.raw("mode") {
            None => Ok(None),
            Some((_, "snr")) => Ok(Some(RenderMode::Snr)),
            Some((_, "phase")) => Ok(Some(RenderMode::PhaseError)),
            Some((_, v)) => Err(self.bad("mode", format!("expected snr or phase, got {v:?}"))),
        }
    }

    /// The explicit sender rectangle, when the file names one.
    pub fn field_setup(&self) -> Result<Option<FieldSetup>, ConfigError> {
        let receivers = self.rect("receivers")?;
        Ok(self.rect("senders")?.map(|senders| FieldSetup { senders, receivers }))
    }

    pub fn channel(&self) -> Result<ChannelParams, ConfigError> {
        self.params()
    }

    pub fn run_target(&self) -> Result<RunTarget, ConfigError> {
        let params = self.params()?;
        let t0 = self.real("t0")?.unwrap_or(1e-2);
        let strict = self.strict()?;
        match self.raw("placement").map(|(_, v)| v).unwrap_or("grid") {
            "grid" => {
                let rows = self.get::<u64>("rows")?.ok_or(ConfigError::Missing("rows"))?;
                let cols = self.get::<u64>("cols")?.ok_or(ConfigError::Missing("cols"))?;
                let variant = match self.raw("variant").map(|(_, v)| v).unwrap_or("u1") {
                    "u1" => Variant::UnicastI,
                    "u2" => Variant::UnicastII,
                    v => return Err(self.bad("variant", format!("expected u1 or u2, got {v:?}"))),
                };
                let w0 = match self.real("w0")? {
                    Some(w) => w,
                    None => min_w0(variant, params.lambda).ceil(),
                };
                let verify_mode = match self.raw("verify").map(|(_, v)| v).unwrap_or("sampled") {
                    "all" => VerifyMode::AllNodes,
                    "sampled" => VerifyMode::Sampled {
                        count: self.get::<usize>("samples")?.unwrap_or(64),
                        seed: self.get::<u64>("verify_seed")?.unwrap_or(1),
                    },
                    v => return Err(self.bad("verify", format!("expected all or sampled, got {v:?}"))),
                };
                Ok(RunTarget::Grid(RunConfig {
                    nodes: make_grid(rows, cols)?,
                    params,
                    variant,
                    w0,
                    source: self.position("source")?.unwrap_or(Position::new(0.0, 0.0)),
                    target: self.position("target")?.ok_or(ConfigError::Missing("target"))?,
                    t0_processing_s: t0,
                    verify_mode,
                    strict,
                }))
            }
            "random" => {
                let n = self.get::<usize>("n")?.ok_or(ConfigError::Missing("n"))?;
                let seed = self.get::<u64>("seed")?.unwrap_or(1);
                let k = self.real("k")?.ok_or(ConfigError::Missing("k"))?;
                let mut c = RandomConfig::across(make_random(n, seed, k)?, params, t0);
                c.strict = strict;
                if let Some(s) = self.position("source")? {
                    c.source = s;
                }
                if let Some(t) = self.position("target")? {
                    c.target = t;
                }
                Ok(RunTarget::Random(c))
            }
            v => Err(self.bad("placement", format!("expected grid or random, got {v:?}"))),
        }
    }
}
