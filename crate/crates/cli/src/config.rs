//! Run configuration: JSON file plus command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lionsderiv::estimator::{DifferenceMode, DEFAULT_COUNT, DEFAULT_RATIO};
use lionsderiv::measure::MAX_LEVEL;
use serde::{Deserialize, Deserializer};
use serde_json::Value;

use crate::CliError;

/// Inclusive level range written `a..b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelRange {
    pub start: u32,
    pub end: u32,
}

impl LevelRange {
    pub fn levels(&self) -> Vec<u32> {
        (self.start..=self.end).collect()
    }
}

impl fmt::Display for LevelRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

impl FromStr for LevelRange {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| format!("level range `{s}` is not of the form a..b"))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| format!("bad level `{t}` in range `{s}`"))
        };
        Ok(Self {
            start: parse(a)?,
            end: parse(b)?,
        })
    }
}

impl<'de> Deserialize<'de> for LevelRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Pair([u32; 2]),
        }
        match Repr::deserialize(d)? {
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Repr::Pair([start, end]) => Ok(Self { start, end }),
        }
    }
}

/// Every key a config file may carry. Unknown keys are rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub functional: Option<Value>,
    pub input: Option<PathBuf>,
    pub level: Option<u32>,
    pub levels: Option<LevelRange>,
    pub eps0: Option<f64>,
    pub ratio: Option<f64>,
    pub count: Option<usize>,
    pub mode: Option<DifferenceMode>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `flags` replace those in `self`.
    pub fn overridden_by(self, flags: RunConfig) -> Self {
        Self {
            command: flags.command.or(self.command),
            functional: flags.functional.or(self.functional),
            input: flags.input.or(self.input),
            level: flags.level.or(self.level),
            levels: flags.levels.or(self.levels),
            eps0: flags.eps0.or(self.eps0),
            ratio: flags.ratio.or(self.ratio),
            count: flags.count.or(self.count),
            mode: flags.mode.or(self.mode),
            tol: flags.tol.or(self.tol),
            seed: flags.seed.or(self.seed),
            out: flags.out.or(self.out),
        }
    }
}

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_LEVEL: u32 = 4;
pub const DEFAULT_ESTIMATE_LEVELS: LevelRange = LevelRange { start: 2, end: 20 };
pub const DEFAULT_STUDY_LEVELS: LevelRange = LevelRange { start: 2, end: 8 };

/// Range checks shared by all commands.
pub fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let bad = |m: String| Err(CliError::Config(m));
    if let Some(tol) = cfg.tol {
        if !(tol.is_finite() && tol > 0.0) {
            return bad(format!("tol must be a positive number, got {tol}"));
        }
    }
    if let Some(n) = cfg.level {
        if n > MAX_LEVEL {
            return bad(format!("level {n} exceeds the maximum of {MAX_LEVEL}"));
        }
    }
    if let Some(r) = cfg.levels {
        if r.start > r.end {
            return bad(format!("level range {r} is reversed"));
        }
        if r.end > MAX_LEVEL {
            return bad(format!("level range {r} exceeds the maximum of {MAX_LEVEL}"));
        }
    }
    if let Some(eps0) = cfg.eps0 {
        if !(eps0.is_finite() && eps0 > 0.0) {
            return bad(format!("eps0 must be positive, got {eps0}"));
        }
    }
    if let Some(ratio) = cfg.ratio {
        if !(ratio > 0.0 && ratio < 1.0) {
            return bad(format!("ratio must lie in (0, 1), got {ratio}"));
        }
    }
    if let Some(count) = cfg.count {
        if count < 2 {
            return bad(format!("count must be at least 2, got {count}"));
        }
    }
    if let Some(cmd) = &cfg.command {
        if !matches!(cmd.as_str(), "estimate" | "verify" | "study") {
            return bad(format!("unknown command `{cmd}`"));
        }
    }
    Ok(())
}

pub fn ratio(cfg: &RunConfig) -> f64 {
    cfg.ratio.unwrap_or(DEFAULT_RATIO)
}

pub fn count(cfg: &RunConfig) -> usize {
    cfg.count.unwrap_or(DEFAULT_COUNT)
}
