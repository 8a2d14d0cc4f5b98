//! Flat `key = value` configuration shared by every stage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accel::{DseParams, Platform};
use crate::cosim::SimConfig;
use crate::hwmodel::CostModel;
use crate::jir::DEFAULT_HEAP_WORDS;
use crate::transform::TransformOptions;

/// The shipped defaults; `RunConfig::default()` equals this file parsed.
pub const DEFAULT_CONFIG: &str = include_str!("../config/default.cfg");

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub cost: CostModel,
    pub sim: SimConfig,
    pub transform: TransformOptions,
    pub heap_words: usize,
    pub dse: DseParams,
    pub platform: Platform,
    pub fuzz_seed: u64,
    pub fuzz_count: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            cost: CostModel::default(),
            sim: SimConfig::default(),
            transform: TransformOptions::default(),
            heap_words: DEFAULT_HEAP_WORDS,
            dse: DseParams::default(),
            platform: Platform::default(),
            fuzz_seed: 1,
            fuzz_count: 1000,
        }
    }
}

/// Splits `text` into `(line, key, value)` entries. `#` starts a comment.
pub fn parse_entries(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError {
            line: i + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(ConfigError {
                line: i + 1,
                message: "empty key or value".into(),
            });
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub(crate) fn positive_u64(key: &str, v: &str) -> Result<u64, String> {
    match v.parse::<u64>() {
        Ok(0) => Err(format!("`{key}` must be strictly positive")),
        Ok(n) => Ok(n),
        Err(_) => Err(format!("`{key}`: expected a positive integer, got `{v}`")),
    }
}

pub(crate) fn unit_fraction(key: &str, v: &str) -> Result<f64, String> {
    match v.parse::<f64>() {
        Ok(x) if x > 0.0 && x < 1.0 => Ok(x),
        _ => Err(format!(
            "`{key}`: expected a number strictly between 0 and 1, got `{v}`"
        )),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut c = RunConfig::default();
        c.apply(text)?;
        Ok(c)
    }

    /// Applies entries on top of the current values.
    pub fn apply(&mut self, text: &str) -> Result<(), ConfigError> {
        for (line, k, v) in parse_entries(text)? {
            self.set(&k, &v)
                .map_err(|message| ConfigError { line, message })?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        if self.cost.set(key, value)?
            || self.platform.set(key, value)?
            || self.dse.set(key, value)?
        {
            return Ok(());
        }
        match key {
            "bus.base" => self.sim.bus.base = positive_u64(key, value)?,
            "bus.per_beat" => self.sim.bus.per_beat = positive_u64(key, value)?,
            "syscall.roundtrip" => self.sim.channel.roundtrip = positive_u64(key, value)?,
            "sim.max_cycles" => self.sim.max_cycles = positive_u64(key, value)?,
            "sim.host_fuel" => self.sim.host_fuel = positive_u64(key, value)?,
            "heap.words" => {
                self.heap_words = usize::try_from(positive_u64(key, value)?)
                    .map_err(|_| format!("`{key}` is too large"))?
            }
            "transform.coalesce" => {
                self.transform.coalesce = match value {
                    "true" | "on" => true,
                    "false" | "off" => false,
                    _ => return Err(format!("`{key}`: expected true or false, got `{value}`")),
                }
            }
            "fuzz.seed" => {
                self.fuzz_seed = value
                    .parse()
                    .map_err(|_| format!("`{key}`: expected an integer, got `{value}`"))?
            }
            "fuzz.count" => self.fuzz_count = positive_u64(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_file_matches_defaults() {
        assert_eq!(
            RunConfig::parse(DEFAULT_CONFIG).unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn shipped_file_sets_every_cost_entry() {
        let keys: Vec<String> = parse_entries(DEFAULT_CONFIG)
            .unwrap()
            .into_iter()
            .map(|(_, k, _)| k)
            .collect();
        for k in [
            "lat.mul",
            "lat.div",
            "area.mux",
            "area.bus_port",
            "area.control",
            "bus.base",
            "syscall.roundtrip",
        ] {
            assert!(keys.iter().any(|x| x == k), "{k} missing");
        }
    }

    #[test]
    fn unknown_key_is_an_error_with_line() {
        let e = RunConfig::parse("lat.mul = 3\n\nlat.bogus = 1\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.message.contains("lat.bogus"));
    }

    #[test]
    fn zero_and_garbage_rejected() {
        assert!(RunConfig::parse("bus.base = 0").is_err());
        assert!(RunConfig::parse("bus.base = -1").is_err());
        assert!(RunConfig::parse("bus.base").is_err());
        assert!(RunConfig::parse("dse.threshold = 1.5").is_err());
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::parse("bus.base = 3 # comment\ntransform.coalesce = false").unwrap();
        assert_eq!(c.sim.bus.base, 3);
        assert!(!c.transform.coalesce);
    }
}
