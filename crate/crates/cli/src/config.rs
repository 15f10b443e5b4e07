//! Flat key-value run configuration.
//!
//! The file format is one `key = value` per line with `#` comments; every key
//! has a built-in default (the two-regime reference setup: bull drift 0.15 at
//! rate 0.05 and volatility 0.25, bear drift 0.25 at rate 0.01 and volatility
//! 0.6, risk aversions 2 and 3, unit switching intensities, horizon 10).
//! Unknown keys are rejected so typos surface instead of silently reverting
//! to defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use regime_eq_core::{MarketParams, Preferences, Regime, RegimeChain, SimConfig};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub market: MarketParams,
    pub prefs: Preferences,
    pub chain: RegimeChain,
    pub t_horizon: f64,
    pub t_start: f64,
    pub tolerance: f64,
    pub sim: SimConfig,
    pub output_dir: Option<PathBuf>,
}

/// Raw scalar values before domain validation.
#[derive(Debug, Clone)]
struct RawConfig {
    mu: [f64; 2],
    r: [f64; 2],
    sigma: [f64; 2],
    alpha: [f64; 2],
    lambda: [f64; 2],
    t_horizon: f64,
    t_start: f64,
    tolerance: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
    t0: f64,
    x0: f64,
    i0: u8,
    output_dir: Option<PathBuf>,
}

impl Default for RawConfig {
    fn default() -> Self {
        RawConfig {
            mu: [0.15, 0.25],
            r: [0.05, 0.01],
            sigma: [0.25, 0.6],
            alpha: [2.0, 3.0],
            lambda: [1.0, 1.0],
            t_horizon: 10.0,
            t_start: 0.0,
            tolerance: 1e-10,
            n_paths: 100_000,
            dt: 1e-3,
            seed: 42,
            t0: 0.0,
            x0: 1.0,
            i0: 1,
            output_dir: None,
        }
    }
}

pub const KNOWN_KEYS: &[&str] = &[
    "mu1",
    "mu2",
    "r1",
    "r2",
    "sigma1",
    "sigma2",
    "alpha1",
    "alpha2",
    "lambda1",
    "lambda2",
    "t_horizon",
    "t_start",
    "tolerance",
    "n_paths",
    "dt",
    "seed",
    "t0",
    "x0",
    "i0",
    "output_dir",
];

fn parse_assignments(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (line_no, raw_line) in text.lines().enumerate() {
        let line = match raw_line.find('#') {
            Some(idx) => &raw_line[..idx],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::config(format!(
                "line {}: expected `key = value`, got {raw_line:?}",
                line_no + 1
            )));
        };
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::config(format!(
                "line {}: unknown key {key:?}",
                line_no + 1
            )));
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| CliError::config(format!("key {key}: cannot parse {value:?}: {e}")))
}

impl RunConfig {
    /// Built-in defaults, no file.
    pub fn default_config() -> Result<RunConfig, CliError> {
        RawConfig::default().build()
    }

    pub fn from_file(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_str_contents(&text)
    }

    pub fn from_str_contents(text: &str) -> Result<RunConfig, CliError> {
        let mut raw = RawConfig::default();
        for (key, value) in parse_assignments(text)? {
            match key.as_str() {
                "mu1" => raw.mu[0] = parse_num(&key, &value)?,
                "mu2" => raw.mu[1] = parse_num(&key, &value)?,
                "r1" => raw.r[0] = parse_num(&key, &value)?,
                "r2" => raw.r[1] = parse_num(&key, &value)?,
                "sigma1" => raw.sigma[0] = parse_num(&key, &value)?,
                "sigma2" => raw.sigma[1] = parse_num(&key, &value)?,
                "alpha1" => raw.alpha[0] = parse_num(&key, &value)?,
                "alpha2" => raw.alpha[1] = parse_num(&key, &value)?,
                "lambda1" => raw.lambda[0] = parse_num(&key, &value)?,
                "lambda2" => raw.lambda[1] = parse_num(&key, &value)?,
                "t_horizon" => raw.t_horizon = parse_num(&key, &value)?,
                "t_start" => raw.t_start = parse_num(&key, &value)?,
                "tolerance" => raw.tolerance = parse_num(&key, &value)?,
                "n_paths" => raw.n_paths = parse_num(&key, &value)?,
                "dt" => raw.dt = parse_num(&key, &value)?,
                "seed" => raw.seed = parse_num(&key, &value)?,
                "t0" => raw.t0 = parse_num(&key, &value)?,
                "x0" => raw.x0 = parse_num(&key, &value)?,
                "i0" => raw.i0 = parse_num(&key, &value)?,
                "output_dir" => raw.output_dir = Some(PathBuf::from(value)),
                _ => unreachable!("filtered by KNOWN_KEYS"),
            }
        }
        raw.build()
    }

    /// Warnings for a market that does not look like a bull/bear pair.
    pub fn coefficient_warnings(&self) -> Vec<String> {
        self.market.bull_bear_violations()
    }
}

impl RawConfig {
    fn build(self) -> Result<RunConfig, CliError> {
        let market = MarketParams::new(self.r, self.mu, self.sigma)
            .map_err(|e| CliError::config(e.to_string()))?;
        let prefs = Preferences::new(self.alpha[0], self.alpha[1])
            .map_err(|e| CliError::config(e.to_string()))?;
        let chain = RegimeChain::new(self.lambda[0], self.lambda[1])
            .map_err(|e| CliError::config(e.to_string()))?;
        let i0 = Regime::from_label(self.i0).map_err(|e| CliError::config(e.to_string()))?;
        if !(self.t_start < self.t_horizon) {
            return Err(CliError::config(format!(
                "need t_start < t_horizon, got {} and {}",
                self.t_start, self.t_horizon
            )));
        }
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(CliError::config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        let sim = SimConfig {
            n_paths: self.n_paths,
            dt: self.dt,
            seed: self.seed,
            t0: self.t0,
            x0: self.x0,
            i0,
        };
        sim.validate(self.t_horizon)
            .map_err(|e| CliError::config(e.to_string()))?;
        Ok(RunConfig {
            market,
            prefs,
            chain,
            t_horizon: self.t_horizon,
            t_start: self.t_start,
            tolerance: self.tolerance,
            sim,
            output_dir: self.output_dir,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build() {
        let cfg = RunConfig::default_config().unwrap();
        assert_eq!(cfg.t_horizon, 10.0);
        assert_eq!(cfg.sim.n_paths, 100_000);
        assert!(cfg.coefficient_warnings().is_empty());
    }

    #[test]
    fn parses_overrides_comments_and_whitespace() {
        let cfg = RunConfig::from_str_contents(
            "# comment line\n  lambda1 = 2.5   # trailing comment\n\nseed=7\ni0 = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.chain.lambda1(), 2.5);
        assert_eq!(cfg.sim.seed, 7);
        assert_eq!(cfg.sim.i0, Regime::Bear);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_str_contents("lambda3 = 1\n").is_err());
        assert!(RunConfig::from_str_contents("lambda1\n").is_err());
        assert!(RunConfig::from_str_contents("alpha1 = one\n").is_err());
        assert!(RunConfig::from_str_contents("alpha1 = 1.0\n").is_err());
        assert!(RunConfig::from_str_contents("sigma1 = -0.2\n").is_err());
        assert!(RunConfig::from_str_contents("i0 = 3\n").is_err());
        assert!(RunConfig::from_str_contents("t_start = 11\n").is_err());
    }
}
