//! Flat `key = value` configuration.
//!
//! ```text
//! # conditional Poisson at k = 24
//! p = 0.6
//! k = 20,24
//! c = 0
//! lambda = 1
//! seeds = 10        # seeds 1..=10; "3,7,9" or "5..8" also accepted
//! out = report.csv
//! ```
//!
//! Blank lines and `#` comments are ignored. Keys are the long flag names
//! with `-` or `_`. Unknown or repeated keys are errors.

use std::fmt;
use std::path::{Path, PathBuf};

use bernpoisson::counting::SimMode;
use bernpoisson::exact::BoundMode;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

/// Every setting a run can take; `None` means "not given here".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub experiment: Option<String>,
    pub p: Option<f64>,
    pub k: Option<Vec<u32>>,
    pub a: Option<f64>,
    pub delta: Option<f64>,
    pub c: Option<f64>,
    pub lambda: Option<f64>,
    pub n: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub trials: Option<u64>,
    pub n_max: Option<usize>,
    pub threads: Option<usize>,
    pub max_windows: Option<u64>,
    pub threshold: Option<f64>,
    pub majority: Option<f64>,
    pub mode: Option<BoundMode>,
    pub sim_mode: Option<SimMode>,
    pub mc_sequences: Option<u32>,
    pub out: Option<Vec<PathBuf>>,
}

impl Settings {
    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: Settings) -> Settings {
        macro_rules! pick {
            ($($f:ident),*) => { Settings { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            experiment, p, k, a, delta, c, lambda, n, seeds, trials, n_max, threads, max_windows,
            threshold, majority, mode, sim_mode, mc_sequences, out
        )
    }

    /// Set `key` from its textual value. `origin` names the source in errors.
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<()> {
        let bad = |e: String| ConfigError(format!("{origin}: invalid value for `{key}`: {e}"));
        let v = value.trim();
        macro_rules! put {
            ($f:ident, $parse:expr) => {{
                if self.$f.is_some() {
                    return Err(ConfigError(format!("{origin}: `{key}` given twice")));
                }
                self.$f = Some($parse(v).map_err(bad)?);
            }};
        }
        match key.replace('-', "_").as_str() {
            "experiment" => put!(experiment, |s: &str| Ok::<_, String>(s.to_string())),
            "p" => put!(p, parse_f64),
            "k" => put!(k, parse_k_list),
            "a" => put!(a, parse_f64),
            "delta" => put!(delta, parse_f64),
            "c" => put!(c, parse_f64),
            "lambda" => put!(lambda, parse_f64),
            "n" => put!(n, parse_u64),
            "seeds" => put!(seeds, parse_seeds),
            "trials" => put!(trials, parse_u64),
            "n_max" => put!(n_max, |s| parse_u64(s).map(|v| v as usize)),
            "threads" => put!(threads, |s| parse_u64(s).map(|v| v as usize)),
            "max_windows" => put!(max_windows, parse_u64),
            "threshold" => put!(threshold, parse_f64),
            "majority" => put!(majority, parse_f64),
            "mode" => put!(mode, parse_bound_mode),
            "sim_mode" => put!(sim_mode, parse_sim_mode),
            "mc_sequences" => put!(mc_sequences, |s| parse_u64(s).and_then(|v| {
                u32::try_from(v).map_err(|_| format!("{v} is too large"))
            })),
            "out" => put!(out, |s: &str| Ok::<_, String>(
                s.split(',').map(|p| PathBuf::from(p.trim())).collect()
            )),
            _ => return Err(ConfigError(format!("{origin}: key `{key}` is not recognized"))),
        }
        Ok(())
    }
}

pub fn parse_config(text: &str, source: &str) -> Result<Settings> {
    let mut s = Settings::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let origin = format!("{source}:{}", i + 1);
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("{origin}: expected `key = value`, got `{line}`")))?;
        s.set(key.trim(), value, &origin)?;
    }
    Ok(s)
}

pub fn read_config(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, &path.display().to_string())
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>().map_err(|e| format!("`{s}`: {e}"))
}

fn parse_u64(s: &str) -> std::result::Result<u64, String> {
    s.replace('_', "").parse::<u64>().map_err(|e| format!("`{s}`: {e}"))
}

pub fn parse_k_list(s: &str) -> std::result::Result<Vec<u32>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<u32>().map_err(|e| format!("`{t}`: {e}")))
        .collect()
}

/// `N` means seeds `1..=N`; `a..b` is inclusive; anything with a comma is an
/// explicit list.
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    let s = s.trim();
    if s.contains(',') {
        return s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| parse_u64(t.trim()))
            .collect();
    }
    if let Some((lo, hi)) = s.split_once("..") {
        let (lo, hi) = (parse_u64(lo)?, parse_u64(hi)?);
        if lo > hi {
            return Err(format!("empty seed range `{s}`"));
        }
        return Ok((lo..=hi).collect());
    }
    Ok((1..=parse_u64(s)?).collect())
}

fn parse_bound_mode(s: &str) -> std::result::Result<BoundMode, String> {
    match s {
        "brute-force" | "brute_force" => Ok(BoundMode::BruteForce),
        "analytic-bound" | "analytic_bound" => Ok(BoundMode::AnalyticBound),
        _ => Err(format!("`{s}` is not one of brute-force, analytic-bound")),
    }
}

fn parse_sim_mode(s: &str) -> std::result::Result<SimMode, String> {
    match s {
        "fast" => Ok(SimMode::Fast),
        "honest" => Ok(SimMode::Honest),
        _ => Err(format!("`{s}` is not one of fast, honest")),
    }
}
