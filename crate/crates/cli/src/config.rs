//! Experiment configuration: defaults, `key = value` files and overrides.

use std::fmt;
use std::path::PathBuf;

use supg_dlr_core::oracle::InitialCondition;

/// Settings shared by every driver.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub degree: usize,
    pub rank: usize,
    /// Ranks of a rank study.
    pub ranks: Vec<usize>,
    /// Mesh exponents `i` with `h = 2^{-i}`.
    pub levels: Vec<u32>,
    pub t_final: f64,
    pub dt_coeff: f64,
    /// `None` uses `2(k+1)/3`.
    pub dt_exponent: Option<f64>,
    pub n_collocation: usize,
    pub delta_safety: f64,
    pub strict_stability: bool,
    pub output: Option<PathBuf>,
    pub ic_mode: InitialCondition,
    pub epsilon: f64,
    pub advection: f64,
    /// Replace the DLR trajectory by the truncated projection of the exact
    /// solution.
    pub inject_exact: bool,
    /// Write a gnuplot script next to the CSV.
    pub gnuplot: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            degree: 1,
            rank: 6,
            ranks: vec![1, 2, 3],
            levels: vec![3, 4, 5, 6],
            t_final: 0.5,
            dt_coeff: 5.0,
            dt_exponent: None,
            n_collocation: 15,
            delta_safety: 1.0,
            strict_stability: false,
            output: None,
            ic_mode: InitialCondition::Projection,
            epsilon: 1e-8,
            advection: 1.0,
            inject_exact: false,
            gnuplot: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| ConfigError(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => err(format!("{key}: expected a boolean, found {other:?}")),
    }
}

/// Comma-separated list of positive integers.
pub fn parse_ranks(value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(|s| parse_num::<usize>("ranks", s))
        .collect()
}

/// `i1..i2` (inclusive) or a comma-separated list.
pub fn parse_levels(value: &str) -> Result<Vec<u32>, ConfigError> {
    let value = value.trim();
    if let Some((a, b)) = value.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let a: u32 = parse_num("levels", a)?;
        let b: u32 = parse_num("levels", b)?;
        if a > b {
            return err(format!("levels: empty range {value}"));
        }
        return Ok((a..=b).collect());
    }
    value
        .split(',')
        .map(|s| parse_num::<u32>("levels", s))
        .collect()
}

pub fn parse_ic(value: &str) -> Result<InitialCondition, ConfigError> {
    match value.trim() {
        "svd" | "projection" => Ok(InitialCondition::Projection),
        "interp" | "interpolation" => Ok(InitialCondition::Interpolation),
        other => err(format!("ic: expected svd or interp, found {other:?}")),
    }
}

impl ExperimentConfig {
    /// Keys accepted in configuration files.
    pub const KEYS: &'static [&'static str] = &[
        "degree",
        "rank",
        "ranks",
        "levels",
        "tfinal",
        "dt_coeff",
        "dt_exp",
        "delta_safety",
        "nc",
        "ic",
        "strict_stability",
        "out",
        "epsilon",
        "advection",
        "inject_exact",
        "gnuplot",
    ];

    /// `p` of `Δt = C h^p`.
    pub fn dt_exponent(&self) -> f64 {
        self.dt_exponent
            .unwrap_or(2.0 * (self.degree as f64 + 1.0) / 3.0)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_");
        match key.as_str() {
            "degree" => self.degree = parse_num(&key, value)?,
            "rank" => self.rank = parse_num(&key, value)?,
            "ranks" => self.ranks = parse_ranks(value)?,
            "levels" => self.levels = parse_levels(value)?,
            "tfinal" => self.t_final = parse_num(&key, value)?,
            "dt_coeff" => self.dt_coeff = parse_num(&key, value)?,
            "dt_exp" => self.dt_exponent = Some(parse_num(&key, value)?),
            "delta_safety" => self.delta_safety = parse_num(&key, value)?,
            "nc" => self.n_collocation = parse_num(&key, value)?,
            "ic" => self.ic_mode = parse_ic(value)?,
            "strict_stability" => self.strict_stability = parse_bool(&key, value)?,
            "out" => self.output = Some(PathBuf::from(value.trim())),
            "epsilon" => self.epsilon = parse_num(&key, value)?,
            "advection" => self.advection = parse_num(&key, value)?,
            "inject_exact" => self.inject_exact = parse_bool(&key, value)?,
            "gnuplot" => self.gnuplot = parse_bool(&key, value)?,
            _ => return err(format!("unknown configuration key {key:?}")),
        }
        Ok(())
    }

    /// Applies a `key = value` file. `#` starts a comment.
    pub fn apply_file_contents(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(format!(
                    "line {}: expected key = value, found {raw:?}",
                    n + 1
                ));
            };
            self.set(key, value)
                .map_err(|e| ConfigError(format!("line {}: {}", n + 1, e.0)))?;
        }
        Ok(())
    }

    pub fn from_file_contents(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_file_contents(text)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        if !matches!(self.degree, 1 | 2) {
            issues.push(format!("degree must be 1 or 2, found {}", self.degree));
        }
        if self.n_collocation == 0 {
            issues.push("nc must be positive".to_string());
        }
        for &r in std::iter::once(&self.rank).chain(&self.ranks) {
            if r == 0 || r > self.n_collocation {
                issues.push(format!("rank {r} outside 1..={}", self.n_collocation));
            }
        }
        if self.levels.is_empty() {
            issues.push("no mesh levels".to_string());
        }
        if self.levels.iter().any(|&i| i == 0 || i > 20) {
            issues.push("levels must lie in 1..=20".to_string());
        }
        for (name, v) in [
            ("tfinal", self.t_final),
            ("dt_coeff", self.dt_coeff),
            ("dt_exp", self.dt_exponent()),
            ("epsilon", self.epsilon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                issues.push(format!("{name} must be positive, found {v}"));
            }
        }
        if !(self.delta_safety > 0.0 && self.delta_safety <= 1.0) {
            issues.push(format!(
                "delta_safety must lie in (0, 1], found {}",
                self.delta_safety
            ));
        }
        if !self.advection.is_finite() || self.advection == 0.0 {
            issues.push("advection must be finite and nonzero".to_string());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            err(issues.join("; "))
        }
    }
}
