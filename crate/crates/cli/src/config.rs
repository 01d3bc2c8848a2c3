//! `key = value` configuration file.
//!
//! One committed file reproduces a run: loss weights, filter covariances,
//! association window, feature stride, element precision, and seed. Unknown
//! keys are rejected; every value is validated against the owning module's
//! invariants before use. Command-line flags override file values.

use std::path::Path;

use specfuse_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Runtime configuration with defaults suitable for the demos.
#[derive(Debug, Clone)]
pub struct Config {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
    /// Visual measurement variance per axis (m^2).
    pub q_visual: f64,
    /// GNSS measurement variance per axis (m^2).
    pub q_gnss: f64,
    /// Process noise variance per axis (m^2).
    pub r: f64,
    /// Timestamp association window (s).
    pub max_dt: f64,
    pub stride: usize,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            alpha: 1.0,
            beta: 1.0,
            delta: 1.0,
            gamma: 0.9,
            q_visual: 0.01,
            q_gnss: 0.0004,
            r: 1e-4,
            max_dt: 0.05,
            stride: 8,
            precision: Precision::F64,
            seed: 0,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, path: &str) -> Result<Config> {
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.into(),
                line: lineno + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let parse_f64 = || -> Result<f64> {
                value
                    .parse::<f64>()
                    .map_err(|_| err(format!("`{key}` is not a number: {value}")))
            };
            match key {
                "alpha" => cfg.alpha = parse_f64()?,
                "beta" => cfg.beta = parse_f64()?,
                "delta" => cfg.delta = parse_f64()?,
                "gamma" => cfg.gamma = parse_f64()?,
                "q_visual" => cfg.q_visual = parse_f64()?,
                "q_gnss" => cfg.q_gnss = parse_f64()?,
                "r" => cfg.r = parse_f64()?,
                "max_dt" => cfg.max_dt = parse_f64()?,
                "stride" => {
                    cfg.stride = value
                        .parse()
                        .map_err(|_| err(format!("`stride` is not an integer: {value}")))?
                }
                "precision" => {
                    cfg.precision = match value {
                        "f32" | "32" => Precision::F32,
                        "f64" | "64" => Precision::F64,
                        other => return Err(err(format!("unknown precision `{other}`"))),
                    }
                }
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| err(format!("`seed` is not an integer: {value}")))?
                }
                other => return Err(err(format!("unknown config key `{other}`"))),
            }
        }
        cfg.validate(path)?;
        Ok(cfg)
    }

    fn validate(&self, path: &str) -> Result<()> {
        let bad = |msg: String| Error::Parse {
            path: path.into(),
            line: 0,
            msg,
        };
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("delta", self.delta)] {
            if v.is_nan() || v < 0.0 {
                return Err(bad(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(bad(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.q_visual <= 0.0 || self.q_gnss <= 0.0 {
            return Err(bad("q_visual and q_gnss must be positive".into()));
        }
        if self.r < 0.0 {
            return Err(bad("r must be >= 0".into()));
        }
        if self.max_dt <= 0.0 {
            return Err(bad("max_dt must be positive".into()));
        }
        if self.stride == 0 {
            return Err(bad("stride must be >= 1".into()));
        }
        Ok(())
    }
}
