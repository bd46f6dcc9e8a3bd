use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line_no}: {reason}")]
    BadLine { line_no: usize, reason: String },
    #[error("config line {line_no}: unknown key {key:?}")]
    UnknownKey { line_no: usize, key: String },
    #[error("weight {name} must be finite and non-negative, got {value}")]
    NegativeWeight { name: &'static str, value: f64 },
}

/// Scoring weights.
///
/// A file's reference score is
/// `open_bonus * net_open + w_open * n_open + w_read * n_read + w_close * n_close`
/// where `net_open = n_open - n_close`, clamped at zero when `clamp_net_open`
/// is set. Its process score is `w_elapsed * elapsed_s + w_cpu * cpu_s`, and the
/// two combine as `w_f * s_fs + w_r * s_ps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreConfig {
    pub open_bonus: f64,
    pub w_open: f64,
    pub w_read: f64,
    /// Not part of the published reference formula; kept at 0 by default.
    pub w_close: f64,
    pub w_elapsed: f64,
    pub w_cpu: f64,
    pub w_f: f64,
    pub w_r: f64,
    pub clamp_net_open: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            open_bonus: 100.0,
            w_open: 1.0,
            w_read: 5.0,
            w_close: 0.0,
            w_elapsed: 1.0,
            w_cpu: 5.0,
            w_f: 1.0,
            w_r: 1.0,
            clamp_net_open: true,
        }
    }
}

const KEYS: [&str; 9] =
    ["open_bonus", "w_open", "w_read", "w_close", "w_elapsed", "w_cpu", "w_f", "w_r", "clamp_net_open"];

impl ScoreConfig {
    fn weights(&self) -> [(&'static str, f64); 8] {
        [
            ("open_bonus", self.open_bonus),
            ("w_open", self.w_open),
            ("w_read", self.w_read),
            ("w_close", self.w_close),
            ("w_elapsed", self.w_elapsed),
            ("w_cpu", self.w_cpu),
            ("w_f", self.w_f),
            ("w_r", self.w_r),
        ]
    }

    fn weight_mut(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "open_bonus" => &mut self.open_bonus,
            "w_open" => &mut self.w_open,
            "w_read" => &mut self.w_read,
            "w_close" => &mut self.w_close,
            "w_elapsed" => &mut self.w_elapsed,
            "w_cpu" => &mut self.w_cpu,
            "w_f" => &mut self.w_f,
            "w_r" => &mut self.w_r,
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in self.weights() {
            if !value.is_finite() || value < 0.0 {
                return Err(ConfigError::NegativeWeight { name, value });
            }
        }
        Ok(())
    }

    /// Multiplies every weight (combiner weights included) by `factor`.
    pub fn scaled(&self, factor: f64) -> ScoreConfig {
        let mut out = *self;
        for key in &KEYS[..8] {
            *out.weight_mut(key).unwrap() *= factor;
        }
        out
    }

    /// Parses `key = value` lines on top of the defaults. Blank lines and `#`
    /// comments are ignored; unknown keys are rejected.
    pub fn from_kv_str(text: &str) -> Result<ScoreConfig, ConfigError> {
        let mut cfg = ScoreConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::BadLine { line_no, reason: format!("expected key=value, got {line:?}") })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "clamp_net_open" {
                cfg.clamp_net_open = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => {
                        return Err(ConfigError::BadLine {
                            line_no,
                            reason: format!("clamp_net_open must be true or false, got {value:?}"),
                        })
                    }
                };
                continue;
            }
            let slot = cfg.weight_mut(key).ok_or_else(|| ConfigError::UnknownKey { line_no, key: key.to_string() })?;
            *slot = value
                .parse()
                .map_err(|_| ConfigError::BadLine { line_no, reason: format!("{key}: {value:?} is not a number") })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ScoreConfig, ConfigError> {
        let text =
            fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        ScoreConfig::from_kv_str(&text)
    }
}

impl fmt::Display for ScoreConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, value) in self.weights() {
            writeln!(f, "{name} = {value}")?;
        }
        writeln!(f, "clamp_net_open = {}", self.clamp_net_open)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = ScoreConfig::default();
        assert_eq!((cfg.open_bonus, cfg.w_open, cfg.w_read, cfg.w_close), (100.0, 1.0, 5.0, 0.0));
        assert_eq!((cfg.w_elapsed, cfg.w_cpu, cfg.w_f, cfg.w_r), (1.0, 5.0, 1.0, 1.0));
        assert!(cfg.clamp_net_open);
        assert!(cfg.w_cpu > cfg.w_elapsed);
    }

    #[test]
    fn parse_overrides() {
        let cfg = ScoreConfig::from_kv_str("# weights\nw_read = 2.5\n\nclamp_net_open=false  # raw\nw_f=0\n").unwrap();
        assert_eq!(cfg.w_read, 2.5);
        assert_eq!(cfg.w_f, 0.0);
        assert!(!cfg.clamp_net_open);
        assert_eq!(cfg.open_bonus, 100.0);
    }

    #[test]
    fn rejects_typos_and_bad_values() {
        assert!(matches!(ScoreConfig::from_kv_str("w_reed = 1\n"), Err(ConfigError::UnknownKey { line_no: 1, .. })));
        assert!(matches!(ScoreConfig::from_kv_str("w_read\n"), Err(ConfigError::BadLine { .. })));
        assert!(matches!(ScoreConfig::from_kv_str("w_read = x\n"), Err(ConfigError::BadLine { .. })));
        assert!(matches!(ScoreConfig::from_kv_str("clamp_net_open = maybe\n"), Err(ConfigError::BadLine { .. })));
        assert!(matches!(
            ScoreConfig::from_kv_str("w_cpu = -1\n"),
            Err(ConfigError::NegativeWeight { name: "w_cpu", .. })
        ));
        assert!(matches!(ScoreConfig::from_kv_str("w_cpu = NaN\n"), Err(ConfigError::NegativeWeight { .. })));
    }

    #[test]
    fn display_round_trips() {
        let cfg = ScoreConfig { w_close: 0.25, clamp_net_open: false, ..ScoreConfig::default() }.scaled(3.0);
        assert_eq!(ScoreConfig::from_kv_str(&cfg.to_string()).unwrap(), cfg);
    }
}
