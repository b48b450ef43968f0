//! Flat `key = value` configuration files for the tracking engine.
//!
//! Lines are `key = value`, `#` starts a comment, blank lines are ignored.
//! Unknown or duplicate keys are errors (silent typos in a tracking config
//! are expensive to debug downstream). Every key can also be overridden
//! through the environment as `GMOT_<KEY>` in upper case, which wins over
//! the file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::association::AssocConfig;
use crate::model::SequenceMeta;
use crate::stmp::CascadeConfig;
use crate::vackf::NoiseConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("{key}: {msg}")]
    BadValue { key: String, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

/// Splits a config text into `(line number, key, value)` triples. Shared by
/// the engine and scene configs.
pub fn parse_kv(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Parse {
                line: idx + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Parse {
                line: idx + 1,
                msg: "key and value must be non-empty".into(),
            });
        }
        out.push((idx + 1, key.to_string(), value.to_string()));
    }
    Ok(out)
}

pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse::<T>().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        msg: format!("cannot parse `{value}` as {}", std::any::type_name::<T>()),
    })
}

fn parse_usize3(key: &str, value: &str) -> Result<[usize; 3], ConfigError> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| parse_value::<usize>(key, p.trim()))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        msg: format!("expected exactly 3 comma-separated values, got `{value}`"),
    })
}

/// Everything the tracker needs apart from the detections themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub assoc: AssocConfig,
    pub noise: NoiseConfig,
    pub cascade: CascadeConfig,
    pub image_width: u32,
    pub image_height: u32,
    pub frame_rate: f64,
    /// Trained predictor weights; without it, lone occluded tracks coast.
    pub stmp_checkpoint: Option<PathBuf>,
}

const ENGINE_KEYS: &[&str] = &[
    "tau_high",
    "tau_low",
    "iou_gate_first",
    "iou_gate_second",
    "track_buffer",
    "min_hits",
    "gmcs_sim_threshold",
    "std_weight_position",
    "std_weight_velocity",
    "std_weight_accel",
    "accel_threshold",
    "accel_decay_rate",
    "image_width",
    "image_height",
    "frame_rate",
    "stmp_hidden",
    "stmp_steps",
    "stmp_fc_hidden",
    "stmp_checkpoint",
];

impl EngineConfig {
    fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "tau_high" => self.assoc.tau_high = parse_value(key, value)?,
            "tau_low" => self.assoc.tau_low = parse_value(key, value)?,
            "iou_gate_first" => self.assoc.iou_gate_first = parse_value(key, value)?,
            "iou_gate_second" => self.assoc.iou_gate_second = parse_value(key, value)?,
            "track_buffer" => self.assoc.track_buffer = parse_value(key, value)?,
            "min_hits" => self.assoc.min_hits = parse_value(key, value)?,
            "gmcs_sim_threshold" => self.assoc.gmcs_sim_threshold = parse_value(key, value)?,
            "std_weight_position" => self.noise.std_weight_position = parse_value(key, value)?,
            "std_weight_velocity" => self.noise.std_weight_velocity = parse_value(key, value)?,
            "std_weight_accel" => self.noise.std_weight_accel = parse_value(key, value)?,
            "accel_threshold" => self.noise.accel_threshold = parse_value(key, value)?,
            "accel_decay_rate" => self.noise.accel_decay_rate = parse_value(key, value)?,
            "image_width" => self.image_width = parse_value(key, value)?,
            "image_height" => self.image_height = parse_value(key, value)?,
            "frame_rate" => self.frame_rate = parse_value(key, value)?,
            "stmp_hidden" => self.cascade.hidden = parse_usize3(key, value)?,
            "stmp_steps" => self.cascade.steps = parse_usize3(key, value)?,
            "stmp_fc_hidden" => self.cascade.fc_hidden = parse_value(key, value)?,
            "stmp_checkpoint" => self.stmp_checkpoint = Some(PathBuf::from(value)),
            _ => unreachable!("caller checks key membership"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.assoc.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.cascade.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let n = &self.noise;
        for (name, v) in [
            ("std_weight_position", n.std_weight_position),
            ("std_weight_velocity", n.std_weight_velocity),
            ("std_weight_accel", n.std_weight_accel),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in
            [("accel_threshold", n.accel_threshold), ("accel_decay_rate", n.accel_decay_rate)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(ConfigError::Invalid("image dimensions must be positive".into()));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "frame_rate must be positive, got {}",
                self.frame_rate
            )));
        }
        Ok(())
    }

    /// Parses a config text on top of the defaults, then applies `GMOT_*`
    /// overrides from `getenv`, then validates.
    pub fn parse_with_env(
        text: &str,
        getenv: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (line, key, value) in parse_kv(text)? {
            let Some(known) = ENGINE_KEYS.iter().find(|k| **k == key) else {
                return Err(ConfigError::UnknownKey { line, key });
            };
            if seen.contains(known) {
                return Err(ConfigError::DuplicateKey { line, key });
            }
            seen.push(known);
            cfg.apply(&key, &value)?;
        }
        for key in ENGINE_KEYS {
            let var = format!("GMOT_{}", key.to_uppercase());
            if let Some(value) = getenv(&var) {
                cfg.apply(key, value.trim()).map_err(|e| match e {
                    ConfigError::BadValue { key, msg } => ConfigError::BadValue {
                        key: format!("{var} (overriding {key})"),
                        msg,
                    },
                    other => other,
                })?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads from a file (or pure defaults when `path` is `None`), with
    /// process-environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| ConfigError::Io(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::parse_with_env(&text, |k| std::env::var(k).ok())
    }

    pub fn sequence_meta(&self, frame_count: u32) -> SequenceMeta {
        SequenceMeta {
            image_width: self.image_width,
            image_height: self.image_height,
            frame_count,
            frame_rate: self.frame_rate,
        }
    }

    /// Canonical text form: parsing it back yields an equal config. Written
    /// next to tracking results so every run records its exact settings.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let a = &self.assoc;
        let n = &self.noise;
        let c = &self.cascade;
        writeln!(s, "tau_high = {}", a.tau_high).unwrap();
        writeln!(s, "tau_low = {}", a.tau_low).unwrap();
        writeln!(s, "iou_gate_first = {}", a.iou_gate_first).unwrap();
        writeln!(s, "iou_gate_second = {}", a.iou_gate_second).unwrap();
        writeln!(s, "track_buffer = {}", a.track_buffer).unwrap();
        writeln!(s, "min_hits = {}", a.min_hits).unwrap();
        writeln!(s, "gmcs_sim_threshold = {}", a.gmcs_sim_threshold).unwrap();
        writeln!(s, "std_weight_position = {}", n.std_weight_position).unwrap();
        writeln!(s, "std_weight_velocity = {}", n.std_weight_velocity).unwrap();
        writeln!(s, "std_weight_accel = {}", n.std_weight_accel).unwrap();
        writeln!(s, "accel_threshold = {}", n.accel_threshold).unwrap();
        writeln!(s, "accel_decay_rate = {}", n.accel_decay_rate).unwrap();
        writeln!(s, "image_width = {}", self.image_width).unwrap();
        writeln!(s, "image_height = {}", self.image_height).unwrap();
        writeln!(s, "frame_rate = {}", self.frame_rate).unwrap();
        writeln!(s, "stmp_hidden = {},{},{}", c.hidden[0], c.hidden[1], c.hidden[2]).unwrap();
        writeln!(s, "stmp_steps = {},{},{}", c.steps[0], c.steps[1], c.steps[2]).unwrap();
        writeln!(s, "stmp_fc_hidden = {}", c.fc_hidden).unwrap();
        if let Some(p) = &self.stmp_checkpoint {
            writeln!(s, "stmp_checkpoint = {}", p.display()).unwrap();
        }
        s
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            assoc: AssocConfig::default(),
            noise: NoiseConfig::default(),
            cascade: CascadeConfig::default(),
            image_width: 1000,
            image_height: 1000,
            frame_rate: 30.0,
            stmp_checkpoint: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn defaults_round_trip_through_render() {
        let cfg = EngineConfig::default();
        let back = EngineConfig::parse_with_env(&cfg.render(), no_env).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn defaults_carry_standard_values() {
        let cfg = EngineConfig::parse_with_env("", no_env).unwrap();
        assert_eq!(cfg.assoc.tau_high, 0.6);
        assert_eq!(cfg.assoc.tau_low, 0.1);
        assert_eq!(cfg.assoc.iou_gate_first, 0.2);
        assert_eq!(cfg.assoc.iou_gate_second, 0.5);
        assert_eq!(cfg.assoc.track_buffer, 30);
        assert_eq!(cfg.assoc.min_hits, 3);
        assert_eq!(cfg.assoc.gmcs_sim_threshold, 0.5);
        assert_eq!(cfg.cascade.hidden, [64, 32, 16]);
        assert_eq!(cfg.cascade.steps, [8, 4, 2]);
        assert_eq!(cfg.cascade.fc_hidden, 32);
    }

    #[test]
    fn parses_keys_comments_and_whitespace() {
        let text = "\n# association\n  tau_high   =  0.7\nstmp_hidden = 16, 8, 4\n\
                    stmp_checkpoint = models/net.stmp\n";
        let cfg = EngineConfig::parse_with_env(text, no_env).unwrap();
        assert_eq!(cfg.assoc.tau_high, 0.7);
        assert_eq!(cfg.cascade.hidden, [16, 8, 4]);
        assert_eq!(cfg.stmp_checkpoint, Some(PathBuf::from("models/net.stmp")));
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed_keys() {
        assert_eq!(
            EngineConfig::parse_with_env("tau_hgih = 0.7", no_env).unwrap_err(),
            ConfigError::UnknownKey { line: 1, key: "tau_hgih".into() }
        );
        assert_eq!(
            EngineConfig::parse_with_env("tau_high = 0.7\ntau_high = 0.8", no_env).unwrap_err(),
            ConfigError::DuplicateKey { line: 2, key: "tau_high".into() }
        );
        assert!(matches!(
            EngineConfig::parse_with_env("tau_high 0.7", no_env).unwrap_err(),
            ConfigError::Parse { line: 1, .. }
        ));
        assert!(matches!(
            EngineConfig::parse_with_env("tau_high = x", no_env).unwrap_err(),
            ConfigError::BadValue { .. }
        ));
        assert!(matches!(
            EngineConfig::parse_with_env("stmp_hidden = 16,8", no_env).unwrap_err(),
            ConfigError::BadValue { .. }
        ));
    }

    #[test]
    fn env_overrides_file_values() {
        let env = |k: &str| match k {
            "GMOT_TAU_HIGH" => Some("0.75".to_string()),
            "GMOT_MIN_HITS" => Some("2".to_string()),
            _ => None,
        };
        let cfg = EngineConfig::parse_with_env("tau_high = 0.65", env).unwrap();
        assert_eq!(cfg.assoc.tau_high, 0.75, "environment wins over the file");
        assert_eq!(cfg.assoc.min_hits, 2, "environment also overrides defaults");
    }

    #[test]
    fn validation_rejects_inconsistent_results() {
        // Fine individually, invalid together.
        let err = EngineConfig::parse_with_env("tau_low = 0.9", no_env).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err:?}");
        let err = EngineConfig::parse_with_env("std_weight_accel = 0", no_env).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err:?}");
        let err = EngineConfig::parse_with_env("stmp_steps = 8,8,2", no_env).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err:?}");
    }
}
