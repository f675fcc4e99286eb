//! Algorithm constants and the weights file.
//!
//! A weights file is TOML with dotted keys; every key is optional and
//! overrides the default:
//!
//! ```toml
//! feature.L = 0.13
//! feature.d = 0.31
//! feature.t_in = 0.15
//! class.upper_clothes = 8
//! k_d = 35
//! k_inc = 1.5
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mask::{ClassId, MIN_CLASS_PIXELS};
use crate::scoring::{ClassWeights, FeatureChannel, FeatureWeights};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid weights file: {0}")]
    Parse(String),
    #[error("unknown feature channel '{0}' (expected L, a, b, d, t_in, t_co)")]
    UnknownFeature(String),
    #[error("unknown class '{0}'")]
    UnknownClass(String),
    #[error("feature weights sum to {0}, expected 1")]
    FeatureSum(f64),
    #[error("{0} must be positive and finite")]
    NonPositive(&'static str),
    #[error("weight for {0} is negative or not finite")]
    BadWeight(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionConfig {
    /// Binarization threshold as a multiple of the mean bin count.
    pub k_inc: f64,
    pub min_class_pixels: usize,
    /// A class is over-highlighted when the brightest level holds more than
    /// this share of its pixels.
    pub over_highlight_fraction: f64,
    pub stretch_l: bool,
    /// Experimental, off by default.
    pub shadow_removal: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            k_inc: 1.5,
            min_class_pixels: MIN_CLASS_PIXELS,
            over_highlight_fraction: 0.01,
            stretch_l: true,
            shadow_removal: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringConfig {
    pub features: FeatureWeights,
    pub classes: ClassWeights,
    /// Lab distance (native units) at which color-distance similarity reaches 0.
    pub k_d: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            features: FeatureWeights::default(),
            classes: ClassWeights::default(),
            k_d: 35.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EngineConfig {
    pub extraction: ExtractionConfig,
    pub scoring: ScoringConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    #[serde(default)]
    feature: BTreeMap<String, f64>,
    #[serde(default)]
    class: BTreeMap<String, f64>,
    k_d: Option<f64>,
    k_inc: Option<f64>,
}

impl EngineConfig {
    /// Identifier of every constant that influences stored features or
    /// scores. Records are only comparable when their versions match.
    pub fn version(&self) -> String {
        let e = &self.extraction;
        let s = &self.scoring;
        let mut canon = format!(
            "k_inc={:?};min_class_pixels={};over_highlight={:?};stretch_l={};shadow={};k_d={:?}",
            e.k_inc, e.min_class_pixels, e.over_highlight_fraction, e.stretch_l, e.shadow_removal, s.k_d
        );
        for ch in FeatureChannel::ALL {
            canon.push_str(&format!(";feature.{}={:?}", ch.key(), s.features.get(ch)));
        }
        for c in ClassId::ALL {
            canon.push_str(&format!(";class.{}={:?}", c.name(), s.classes.get(c)));
        }
        let digest = Sha256::digest(canon.as_bytes());
        format!("parseid-1-{}", &hex::encode(digest)[..16])
    }

    /// Applies a weights file on top of the defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let file: WeightsFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut cfg = EngineConfig::default();
        let mut features = cfg.scoring.features;
        for (key, value) in &file.feature {
            let ch = FeatureChannel::from_key(key).ok_or_else(|| ConfigError::UnknownFeature(key.clone()))?;
            features.set(ch, *value);
        }
        cfg.scoring.features = features.validated()?;
        for (key, value) in &file.class {
            let class: ClassId = key.parse().map_err(|_| ConfigError::UnknownClass(key.clone()))?;
            if !value.is_finite() || *value < 0.0 {
                return Err(ConfigError::BadWeight(key.clone()));
            }
            cfg.scoring.classes.set(class, *value);
        }
        if let Some(k_d) = file.k_d {
            if !(k_d.is_finite() && k_d > 0.0) {
                return Err(ConfigError::NonPositive("k_d"));
            }
            cfg.scoring.k_d = k_d;
        }
        if let Some(k_inc) = file.k_inc {
            if !(k_inc.is_finite() && k_inc > 0.0) {
                return Err(ConfigError::NonPositive("k_inc"));
            }
            cfg.extraction.k_inc = k_inc;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }
}
