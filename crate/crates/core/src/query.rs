//! Image-free queries built from per-class color and texture descriptions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::color::{BinarizedHistogram, Channel, ColorFeatures, LabMean, BINS};
use crate::color::rgb_to_lab;
use crate::config::EngineConfig;
use crate::eval::{sort_ranked, RankedItem, RankingResult};
use crate::features::{ClassFeatures, FeatureRecord};
use crate::mask::ClassId;
use crate::scoring::score;
use crate::texture::{grayscale, lbp_histograms, LbpHistogram};

pub const DEFAULT_SPREAD: usize = 2;

/// Image id given to synthesized query records.
pub const ATTRIBUTE_QUERY_ID: &str = "attribute-query";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("attribute query has no entries")]
    Empty,
    #[error("class {0} appears more than once")]
    DuplicateClass(ClassId),
    #[error("unknown texture preset '{name}' (available: {})", available.join(", "))]
    UnknownPreset { name: String, available: Vec<String> },
    #[error("invalid color '{0}': expected #rrggbb")]
    BadColor(String),
    #[error("invalid attribute '{0}': expected class=#rrggbb[,preset]")]
    BadAttribute(String),
    #[error("unknown class '{0}'")]
    UnknownClass(String),
    #[error("preset table: {0}")]
    Presets(String),
}

/// Parses `#rrggbb` or `rrggbb`.
pub fn parse_hex_color(s: &str) -> Result<[u8; 3], QueryError> {
    let t = s.trim().trim_start_matches('#');
    if t.len() != 6 || !t.is_ascii() {
        return Err(QueryError::BadColor(s.to_string()));
    }
    let mut out = [0u8; 3];
    for (i, v) in out.iter_mut().enumerate() {
        *v = u8::from_str_radix(&t[2 * i..2 * i + 2], 16)
            .map_err(|_| QueryError::BadColor(s.to_string()))?;
    }
    Ok(out)
}

pub fn to_hex_color(rgb: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

mod rgb_serde {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Hex(String),
        Triplet([u8; 3]),
    }

    pub fn serialize<S: Serializer>(rgb: &[u8; 3], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&to_hex_color(*rgb))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 3], D::Error> {
        match Repr::deserialize(d)? {
            Repr::Hex(s) => parse_hex_color(&s).map_err(serde::de::Error::custom),
            Repr::Triplet(t) => Ok(t),
        }
    }
}

/// One described class. `rgb` accepts `"#rrggbb"` or `[r, g, b]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeEntry {
    pub class: ClassId,
    #[serde(with = "rgb_serde")]
    pub rgb: [u8; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture_preset: Option<String>,
}

impl FromStr for AttributeEntry {
    type Err = QueryError;

    /// `class=#rrggbb` with an optional `,preset` suffix.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (class, rest) = s
            .split_once('=')
            .ok_or_else(|| QueryError::BadAttribute(s.to_string()))?;
        let class: ClassId = class
            .trim()
            .parse()
            .map_err(|_| QueryError::UnknownClass(class.trim().to_string()))?;
        let (color, preset) = match rest.split_once(',') {
            Some((c, p)) => (c, Some(p.trim().to_string())),
            None => (rest, None),
        };
        Ok(Self {
            class,
            rgb: parse_hex_color(color)?,
            texture_preset: preset.filter(|p| !p.is_empty()),
        })
    }
}

impl fmt::Display for AttributeEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.class, to_hex_color(self.rgb))?;
        if let Some(p) = &self.texture_preset {
            write!(f, ",{p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttributeQuery {
    pub entries: Vec<AttributeEntry>,
}

impl AttributeQuery {
    pub fn new(entries: Vec<AttributeEntry>) -> Self {
        Self { entries }
    }

    /// Checks non-emptiness and class uniqueness.
    pub fn validate(&self) -> Result<(), QueryError> {
        if self.entries.is_empty() {
            return Err(QueryError::Empty);
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.class) {
                return Err(QueryError::DuplicateClass(e.class));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TexturePreset {
    pub contour: LbpHistogram,
    pub inner: LbpHistogram,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TexturePresetTable {
    pub presets: BTreeMap<String, TexturePreset>,
}

const BUILTIN_PRESETS: &str = include_str!("../data/texture_presets.json");

impl TexturePresetTable {
    /// The presets shipped in `data/texture_presets.json`.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_PRESETS).expect("bundled presets are valid")
    }

    pub fn from_json(json: &str) -> Result<Self, QueryError> {
        let t: Self = serde_json::from_str(json).map_err(|e| QueryError::Presets(e.to_string()))?;
        for (name, p) in &t.presets {
            p.contour
                .validate()
                .and_then(|_| p.inner.validate())
                .map_err(|e| QueryError::Presets(format!("{name}: {e}")))?;
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, QueryError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| QueryError::Presets(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn names(&self) -> Vec<String> {
        self.presets.keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Result<&TexturePreset, QueryError> {
        self.presets.get(name).ok_or_else(|| QueryError::UnknownPreset {
            name: name.to_string(),
            available: self.names(),
        })
    }
}

/// Margin left around the region measured on a preset swatch.
pub const SWATCH_MARGIN: u32 = 4;

/// Contour and inner LBP histograms of a swatch's central square region.
pub fn preset_from_swatch(rgb: &RgbImage) -> TexturePreset {
    let (w, h) = rgb.dimensions();
    let pixels: Vec<(u32, u32)> = (SWATCH_MARGIN..h.saturating_sub(SWATCH_MARGIN))
        .flat_map(|y| (SWATCH_MARGIN..w.saturating_sub(SWATCH_MARGIN)).map(move |x| (x, y)))
        .collect();
    let (contour, inner) = lbp_histograms(&grayscale(rgb), &pixels);
    TexturePreset { contour, inner }
}

fn window_bits(channel: Channel, value: u8, spread: usize) -> BinarizedHistogram {
    let center = value as usize * BINS / 256;
    let mut h = BinarizedHistogram::empty(channel);
    for bin in center.saturating_sub(spread)..=(center + spread).min(BINS - 1) {
        h.set(bin);
    }
    h
}

/// Builds the record an image with exactly the described classes would
/// produce. Classes without a preset carry no texture.
pub fn synthesize_record(
    q: &AttributeQuery,
    presets: &TexturePresetTable,
    spread: usize,
    cfg: &EngineConfig,
) -> Result<FeatureRecord, QueryError> {
    q.validate()?;
    let mut classes = BTreeMap::new();
    for e in &q.entries {
        let lab = rgb_to_lab(e.rgb);
        let (lbp_contour, lbp_inner) = match &e.texture_preset {
            Some(name) => {
                let p = presets.get(name)?;
                (p.contour.clone(), p.inner.clone())
            }
            None => (LbpHistogram::empty(), LbpHistogram::empty()),
        };
        classes.insert(
            e.class,
            ClassFeatures {
                n_pixels: 0,
                color: ColorFeatures {
                    l: window_bits(Channel::L, lab[0], spread),
                    a: window_bits(Channel::A, lab[1], spread),
                    b: window_bits(Channel::B, lab[2], spread),
                    mean: LabMean::from_encoded(lab),
                    over_highlighted: false,
                },
                lbp_contour,
                lbp_inner,
            },
        );
    }
    Ok(FeatureRecord {
        image_id: ATTRIBUTE_QUERY_ID.to_string(),
        person_id: None,
        camera_id: None,
        extractor_version: cfg.version(),
        source: None,
        classes,
    })
}

/// Top `k` gallery records for an attribute query, with the synthesized
/// record it was scored as.
pub fn search_by_attributes(
    q: &AttributeQuery,
    presets: &TexturePresetTable,
    spread: usize,
    gallery: &[FeatureRecord],
    k: usize,
    cfg: &EngineConfig,
) -> Result<(FeatureRecord, RankingResult), QueryError> {
    use rayon::prelude::*;
    let record = synthesize_record(q, presets, spread, cfg)?;
    let mut ranked: Vec<RankedItem> = gallery
        .par_iter()
        .map(|g| RankedItem {
            image_id: g.image_id.clone(),
            score: score(&record, g, &cfg.scoring),
        })
        .collect();
    sort_ranked(&mut ranked);
    ranked.truncate(k);
    let result = RankingResult {
        query_id: record.image_id.clone(),
        ranked,
        excluded: Vec::new(),
    };
    Ok((record, result))
}
