//! Per-class descriptors and the per-image feature record.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::color::{color_features, rgb_to_lab, ColorFeatures};
use crate::config::EngineConfig;
use crate::mask::{class_pixel_sets_with, ClassId, PersonImage};
use crate::texture::{grayscale, lbp_histograms, LbpHistogram};

/// All descriptors for one merged class of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFeatures {
    pub n_pixels: usize,
    pub color: ColorFeatures,
    pub lbp_contour: LbpHistogram,
    pub lbp_inner: LbpHistogram,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub image: String,
    pub mask: String,
    /// SHA-256 over the image bytes followed by the mask bytes.
    pub content_hash: String,
}

/// The persisted descriptor bundle for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_id: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_id: Option<u32>,
    pub extractor_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceInfo>,
    pub classes: BTreeMap<ClassId, ClassFeatures>,
}

impl FeatureRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.image_id.is_empty() {
            return Err("empty image_id".into());
        }
        for (class, f) in &self.classes {
            for (name, h) in [("contour", &f.lbp_contour), ("inner", &f.lbp_inner)] {
                h.validate().map_err(|e| format!("{class} {name}: {e}"))?;
            }
            for v in f.color.mean.as_array() {
                if !(0.0..=255.0).contains(&v) {
                    return Err(format!("{class}: Lab mean component {v} outside [0, 255]"));
                }
            }
        }
        Ok(())
    }
}

/// Extracts descriptors for every class region of `img` that is large enough.
pub fn extract_features(img: &PersonImage, cfg: &EngineConfig) -> BTreeMap<ClassId, ClassFeatures> {
    let gray = grayscale(&img.rgb);
    let sets = class_pixel_sets_with(img, cfg.extraction.min_class_pixels);
    let mut out = BTreeMap::new();
    for (class, pixels) in sets {
        let lab: Vec<[u8; 3]> = pixels
            .iter()
            .map(|&(x, y)| rgb_to_lab(img.rgb.get_pixel(x, y).0))
            .collect();
        let Ok(color) = color_features(&lab, &cfg.extraction) else {
            continue;
        };
        let (lbp_contour, lbp_inner) = lbp_histograms(&gray, &pixels);
        out.insert(
            class,
            ClassFeatures {
                n_pixels: pixels.len(),
                color,
                lbp_contour,
                lbp_inner,
            },
        );
    }
    out
}

/// Builds a record for `img` tagged with the configuration version.
pub fn extract_record(img: &PersonImage, cfg: &EngineConfig) -> FeatureRecord {
    FeatureRecord {
        image_id: img.image_id.clone(),
        person_id: None,
        camera_id: None,
        extractor_version: cfg.version(),
        source: None,
        classes: extract_features(img, cfg),
    }
}
