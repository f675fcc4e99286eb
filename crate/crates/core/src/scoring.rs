//! Channel, class and pair similarity.
//!
//! Six feature channels are compared per class: binarized L, a and b
//! histograms, the distance between Lab means, and inner/contour LBP
//! intersections. A class score is the weighted sum of its channels; a
//! pair score is the class-weighted sum over classes present in both
//! records. Ranking uses the unnormalized sum, which favors pairs that
//! share many heavily weighted classes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::color::{BinarizedHistogram, Channel, LabMean};
use crate::config::{ConfigError, ScoringConfig};
use crate::features::{ClassFeatures, FeatureRecord};
use crate::mask::ClassId;
use crate::texture::texture_similarity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureChannel {
    L,
    A,
    B,
    D,
    TIn,
    TCo,
}

impl FeatureChannel {
    pub const ALL: [FeatureChannel; 6] = [
        FeatureChannel::L,
        FeatureChannel::A,
        FeatureChannel::B,
        FeatureChannel::D,
        FeatureChannel::TIn,
        FeatureChannel::TCo,
    ];

    pub fn key(self) -> &'static str {
        match self {
            FeatureChannel::L => "L",
            FeatureChannel::A => "a",
            FeatureChannel::B => "b",
            FeatureChannel::D => "d",
            FeatureChannel::TIn => "t_in",
            FeatureChannel::TCo => "t_co",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.key() == key)
    }
}

/// Per-channel weights; they always sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureWeights([f64; 6]);

impl Default for FeatureWeights {
    fn default() -> Self {
        Self([0.13, 0.13, 0.13, 0.31, 0.15, 0.15])
    }
}

impl FeatureWeights {
    pub fn new(l: f64, a: f64, b: f64, d: f64, t_in: f64, t_co: f64) -> Result<Self, ConfigError> {
        Self([l, a, b, d, t_in, t_co]).validated()
    }

    pub fn get(&self, ch: FeatureChannel) -> f64 {
        self.0[ch as usize]
    }

    pub(crate) fn set(&mut self, ch: FeatureChannel, w: f64) {
        self.0[ch as usize] = w;
    }

    pub fn as_array(&self) -> [f64; 6] {
        self.0
    }
}

impl FeatureWeights {
    /// Rejects negative weights and sums other than one.
    pub fn validated(self) -> Result<Self, ConfigError> {
        let w = self;
        for ch in FeatureChannel::ALL {
            let v = w.get(ch);
            if !v.is_finite() || v < 0.0 {
                return Err(ConfigError::BadWeight(format!("feature.{}", ch.key())));
            }
        }
        let sum: f64 = w.0.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ConfigError::FeatureSum(sum));
        }
        Ok(w)
    }
}

/// Per-class importance weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights([f64; ClassId::COUNT]);

impl Default for ClassWeights {
    fn default() -> Self {
        let mut w = [0.0; ClassId::COUNT];
        for c in ClassId::ALL {
            w[c.index()] = match c {
                ClassId::UpperClothes => 8.0,
                ClassId::Pants => 6.0,
                ClassId::Scarf => 3.0,
                ClassId::Hat
                | ClassId::Glove
                | ClassId::Sunglasses
                | ClassId::LeftShoe
                | ClassId::RightShoe => 2.0,
                ClassId::Hair
                | ClassId::Socks
                | ClassId::Face
                | ClassId::LeftArm
                | ClassId::RightArm
                | ClassId::LeftLeg
                | ClassId::RightLeg => 1.0,
            };
        }
        Self(w)
    }
}

impl ClassWeights {
    pub fn get(&self, c: ClassId) -> f64 {
        self.0[c.index()]
    }

    pub fn set(&mut self, c: ClassId, w: f64) {
        self.0[c.index()] = w;
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// `s2 / (s1 + s2)` over the bin-wise sum of two bit masks, where `s2`
/// counts bins set in both and `s1` bins set in exactly one. `None` when
/// both are empty.
pub fn binary_hist_similarity(b1: &BinarizedHistogram, b2: &BinarizedHistogram) -> Option<f64> {
    let twos = (b1.bits & b2.bits).count_ones();
    let ones = (b1.bits ^ b2.bits).count_ones();
    if twos + ones == 0 {
        return None;
    }
    Some(twos as f64 / (twos + ones) as f64)
}

/// Euclidean distance between two packed Lab means, in native Lab units.
pub fn lab_distance(m1: &LabMean, m2: &LabMean) -> f64 {
    let (p, q) = (m1.native(), m2.native());
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

/// Linear falloff from 1 at distance 0 to 0 at `k_d`.
pub fn distance_similarity_from(d: f64, k_d: f64) -> f64 {
    if d < k_d {
        1.0 - d / k_d
    } else {
        0.0
    }
}

pub fn distance_similarity(m1: &LabMean, m2: &LabMean, k_d: f64) -> f64 {
    distance_similarity_from(lab_distance(m1, m2), k_d)
}

/// Channel similarities for one shared class. `None` marks a channel that
/// is absent on at least one side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSimilarity {
    #[serde(rename = "S_L")]
    pub l: Option<f64>,
    #[serde(rename = "S_a")]
    pub a: Option<f64>,
    #[serde(rename = "S_b")]
    pub b: Option<f64>,
    #[serde(rename = "S_d")]
    pub d: Option<f64>,
    #[serde(rename = "S_in")]
    pub t_in: Option<f64>,
    #[serde(rename = "S_co")]
    pub t_co: Option<f64>,
    #[serde(rename = "S_c")]
    pub s_c: f64,
}

impl ClassSimilarity {
    pub fn get(&self, ch: FeatureChannel) -> Option<f64> {
        match ch {
            FeatureChannel::L => self.l,
            FeatureChannel::A => self.a,
            FeatureChannel::B => self.b,
            FeatureChannel::D => self.d,
            FeatureChannel::TIn => self.t_in,
            FeatureChannel::TCo => self.t_co,
        }
    }
}

/// Weighted sum of the present channels, with the weights of absent
/// channels spread proportionally over the present ones.
pub fn combine_channels(channels: [Option<f64>; 6], w: &FeatureWeights) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ch in FeatureChannel::ALL {
        if let Some(s) = channels[ch as usize] {
            num += w.get(ch) * s;
            den += w.get(ch);
        }
    }
    if den > 0.0 {
        (num / den).min(1.0)
    } else {
        0.0
    }
}

/// Similarity of one class across two records; `None` when either side is
/// over-highlighted.
pub fn class_similarity(
    f1: &ClassFeatures,
    f2: &ClassFeatures,
    cfg: &ScoringConfig,
) -> Option<ClassSimilarity> {
    if f1.color.over_highlighted || f2.color.over_highlighted {
        return None;
    }
    let hist = |ch: Channel| binary_hist_similarity(f1.color.hist(ch), f2.color.hist(ch));
    let channels = [
        hist(Channel::L),
        hist(Channel::A),
        hist(Channel::B),
        Some(distance_similarity(&f1.color.mean, &f2.color.mean, cfg.k_d)),
        texture_similarity(&f1.lbp_inner, &f2.lbp_inner),
        texture_similarity(&f1.lbp_contour, &f2.lbp_contour),
    ];
    Some(ClassSimilarity {
        l: channels[0],
        a: channels[1],
        b: channels[2],
        d: channels[3],
        t_in: channels[4],
        t_co: channels[5],
        s_c: combine_channels(channels, &cfg.features),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub classes: BTreeMap<ClassId, ClassSimilarity>,
    #[serde(rename = "S_sim")]
    pub s_sim: f64,
    #[serde(rename = "S_simn")]
    pub s_simn: f64,
    pub no_shared_classes: bool,
}

impl SimilarityReport {
    pub fn shared_classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.classes.keys().copied()
    }
}

fn shared<'a>(
    r1: &'a FeatureRecord,
    r2: &'a FeatureRecord,
) -> impl Iterator<Item = (ClassId, &'a ClassFeatures, &'a ClassFeatures)> + 'a {
    r1.classes
        .iter()
        .filter_map(|(c, f1)| r2.classes.get(c).map(|f2| (*c, f1, f2)))
}

/// Full per-class breakdown for a pair of records.
pub fn pair_score(r1: &FeatureRecord, r2: &FeatureRecord, cfg: &ScoringConfig) -> SimilarityReport {
    let mut classes = BTreeMap::new();
    let mut s_sim = 0.0;
    let mut weight = 0.0;
    for (c, f1, f2) in shared(r1, r2) {
        if let Some(sim) = class_similarity(f1, f2, cfg) {
            let w = cfg.classes.get(c);
            s_sim += w * sim.s_c;
            weight += w;
            classes.insert(c, sim);
        }
    }
    SimilarityReport {
        no_shared_classes: classes.is_empty(),
        s_simn: if weight > 0.0 { s_sim / weight } else { 0.0 },
        s_sim,
        classes,
    }
}

/// `S_sim` only; same arithmetic as [`pair_score`] without building the report.
pub fn score(r1: &FeatureRecord, r2: &FeatureRecord, cfg: &ScoringConfig) -> f64 {
    shared(r1, r2)
        .filter_map(|(c, f1, f2)| class_similarity(f1, f2, cfg).map(|s| cfg.classes.get(c) * s.s_c))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::ColorFeatures;
    use crate::texture::LbpHistogram;

    fn bits(pattern: &[u8]) -> BinarizedHistogram {
        let mut b = BinarizedHistogram::empty(Channel::L);
        for (j, &v) in pattern.iter().enumerate() {
            if v == 1 {
                b.set(j);
            }
        }
        b
    }

    fn lab(l: f64, a: f64, b: f64) -> LabMean {
        // native units to packed
        LabMean {
            l: l * 2.55,
            a: a + 128.0,
            b: b + 128.0,
        }
    }

    fn uniform_class(mean: LabMean) -> ClassFeatures {
        let mut counts = [0u32; 256];
        counts[0] = 5;
        counts[1] = 3;
        let tex = LbpHistogram::from_counts(&counts);
        ClassFeatures {
            n_pixels: 100,
            color: ColorFeatures {
                l: bits(&[1, 1, 0, 1]),
                a: bits(&[0, 1, 1]),
                b: bits(&[1]),
                mean,
                over_highlighted: false,
            },
            lbp_contour: tex.clone(),
            lbp_inner: tex,
        }
    }

    fn record(classes: &[(ClassId, ClassFeatures)]) -> FeatureRecord {
        FeatureRecord {
            image_id: "r".into(),
            person_id: None,
            camera_id: None,
            extractor_version: "v".into(),
            source: None,
            classes: classes.iter().cloned().collect(),
        }
    }

    #[test]
    fn default_weights() {
        let w = FeatureWeights::default();
        assert!((w.as_array().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(ClassWeights::default().total(), 34.0);
        assert!(FeatureWeights::new(0.5, 0.5, 0.5, 0.0, 0.0, 0.0).is_err());
        assert!(FeatureWeights::new(0.2, 0.2, 0.2, 0.2, 0.2, 0.0).is_ok());
    }

    #[test]
    fn binary_similarity_examples() {
        let a = bits(&[1, 0, 1, 1]);
        assert_eq!(binary_hist_similarity(&a, &a), Some(1.0));
        let s = binary_hist_similarity(&bits(&[1, 1, 0, 0]), &bits(&[1, 0, 1, 0])).unwrap();
        assert!((s - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(binary_hist_similarity(&bits(&[1, 0]), &bits(&[0, 1])), Some(0.0));
        assert_eq!(binary_hist_similarity(&bits(&[]), &bits(&[])), None);
    }

    #[test]
    fn distance_similarity_examples() {
        let m = lab(50.0, 0.0, 0.0);
        assert_eq!(distance_similarity(&m, &m, 35.0), 1.0);
        assert_eq!(distance_similarity_from(35.0, 35.0), 0.0);
        let far = distance_similarity(&m, &lab(50.0, 21.0, 28.0), 35.0);
        assert!(far.abs() < 1e-12, "{far}");
        let near = distance_similarity(&m, &lab(50.0, 3.0, 4.0), 35.0);
        assert!((near - 6.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn class_similarity_examples() {
        let cfg = ScoringConfig::default();
        let w = cfg.features;
        assert!((combine_channels([Some(1.0); 6], &w) - 1.0).abs() < 1e-12);
        assert_eq!(combine_channels([Some(0.0); 6], &w), 0.0);
        let s = combine_channels([Some(1.0), Some(1.0), Some(1.0), Some(1.0), None, None], &w);
        assert!((s - 1.0).abs() < 1e-12);
        // redistribution keeps proportions: L = 1, d = 0 only
        let s = combine_channels([Some(1.0), None, None, Some(0.0), None, None], &w);
        assert!((s - 0.13 / 0.44).abs() < 1e-12);

        let f = uniform_class(lab(40.0, 10.0, -5.0));
        let sim = class_similarity(&f, &f, &cfg).unwrap();
        assert!((sim.s_c - 1.0).abs() < 1e-12);

        let mut hot = f.clone();
        hot.color.over_highlighted = true;
        assert!(class_similarity(&f, &hot, &cfg).is_none());
    }

    #[test]
    fn pair_score_examples() {
        let cfg = ScoringConfig::default();
        let all: Vec<_> = ClassId::ALL
            .iter()
            .map(|&c| (c, uniform_class(lab(30.0, 5.0, 5.0))))
            .collect();
        let r = record(&all);
        let rep = pair_score(&r, &r, &cfg);
        assert!((rep.s_sim - 34.0).abs() < 1e-9);
        assert!((rep.s_simn - 1.0).abs() < 1e-12);
        assert_eq!(score(&r, &r, &cfg), rep.s_sim);

        // pants at S_c = 0.5 and face at S_c = 1: colour-only pants class whose
        // distance similarity is 0.5 and other channels absent
        let mut pants_a = uniform_class(lab(50.0, 0.0, 0.0));
        let mut pants_b = uniform_class(lab(50.0, 17.5, 0.0));
        for p in [&mut pants_a, &mut pants_b] {
            p.color.l = BinarizedHistogram::empty(Channel::L);
            p.color.a = BinarizedHistogram::empty(Channel::A);
            p.color.b = BinarizedHistogram::empty(Channel::B);
            p.lbp_inner = LbpHistogram::empty();
            p.lbp_contour = LbpHistogram::empty();
        }
        let face = uniform_class(lab(60.0, 10.0, 10.0));
        let r1 = record(&[(ClassId::Pants, pants_a), (ClassId::Face, face.clone())]);
        let r2 = record(&[(ClassId::Pants, pants_b), (ClassId::Face, face)]);
        let rep = pair_score(&r1, &r2, &cfg);
        assert!((rep.classes[&ClassId::Pants].s_c - 0.5).abs() < 1e-12);
        assert!((rep.s_sim - 4.0).abs() < 1e-12);
        assert!((rep.s_simn - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn no_shared_classes() {
        let cfg = ScoringConfig::default();
        let r1 = record(&[(ClassId::Hat, uniform_class(lab(1.0, 0.0, 0.0)))]);
        let r2 = record(&[(ClassId::Face, uniform_class(lab(1.0, 0.0, 0.0)))]);
        let rep = pair_score(&r1, &r2, &cfg);
        assert!(rep.no_shared_classes);
        assert_eq!((rep.s_sim, rep.s_simn), (0.0, 0.0));
    }

    #[test]
    fn unnormalized_score_prefers_heavier_classes() {
        let cfg = ScoringConfig::default();
        let face_only = combine_channels([Some(1.0); 6], &cfg.features) * cfg.classes.get(ClassId::Face);
        let face_simn = face_only / cfg.classes.get(ClassId::Face);
        let clothes = 0.9 * (cfg.classes.get(ClassId::UpperClothes) + cfg.classes.get(ClassId::Pants));
        let clothes_simn = clothes / 14.0;
        assert!((clothes - 12.6).abs() < 1e-12);
        assert!(clothes > face_only);
        assert!(face_simn > clothes_simn);
    }
}
