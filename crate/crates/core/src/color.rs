//! CIELAB color descriptors.
//!
//! Lab values are packed into 8 bits per channel: `L * 255 / 100`,
//! `a + 128`, `b + 128`, rounded and clamped. Histograms are built over the
//! 256 packed levels and folded to 64 bins by summing groups of four.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ExtractionConfig;

pub const RAW_BINS: usize = 256;
pub const BINS: usize = 64;
const FOLD: usize = RAW_BINS / BINS;

/// Share of the spreading excess moved out of a bin above the mean.
const SPREAD_FRACTION: f64 = 0.5;
/// Number of neighbor bins receiving an equal part of the spread excess.
const SPREAD_WIDTH: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ColorError {
    #[error("cannot build a histogram from zero pixels")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    L,
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::L, Channel::A, Channel::B];

    pub fn index(self) -> usize {
        self as usize
    }
}

// D65 reference white.
const XN: f64 = 0.95047;
const YN: f64 = 1.0;
const ZN: f64 = 1.08883;

fn srgb_to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    let c = c.clamp(0.0, 1.0);
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// sRGB (D65) to native CIELAB: `L` in [0, 100], `a`/`b` unbounded around 0.
pub fn rgb_to_lab_native(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (fx, fy, fz) = (lab_f(x / XN), lab_f(y / YN), lab_f(z / ZN));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Native CIELAB back to 8-bit sRGB, clamping out-of-gamut values.
pub fn lab_native_to_rgb(lab: [f64; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let (x, y, z) = (lab_f_inv(fx) * XN, lab_f_inv(fy) * YN, lab_f_inv(fz) * ZN);
    let r = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    let g = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    let b = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    [r, g, b].map(|c| (linear_to_srgb(c) * 255.0).round() as u8)
}

/// Packs native Lab into the 8-bit encoding.
pub fn encode_lab(lab: [f64; 3]) -> [u8; 3] {
    [lab[0] * 2.55, lab[1] + 128.0, lab[2] + 128.0].map(|v| v.round().clamp(0.0, 255.0) as u8)
}

/// Inverse of the packing, applied to possibly fractional encoded values.
pub fn decode_lab(encoded: [f64; 3]) -> [f64; 3] {
    [encoded[0] / 2.55, encoded[1] - 128.0, encoded[2] - 128.0]
}

/// sRGB to 8-bit packed Lab.
pub fn rgb_to_lab(rgb: [u8; 3]) -> [u8; 3] {
    encode_lab(rgb_to_lab_native(rgb))
}

pub fn rgb_to_lab_all(pixels: &[[u8; 3]]) -> Vec<[u8; 3]> {
    pixels.iter().map(|&p| rgb_to_lab(p)).collect()
}

/// Counts of each 8-bit level.
pub fn raw_histogram(values: impl IntoIterator<Item = u8>) -> [u32; RAW_BINS] {
    let mut raw = [0u32; RAW_BINS];
    for v in values {
        raw[v as usize] += 1;
    }
    raw
}

/// A 64-bin channel histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelHistogram {
    pub channel: Channel,
    pub bins: [f64; BINS],
    pub n_pixels: usize,
}

impl ChannelHistogram {
    /// Folds a 256-level histogram into 64 bins.
    pub fn from_raw(channel: Channel, raw: &[u32; RAW_BINS]) -> Self {
        let mut bins = [0.0; BINS];
        for (j, group) in raw.chunks_exact(FOLD).enumerate() {
            bins[j] = group.iter().map(|&c| c as f64).sum();
        }
        let n_pixels = raw.iter().map(|&c| c as usize).sum();
        Self {
            channel,
            bins,
            n_pixels,
        }
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }
}

pub fn build_histogram(channel: Channel, values: &[u8]) -> Result<ChannelHistogram, ColorError> {
    if values.is_empty() {
        return Err(ColorError::Empty);
    }
    Ok(ChannelHistogram::from_raw(
        channel,
        &raw_histogram(values.iter().copied()),
    ))
}

/// True when the brightest raw level holds strictly more than `fraction`
/// of the pixels.
pub fn check_over_highlight_with(raw_l: &[u32; RAW_BINS], n_pixels: usize, fraction: f64) -> bool {
    raw_l[RAW_BINS - 1] as f64 > fraction * n_pixels as f64
}

pub fn check_over_highlight(raw_l: &[u32; RAW_BINS], n_pixels: usize) -> bool {
    check_over_highlight_with(raw_l, n_pixels, 0.01)
}

fn deposit(bins: &mut [f64; BINS], from: usize, amount: f64, upward: bool) {
    let share = amount / SPREAD_WIDTH as f64;
    for step in 1..=SPREAD_WIDTH {
        let target = if upward {
            (from + step).min(BINS - 1)
        } else {
            from.saturating_sub(step)
        };
        bins[target] += share;
    }
}

/// Lightness histogram stretching.
///
/// Sub-average bins are cleared, then every bin above the new average
/// sheds half of its excess into the four bins further from the peak,
/// walking outward from the peak on both sides. The peak itself sheds its
/// excess once toward each side. Finally the outermost non-empty bins are
/// cleared. Deposits past either end land on the end bin.
pub fn stretch_l(hist: &ChannelHistogram) -> ChannelHistogram {
    let mut h = hist.bins;
    spread_above_mean(&mut h);
    if let Some(first) = h.iter().position(|&v| v != 0.0) {
        let last = h.iter().rposition(|&v| v != 0.0).unwrap_or(first);
        h[first] = 0.0;
        h[last] = 0.0;
    }
    ChannelHistogram {
        channel: hist.channel,
        bins: h,
        n_pixels: hist.n_pixels,
    }
}

/// Everything in [`stretch_l`] except clearing the outermost bins.
fn spread_above_mean(h: &mut [f64; BINS]) {
    let mean = h.iter().sum::<f64>() / BINS as f64;
    for v in h.iter_mut() {
        if *v < mean {
            *v = 0.0;
        }
    }
    let mean2 = h.iter().sum::<f64>() / BINS as f64;

    let peak = argmax(h);
    if h[peak] > mean2 {
        let excess = SPREAD_FRACTION * (h[peak] - mean2);
        h[peak] -= 2.0 * excess;
        deposit(h, peak, excess, true);
        deposit(h, peak, excess, false);
    }
    for i in peak + 1..BINS {
        if h[i] > mean2 {
            let excess = SPREAD_FRACTION * (h[i] - mean2);
            h[i] -= excess;
            deposit(h, i, excess, true);
        }
    }
    for i in (0..peak).rev() {
        if h[i] > mean2 {
            let excess = SPREAD_FRACTION * (h[i] - mean2);
            h[i] -= excess;
            deposit(h, i, excess, false);
        }
    }
}

fn argmax(bins: &[f64; BINS]) -> usize {
    let mut best = 0;
    for (i, &v) in bins.iter().enumerate() {
        if v > bins[best] {
            best = i;
        }
    }
    best
}

/// Experimental: drops a dark shadow mode that precedes the dominant
/// lightness peak. Off by default.
pub fn remove_shadow_peak(hist: &ChannelHistogram) -> ChannelHistogram {
    let h = &hist.bins;
    let peak = argmax(h);
    let mut out = hist.clone();
    let Some(first) = (1..peak).find(|&i| h[i] > 0.0 && h[i] >= h[i - 1] && h[i] > h[i + 1]) else {
        return out;
    };
    let Some(valley) = (first + 1..peak).min_by(|&a, &b| h[a].total_cmp(&h[b])) else {
        return out;
    };
    if h[valley] < 0.5 * h[first].min(h[peak]) {
        for v in out.bins[..=valley].iter_mut() {
            *v = 0.0;
        }
    }
    out
}

/// Bins that reached the threshold, stored as a 64-bit mask with bin 0 in
/// the most significant bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinarizedHistogram {
    pub channel: Channel,
    #[serde(with = "hex_bits")]
    pub bits: u64,
    pub threshold: f64,
}

impl BinarizedHistogram {
    pub fn empty(channel: Channel) -> Self {
        Self {
            channel,
            bits: 0,
            threshold: 0.0,
        }
    }

    pub fn mask_for(bin: usize) -> u64 {
        1u64 << (BINS - 1 - bin)
    }

    pub fn bit(&self, bin: usize) -> bool {
        self.bits & Self::mask_for(bin) != 0
    }

    pub fn set(&mut self, bin: usize) {
        self.bits |= Self::mask_for(bin);
    }

    pub fn count(&self) -> u32 {
        self.bits.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn to_hex(&self) -> String {
        format!("{:016x}", self.bits)
    }

    /// Bit string, bin 0 first.
    pub fn pattern(&self) -> String {
        (0..BINS).map(|j| if self.bit(j) { '1' } else { '0' }).collect()
    }
}

mod hex_bits {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bits: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{bits:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 16 {
            return Err(D::Error::custom(format!("bitmask must be 16 hex digits, got '{s}'")));
        }
        u64::from_str_radix(&s, 16).map_err(D::Error::custom)
    }
}

/// Keeps the bins holding at least `k_inc` times the mean bin count. An
/// empty histogram binarizes to no bits.
pub fn binarize(hist: &ChannelHistogram, k_inc: f64) -> BinarizedHistogram {
    let total = hist.total();
    let mut out = BinarizedHistogram::empty(hist.channel);
    if total <= 0.0 {
        return out;
    }
    out.threshold = k_inc * total / BINS as f64;
    for (j, &v) in hist.bins.iter().enumerate() {
        if v >= out.threshold {
            out.set(j);
        }
    }
    out
}

/// Mean of packed Lab values per channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabMean {
    #[serde(rename = "L")]
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl LabMean {
    pub fn from_encoded(lab: [u8; 3]) -> Self {
        Self {
            l: lab[0] as f64,
            a: lab[1] as f64,
            b: lab[2] as f64,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.l, self.a, self.b]
    }

    pub fn native(&self) -> [f64; 3] {
        decode_lab(self.as_array())
    }
}

pub fn lab_mean(pixels: &[[u8; 3]]) -> Result<LabMean, ColorError> {
    if pixels.is_empty() {
        return Err(ColorError::Empty);
    }
    let mut sums = [0u64; 3];
    for p in pixels {
        for c in 0..3 {
            sums[c] += p[c] as u64;
        }
    }
    let n = pixels.len() as f64;
    Ok(LabMean {
        l: sums[0] as f64 / n,
        a: sums[1] as f64 / n,
        b: sums[2] as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorFeatures {
    #[serde(rename = "L")]
    pub l: BinarizedHistogram,
    pub a: BinarizedHistogram,
    pub b: BinarizedHistogram,
    pub mean: LabMean,
    pub over_highlighted: bool,
}

impl ColorFeatures {
    pub fn hist(&self, channel: Channel) -> &BinarizedHistogram {
        match channel {
            Channel::L => &self.l,
            Channel::A => &self.a,
            Channel::B => &self.b,
        }
    }
}

/// Color descriptors for one class region given its packed Lab pixels.
pub fn color_features(
    lab_pixels: &[[u8; 3]],
    cfg: &ExtractionConfig,
) -> Result<ColorFeatures, ColorError> {
    let mean = lab_mean(lab_pixels)?;
    let raw: Vec<[u32; RAW_BINS]> = (0..3)
        .map(|c| raw_histogram(lab_pixels.iter().map(|p| p[c])))
        .collect();
    let n = lab_pixels.len();
    let over_highlighted = check_over_highlight_with(&raw[0], n, cfg.over_highlight_fraction);

    let mut l = ChannelHistogram::from_raw(Channel::L, &raw[0]);
    if cfg.shadow_removal {
        l = remove_shadow_peak(&l);
    }
    if cfg.stretch_l {
        l = stretch_l(&l);
    }
    let a = ChannelHistogram::from_raw(Channel::A, &raw[1]);
    let b = ChannelHistogram::from_raw(Channel::B, &raw[2]);
    Ok(ColorFeatures {
        l: binarize(&l, cfg.k_inc),
        a: binarize(&a, cfg.k_inc),
        b: binarize(&b, cfg.k_inc),
        mean,
        over_highlighted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hist(bins: [f64; BINS]) -> ChannelHistogram {
        ChannelHistogram {
            channel: Channel::L,
            n_pixels: bins.iter().sum::<f64>() as usize,
            bins,
        }
    }

    #[test]
    fn lab_fixtures() {
        assert_eq!(rgb_to_lab([0, 0, 0]), [0, 128, 128]);
        assert_eq!(rgb_to_lab([255, 255, 255]), [255, 128, 128]);
        // Reference values from an independent sRGB/D65 CIELAB implementation.
        let native = rgb_to_lab_native([255, 0, 0]);
        for (got, want) in native.iter().zip([53.24058794, 80.09230823, 67.20275104]) {
            assert!((got - want).abs() < 1e-3, "{native:?}");
        }
        assert_eq!(rgb_to_lab([255, 0, 0]), [136, 208, 195]);
        assert_eq!(rgb_to_lab([0, 255, 0]), [224, 42, 211]);
        assert_eq!(rgb_to_lab([0, 0, 255]), [82, 207, 20]);
        assert_eq!(rgb_to_lab([128, 64, 32]), [89, 153, 159]);
        assert_eq!(rgb_to_lab([210, 43, 43]), [118, 191, 170]);
    }

    #[test]
    fn lab_inverse_round_trips() {
        for rgb in [[0, 0, 0], [255, 255, 255], [255, 0, 0], [12, 200, 90], [128, 64, 32]] {
            assert_eq!(lab_native_to_rgb(rgb_to_lab_native(rgb)), rgb);
        }
    }

    #[test]
    fn histogram_fold() {
        let h = build_histogram(Channel::L, &[0; 10]).unwrap();
        assert_eq!(h.bins[0], 10.0);
        assert_eq!(h.total(), 10.0);

        // brute-force fold of a 256-level histogram: level v lands in bin v / 4
        let values = [0u8, 1, 2, 3];
        let mut expect = [0.0; BINS];
        for v in values {
            expect[v as usize / 4] += 1.0;
        }
        let h = build_histogram(Channel::A, &values).unwrap();
        assert_eq!(h.bins, expect);
        assert_eq!(h.bins[0], 4.0);

        let h = build_histogram(Channel::B, &[255; 7]).unwrap();
        assert_eq!(h.bins[63], 7.0);
        assert_eq!(build_histogram(Channel::L, &[]), Err(ColorError::Empty));
    }

    #[test]
    fn stretch_uniform_keeps_62_bins() {
        let out = stretch_l(&hist([5.0; BINS]));
        assert_eq!(out.bins[0], 0.0);
        assert_eq!(out.bins[63], 0.0);
        assert!(out.bins[1..63].iter().all(|&v| v == 5.0));
    }

    #[test]
    fn stretch_empty_is_empty() {
        assert_eq!(stretch_l(&hist([0.0; BINS])).bins, [0.0; BINS]);
    }

    /// Hand-executed trace of the stretching steps for a single spike.
    #[test]
    fn stretch_single_spike_fixture() {
        let mut bins = [0.0; BINS];
        bins[32] = 100.0;
        let out = stretch_l(&hist(bins));

        // Mean after thresholding is 100 / 64; the peak sheds half its excess
        // to each side, then each neighbor sheds half of its own excess outward.
        let avg = 100.0 / 64.0;
        let e = 0.5 * (100.0 - avg);
        assert!((out.bins[32] - (100.0 - 2.0 * e)).abs() < 1e-12);
        assert!((out.bins[32] - avg).abs() < 1e-12);
        // bin 33 received 0.25e and then shed half its excess above avg
        let b33 = 0.25 * e;
        let b33_after = b33 - 0.5 * (b33 - avg);
        assert!((out.bins[33] - b33_after).abs() < 1e-12);
        assert!((out.bins[31] - b33_after).abs() < 1e-12);
        // mirrored
        for k in 1..20 {
            assert!((out.bins[32 + k] - out.bins[32 - k]).abs() < 1e-9, "bin offset {k}");
        }
        // outermost non-zero bins are cleared
        let first = out.bins.iter().position(|&v| v > 0.0).unwrap();
        let last = out.bins.iter().rposition(|&v| v > 0.0).unwrap();
        assert!(first < 28 && last > 36);
    }

    #[test]
    fn over_highlight_boundary() {
        let mut raw = [0u32; RAW_BINS];
        assert!(!check_over_highlight(&raw, 1000));
        raw[255] = 11;
        assert!(check_over_highlight(&raw, 1000));
        raw[255] = 10;
        assert!(!check_over_highlight(&raw, 1000));
    }

    #[test]
    fn binarize_examples() {
        assert!(binarize(&hist([0.0; BINS]), 1.5).is_empty());

        let mut bins = [0.0; BINS];
        bins[0] = 8.0;
        let b = binarize(&hist(bins), 1.5);
        assert_eq!(b.threshold, 0.1875);
        assert_eq!(b.bits, 1u64 << 63);
        assert_eq!(b.to_hex(), "8000000000000000");

        assert!(binarize(&hist([3.0; BINS]), 1.5).is_empty());
    }

    #[test]
    fn lab_mean_examples() {
        let m = lab_mean(&[[10, 20, 30]]).unwrap();
        assert_eq!(m.as_array(), [10.0, 20.0, 30.0]);
        let m = lab_mean(&[[0, 0, 0], [10, 20, 30]]).unwrap();
        assert_eq!(m.as_array(), [5.0, 10.0, 15.0]);
        // weighted mean over the level histogram
        let px = [[100, 0, 0], [100, 0, 0], [100, 0, 0], [20, 0, 0]];
        let raw = raw_histogram(px.iter().map(|p| p[0]));
        let weighted: f64 = raw.iter().enumerate().map(|(j, &c)| j as f64 * c as f64).sum::<f64>()
            / raw.iter().map(|&c| c as f64).sum::<f64>();
        assert_eq!(weighted, 80.0);
        assert_eq!(lab_mean(&px).unwrap().l, weighted);
        assert_eq!(lab_mean(&[]), Err(ColorError::Empty));
    }

    #[test]
    fn shadow_removal_drops_leading_mode() {
        let mut bins = [0.0; BINS];
        bins[5] = 20.0;
        bins[6] = 30.0;
        bins[7] = 20.0;
        bins[30] = 50.0;
        bins[31] = 80.0;
        bins[32] = 50.0;
        let out = remove_shadow_peak(&hist(bins));
        assert!(out.bins[..8].iter().all(|&v| v == 0.0));
        assert_eq!(out.bins[31], 80.0);
        // unimodal untouched
        let mut uni = [0.0; BINS];
        uni[30] = 50.0;
        uni[31] = 80.0;
        assert_eq!(remove_shadow_peak(&hist(uni)).bins, uni);
    }

    #[test]
    fn bits_serialize_as_hex() {
        let mut b = BinarizedHistogram::empty(Channel::A);
        b.set(0);
        b.set(63);
        let json = serde_json::to_string(&b).unwrap();
        assert!(json.contains("\"8000000000000001\""), "{json}");
        assert_eq!(serde_json::from_str::<BinarizedHistogram>(&json).unwrap(), b);
        assert_eq!(b.pattern().len(), 64);
    }

    fn bins_strategy() -> impl Strategy<Value = [f64; BINS]> {
        proptest::collection::vec(prop_oneof![Just(0u32), 0u32..500], BINS).prop_map(|v| {
            let mut out = [0.0; BINS];
            for (o, x) in out.iter_mut().zip(v) {
                *o = x as f64;
            }
            out
        })
    }

    proptest! {
        #[test]
        fn stretch_conserves_mass_and_stays_non_negative(bins in bins_strategy()) {
            let mean = bins.iter().sum::<f64>() / BINS as f64;
            let kept: f64 = bins.iter().filter(|&&v| v >= mean).sum();
            let mut spread = bins;
            spread_above_mean(&mut spread);
            prop_assert!((spread.iter().sum::<f64>() - kept).abs() < 1e-9);
            let out = stretch_l(&hist(bins));
            prop_assert!(out.bins.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn binarize_is_scale_equivariant(bins in bins_strategy(), scale in 1u32..64) {
            let h = hist(bins);
            let mut scaled = bins;
            for v in scaled.iter_mut() {
                *v *= scale as f64;
            }
            prop_assert_eq!(binarize(&h, 1.5).bits, binarize(&hist(scaled), 1.5).bits);
        }

        #[test]
        fn uniform_region_mean_is_exact(rgb in any::<[u8; 3]>(), n in 1usize..200) {
            let lab = rgb_to_lab(rgb);
            let m = lab_mean(&vec![lab; n]).unwrap();
            prop_assert_eq!(m, LabMean::from_encoded(lab));
        }

        #[test]
        fn over_highlight_is_monotone(bright in 0u32..50, extra in 1u32..50, rest in 0u32..2000) {
            let mut raw = [0u32; RAW_BINS];
            raw[100] = rest;
            raw[255] = bright;
            let n = (rest + bright) as usize;
            let before = check_over_highlight(&raw, n);
            raw[255] += extra;
            let after = check_over_highlight(&raw, n + extra as usize);
            prop_assert!(!before || after);
        }
    }
}
