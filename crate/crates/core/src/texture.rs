//! Rotation-invariant local binary patterns over class contours and interiors.

use std::collections::BTreeMap;

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

pub const LBP_BINS: usize = 256;

/// Neighbor offsets clockwise from the top-left; neighbor `k` sets bit `7 - k`.
const NEIGHBORS: [(i32, i32); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
];

const fn min_rotation(code: u8) -> u8 {
    let mut best = code;
    let mut r = code;
    let mut i = 0;
    while i < 8 {
        r = r.rotate_right(1);
        if r < best {
            best = r;
        }
        i += 1;
    }
    best
}

const fn build_min_rotation_table() -> [u8; 256] {
    let mut table = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        table[i] = min_rotation(i as u8);
        i += 1;
    }
    table
}

static MIN_ROTATION: [u8; 256] = build_min_rotation_table();

const fn build_canonical_codes() -> [u8; 36] {
    let mut out = [0u8; 36];
    let mut n = 0;
    let mut i = 0;
    while i < 256 {
        if min_rotation(i as u8) == i as u8 {
            out[n] = i as u8;
            n += 1;
        }
        i += 1;
    }
    out
}

/// The 36 codes that are minimal under circular bit rotation.
pub static CANONICAL_CODES: [u8; 36] = build_canonical_codes();

/// Smallest value among the eight circular rotations of `code`.
pub fn canonical_code(code: u8) -> u8 {
    MIN_ROTATION[code as usize]
}

pub fn is_canonical(code: u8) -> bool {
    MIN_ROTATION[code as usize] == code
}

/// BT.601 luma, rounded to nearest.
pub fn grayscale(rgb: &RgbImage) -> GrayImage {
    let mut out = GrayImage::new(rgb.width(), rgb.height());
    for (o, p) in out.pixels_mut().zip(rgb.pixels()) {
        let [r, g, b] = p.0;
        let luma = (299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000;
        *o = Luma([luma as u8]);
    }
    out
}

/// Rotation-invariant LBP code at `(x, y)`, or `None` on the raster border.
pub fn lbp_code(gray: &GrayImage, x: u32, y: u32) -> Option<u8> {
    let (w, h) = gray.dimensions();
    if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
        return None;
    }
    let center = gray.get_pixel(x, y)[0];
    let mut code = 0u8;
    for (k, (dx, dy)) in NEIGHBORS.iter().enumerate() {
        let n = gray.get_pixel((x as i32 + dx) as u32, (y as i32 + dy) as u32)[0];
        if n > center {
            code |= 1 << (7 - k);
        }
    }
    Some(canonical_code(code))
}

type Pixels = Vec<(u32, u32)>;

/// Splits a region into contour pixels (some 4-neighbor outside the region
/// or off the raster) and interior pixels. Both keep the input order.
pub fn split_contour_inner(
    pixels: &[(u32, u32)],
    width: u32,
    height: u32,
) -> (Pixels, Pixels) {
    let mut member = vec![false; width as usize * height as usize];
    for &(x, y) in pixels {
        member[(y * width + x) as usize] = true;
    }
    let inside = |x: i64, y: i64| {
        x >= 0
            && y >= 0
            && x < width as i64
            && y < height as i64
            && member[(y as usize) * width as usize + x as usize]
    };
    pixels.iter().partition(|&&(x, y)| {
        let (x, y) = (x as i64, y as i64);
        !(inside(x - 1, y) && inside(x + 1, y) && inside(x, y - 1) && inside(x, y + 1))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Contour,
    Inner,
}

/// A normalized 256-bin LBP histogram; only canonical codes are populated.
#[derive(Debug, Clone, PartialEq)]
pub struct LbpHistogram {
    pub bins: Vec<f64>,
    pub n_codes: u32,
}

impl Default for LbpHistogram {
    fn default() -> Self {
        Self::empty()
    }
}

impl LbpHistogram {
    pub fn empty() -> Self {
        Self {
            bins: vec![0.0; LBP_BINS],
            n_codes: 0,
        }
    }

    pub fn from_counts(counts: &[u32; LBP_BINS]) -> Self {
        let n: u32 = counts.iter().sum();
        if n == 0 {
            return Self::empty();
        }
        let bins = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Self { bins, n_codes: n }
    }

    pub fn is_empty(&self) -> bool {
        self.n_codes == 0
    }

    /// Non-zero bins sorted by descending share, ties by code.
    pub fn top_bins(&self, n: usize) -> Vec<(u8, f64)> {
        let mut nz: Vec<(u8, f64)> = self
            .bins
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, &v)| (i as u8, v))
            .collect();
        nz.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        nz.truncate(n);
        nz
    }

    /// Checks bin count, canonical-only support and normalization.
    pub fn validate(&self) -> Result<(), String> {
        if self.bins.len() != LBP_BINS {
            return Err(format!("LBP histogram has {} bins, expected 256", self.bins.len()));
        }
        if self.bins.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err("LBP histogram has a negative or non-finite bin".into());
        }
        if let Some(code) = (0..LBP_BINS).find(|&c| self.bins[c] != 0.0 && !is_canonical(c as u8)) {
            return Err(format!("LBP bin {code} is not a rotation-minimal code"));
        }
        let sum: f64 = self.bins.iter().sum();
        if self.n_codes == 0 {
            if sum != 0.0 {
                return Err("empty LBP histogram has non-zero bins".into());
            }
        } else if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("LBP histogram sums to {sum}, expected 1"));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SparseLbp {
    n_codes: u32,
    bins: BTreeMap<u8, f64>,
}

impl Serialize for LbpHistogram {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        SparseLbp {
            n_codes: self.n_codes,
            bins: self
                .bins
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, &v)| (i as u8, v))
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LbpHistogram {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let sparse = SparseLbp::deserialize(d)?;
        let mut bins = vec![0.0; LBP_BINS];
        for (code, v) in sparse.bins {
            bins[code as usize] = v;
        }
        Ok(Self {
            bins,
            n_codes: sparse.n_codes,
        })
    }
}

fn code_counts(gray: &GrayImage, pixels: &[(u32, u32)]) -> [u32; LBP_BINS] {
    let mut counts = [0u32; LBP_BINS];
    for &(x, y) in pixels {
        if let Some(code) = lbp_code(gray, x, y) {
            counts[code as usize] += 1;
        }
    }
    counts
}

/// Contour and inner LBP histograms for one region. Codes use the full
/// raster, so contour neighborhoods reach outside the region.
pub fn lbp_histograms(gray: &GrayImage, pixels: &[(u32, u32)]) -> (LbpHistogram, LbpHistogram) {
    let (contour, inner) = split_contour_inner(pixels, gray.width(), gray.height());
    (
        LbpHistogram::from_counts(&code_counts(gray, &contour)),
        LbpHistogram::from_counts(&code_counts(gray, &inner)),
    )
}

/// Histogram intersection, or `None` if either side has no codes.
pub fn texture_similarity(h1: &LbpHistogram, h2: &LbpHistogram) -> Option<f64> {
    if h1.is_empty() || h2.is_empty() {
        return None;
    }
    let s: f64 = CANONICAL_CODES
        .iter()
        .map(|&c| h1.bins[c as usize].min(h2.bins[c as usize]))
        .sum();
    // normalized bins can sum to one ulp above 1
    Some(s.min(1.0))
}
