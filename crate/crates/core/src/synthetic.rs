//! Procedural person figures with exact parsing masks.
//!
//! Each identity gets its own clothing colors and shirt pattern. Views of
//! the same identity differ by placement, mirroring, shading, sensor
//! noise, background clutter and, optionally, a global lightness change.
//! Used for self-retrieval checks, benchmarks and demos.

use std::collections::BTreeMap;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::color::{
    lab_native_to_rgb, rgb_to_lab_native, BinarizedHistogram, Channel, ColorFeatures, LabMean,
};
use crate::features::{ClassFeatures, FeatureRecord};
use crate::mask::{ClassId, PersonImage};
use crate::texture::{LbpHistogram, CANONICAL_CODES, LBP_BINS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Plain,
    HorizontalStripes(u32),
    VerticalStripes(u32),
    Checks(u32),
    Dots(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identity {
    pub person_id: i32,
    pub upper: [u8; 3],
    pub upper_accent: [u8; 3],
    pub pattern: Pattern,
    pub pants: [u8; 3],
    pub shoes: [u8; 3],
    pub hair: [u8; 3],
    pub skin: [u8; 3],
    pub hat: Option<[u8; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub identities: usize,
    pub views: usize,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    /// Per-view global lightness factor drawn uniformly from this range.
    pub lightness_range: Option<(f64, f64)>,
    /// Seeds the lightness draw separately from rendering, so the same
    /// figures can be relit.
    pub lightness_seed: u64,
    /// Amplitude of uniform per-channel sensor noise.
    pub noise: i32,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            identities: 20,
            views: 4,
            width: 64,
            height: 128,
            seed: 7,
            lightness_range: None,
            lightness_seed: 0,
            noise: 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticImage {
    pub person: PersonImage,
    /// Raw LIP labels, row-major.
    pub labels: Vec<u8>,
    pub person_id: i32,
    pub camera_id: u32,
    pub view: usize,
    pub lightness: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub identities: Vec<Identity>,
    pub images: Vec<SyntheticImage>,
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round() as u8)
}

fn scale(rgb: [u8; 3], f: f64) -> [u8; 3] {
    rgb.map(|c| (c as f64 * f).round().clamp(0.0, 255.0) as u8)
}

impl Identity {
    /// Deterministic identity `index` of `count`.
    pub fn generate(index: usize, count: usize) -> Self {
        // ten hues, each worn by a light and a dark variant; the rest of
        // the outfit comes from small shared palettes
        let hues = (count.max(1) as f64 / 2.0).ceil().max(1.0);
        let slot = index as f64 % hues;
        // identity 7 (index 6) wears pure-hue red
        let upper_hue = 360.0 * (slot - 6.0 % hues) / hues;
        let dark = index as f64 >= hues;
        let upper = hsv(
            upper_hue,
            [0.85, 0.65][dark as usize],
            [0.95, 0.75][dark as usize],
        );
        let k = slot as usize;
        let pattern = match k % 5 {
            0 => Pattern::Plain,
            1 => Pattern::HorizontalStripes(4 + (k % 3) as u32),
            2 => Pattern::VerticalStripes(3 + (k % 2) as u32),
            3 => Pattern::Checks(5 + (k % 3) as u32),
            _ => Pattern::Dots(6),
        };
        let pants = [[35, 35, 45], [55, 65, 100], [70, 65, 60]][k % 3];
        let shoes = [[25, 25, 25], [215, 215, 210], [90, 65, 45]][(k / 3) % 3];
        let hair = [[28, 22, 18], [85, 60, 40]][k % 2];
        let skin = [[224, 172, 140], [165, 110, 80]][(k / 2) % 2];
        let hat = (k % 9 == 4).then(|| hsv(upper_hue + 150.0, 0.7, 0.7));
        Self {
            person_id: index as i32 + 1,
            upper,
            upper_accent: scale(upper, 0.55),
            pattern,
            pants,
            shoes,
            hair,
            skin,
            hat,
        }
    }

    fn upper_at(&self, x: u32, y: u32) -> [u8; 3] {
        // accents stay a minority so the base color dominates
        let accent = match self.pattern {
            Pattern::Plain => false,
            Pattern::HorizontalStripes(p) => y.is_multiple_of(p),
            Pattern::VerticalStripes(p) => x.is_multiple_of(p),
            Pattern::Checks(p) => x.is_multiple_of(p) || y.is_multiple_of(p),
            Pattern::Dots(p) => x % p < 2 && y % p < 2,
        };
        if accent {
            self.upper_accent
        } else {
            self.upper
        }
    }
}

struct Canvas {
    rgb: RgbImage,
    labels: GrayImage,
}

impl Canvas {
    fn fill(&mut self, x0: i32, y0: i32, x1: i32, y1: i32, label: ClassId, color: impl Fn(u32, u32) -> [u8; 3]) {
        let (w, h) = (self.rgb.width() as i32, self.rgb.height() as i32);
        for y in y0.max(0)..y1.min(h) {
            for x in x0.max(0)..x1.min(w) {
                // local coordinates keep patterns attached to the garment
                let c = color((x - x0) as u32, (y - y0) as u32);
                self.rgb.put_pixel(x as u32, y as u32, Rgb(c));
                self.labels.put_pixel(x as u32, y as u32, Luma([label.lip_label()]));
            }
        }
    }

    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, label: ClassId, color: [u8; 3]) {
        let (w, h) = (self.rgb.width(), self.rgb.height());
        for y in 0..h {
            for x in 0..w {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    self.rgb.put_pixel(x, y, Rgb(color));
                    self.labels.put_pixel(x, y, Luma([label.lip_label()]));
                }
            }
        }
    }
}

/// Multiplies CIELAB lightness of every pixel by `factor`.
pub fn scale_lightness(rgb: &RgbImage, factor: f64) -> RgbImage {
    let mut cache = std::collections::HashMap::new();
    let mut out = rgb.clone();
    for p in out.pixels_mut() {
        p.0 = *cache.entry(p.0).or_insert_with(|| {
            let mut lab = rgb_to_lab_native(p.0);
            lab[0] = (lab[0] * factor).clamp(0.0, 100.0);
            lab_native_to_rgb(lab)
        });
    }
    out
}

/// Renders one view of an identity.
pub fn render(identity: &Identity, view: usize, spec: &DatasetSpec, seed: u64) -> (RgbImage, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);
    let sx = w as f64 / 64.0;
    let sy = h as f64 / 128.0;
    let bg_base: [u8; 3] = [rng.gen_range(70..180), rng.gen_range(70..180), rng.gen_range(70..180)];
    let mut canvas = Canvas {
        rgb: RgbImage::from_fn(w, h, |x, y| {
            let block = ((x / 8) * 31 + (y / 8) * 17) % 5;
            Rgb(scale(bg_base, 0.8 + 0.1 * block as f64))
        }),
        labels: GrayImage::new(w, h),
    };

    let dx = rng.gen_range(-3..=3);
    let dy = rng.gen_range(-2..=2);
    let px = |x: f64| (x * sx).round() as i32 + dx;
    let py = |y: f64| (y * sy).round() as i32 + dy;

    let id = identity;
    canvas.fill(px(20.0), py(72.0), px(44.0), py(108.0), ClassId::Pants, |_, _| id.pants);
    // gap between the legs
    canvas.fill(px(31.0), py(90.0), px(33.0), py(108.0), ClassId::Pants, |_, _| id.pants);
    canvas.fill(px(19.0), py(108.0), px(31.0), py(116.0), ClassId::LeftShoe, |_, _| id.shoes);
    canvas.fill(px(33.0), py(108.0), px(45.0), py(116.0), ClassId::RightShoe, |_, _| id.shoes);
    canvas.fill(px(11.0), py(34.0), px(18.0), py(70.0), ClassId::LeftArm, |_, _| id.skin);
    canvas.fill(px(46.0), py(34.0), px(53.0), py(70.0), ClassId::RightArm, |_, _| id.skin);
    canvas.fill(px(18.0), py(32.0), px(46.0), py(72.0), ClassId::UpperClothes, |x, y| {
        id.upper_at(x, y)
    });
    canvas.fill(px(26.0), py(16.0), px(38.0), py(32.0), ClassId::Face, |_, _| id.skin);
    let (hcx, hcy) = ((32.0 * sx) + dx as f64, (12.0 * sy) + dy as f64);
    canvas.ellipse(hcx, hcy, 8.5 * sx, 6.0 * sy, ClassId::Hair, id.hair);
    canvas.fill(px(26.0), py(16.0), px(38.0), py(32.0), ClassId::Face, |_, _| id.skin);
    if let Some(hat) = id.hat {
        canvas.fill(px(22.0), py(3.0), px(42.0), py(9.0), ClassId::Hat, |_, _| hat);
    }

    if view % 2 == 1 {
        image::imageops::flip_horizontal_in_place(&mut canvas.rgb);
        image::imageops::flip_horizontal_in_place(&mut canvas.labels);
    }

    // directional shading plus sensor noise
    let gradient: f64 = rng.gen_range(-0.12..0.12);
    for (x, _, p) in canvas.rgb.enumerate_pixels_mut() {
        let shade = 1.0 + gradient * (x as f64 / w as f64 - 0.5);
        for c in p.0.iter_mut() {
            let noise = if spec.noise > 0 { rng.gen_range(-spec.noise..=spec.noise) } else { 0 };
            *c = (*c as f64 * shade + noise as f64).round().clamp(0.0, 255.0) as u8;
        }
    }
    (canvas.rgb, canvas.labels.into_raw())
}

/// Market1501-style name: `<pid>_c<cam>s1_<frame>_00`.
pub fn image_name(person_id: i32, camera_id: u32, view: usize) -> String {
    format!("{person_id:04}_c{camera_id}s1_{:06}_00", view * 100 + 1)
}

impl Dataset {
    pub fn generate(spec: &DatasetSpec) -> Self {
        let identities: Vec<Identity> =
            (0..spec.identities).map(|i| Identity::generate(i, spec.identities)).collect();
        let mut images = Vec::with_capacity(spec.identities * spec.views);
        for (i, identity) in identities.iter().enumerate() {
            for view in 0..spec.views {
                let seed = spec.seed ^ ((i as u64) << 20) ^ (view as u64 * 0x9E37_79B9);
                let (mut rgb, labels) = render(identity, view, spec, seed);
                let mut lightness = 1.0;
                if let Some((lo, hi)) = spec.lightness_range {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1) ^ spec.lightness_seed.wrapping_mul(0x2545_F491_4F6C_DD1D));
                    lightness = rng.gen_range(lo..=hi);
                    rgb = scale_lightness(&rgb, lightness);
                }
                let camera_id = view as u32 + 1;
                let name = image_name(identity.person_id, camera_id, view);
                let person = PersonImage::from_labels(
                    name,
                    rgb,
                    &labels,
                    spec.width,
                    spec.height,
                    Path::new("<synthetic>"),
                )
                .expect("synthetic masks are valid");
                images.push(SyntheticImage {
                    person,
                    labels,
                    person_id: identity.person_id,
                    camera_id,
                    view,
                    lightness,
                });
            }
        }
        Self { identities, images }
    }

    /// Writes `images/<name>.png` and `masks/<name>.png` under `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let images = dir.join("images");
        let masks = dir.join("masks");
        std::fs::create_dir_all(&images)?;
        std::fs::create_dir_all(&masks)?;
        let to_io = |e: image::ImageError| std::io::Error::other(e.to_string());
        for img in &self.images {
            let name = &img.person.image_id;
            img.person.rgb.save(images.join(format!("{name}.png"))).map_err(to_io)?;
            GrayImage::from_raw(img.person.width(), img.person.height(), img.labels.clone())
                .expect("label buffer matches dimensions")
                .save(masks.join(format!("{name}.png")))
                .map_err(to_io)?;
        }
        Ok(())
    }
}

/// A record with random descriptors for a random subset of classes.
/// Roughly one class in ten is over-highlighted and some channels are empty.
pub fn random_record(rng: &mut impl Rng, image_id: impl Into<String>, extractor_version: &str) -> FeatureRecord {
    let mut classes = BTreeMap::new();
    for class in ClassId::ALL {
        if !rng.gen_bool(0.6) {
            continue;
        }
        let mut hist = |ch: Channel| {
            let mut h = BinarizedHistogram::empty(ch);
            if rng.gen_bool(0.9) {
                h.bits = rng.gen::<u64>() & rng.gen::<u64>();
                h.threshold = rng.gen_range(0.0..100.0);
            }
            h
        };
        let color = ColorFeatures {
            l: hist(Channel::L),
            a: hist(Channel::A),
            b: hist(Channel::B),
            mean: LabMean {
                l: rng.gen_range(0.0..=255.0),
                a: rng.gen_range(0.0..=255.0),
                b: rng.gen_range(0.0..=255.0),
            },
            over_highlighted: rng.gen_bool(0.1),
        };
        let lbp = |rng: &mut dyn rand::RngCore| {
            let mut counts = [0u32; LBP_BINS];
            if rng.gen_bool(0.9) {
                for &c in CANONICAL_CODES.iter() {
                    if rng.gen_bool(0.5) {
                        counts[c as usize] = rng.gen_range(0..50);
                    }
                }
            }
            LbpHistogram::from_counts(&counts)
        };
        let lbp_contour = lbp(rng);
        let lbp_inner = lbp(rng);
        classes.insert(
            class,
            ClassFeatures {
                n_pixels: rng.gen_range(16..5000),
                color,
                lbp_contour,
                lbp_inner,
            },
        );
    }
    FeatureRecord {
        image_id: image_id.into(),
        person_id: Some(rng.gen_range(1..1500)),
        camera_id: Some(rng.gen_range(1..7)),
        extractor_version: extractor_version.to_string(),
        source: None,
        classes,
    }
}
