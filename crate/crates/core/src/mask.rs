//! Image and parsing-mask ingestion.
//!
//! Masks carry raw LIP labels (0..=19). Semantically close garments are
//! merged so the parser is never asked to tell a coat from a shirt:
//! dress, coat and jumpsuit become upper clothes, skirt becomes pants, and
//! background is dropped. That leaves the fifteen [`ClassId`] values.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Regions smaller than this are dropped from per-class processing.
pub const MIN_CLASS_PIXELS: usize = 16;

/// Highest raw LIP label.
pub const MAX_LIP_LABEL: u8 = 19;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("{path}: failed to decode image: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Io {
        path: PathBuf,
        message: String,
    },
    #[error("{path}: unsupported mask format ({message}); expected 8-bit single-channel PNG")]
    UnsupportedMask { path: PathBuf, message: String },
    #[error("{path}: mask is {mask_w}x{mask_h} but image is {image_w}x{image_h}")]
    DimensionMismatch {
        path: PathBuf,
        image_w: u32,
        image_h: u32,
        mask_w: u32,
        mask_h: u32,
    },
    #[error("{path}: unknown label value {label} at ({x}, {y}); LIP labels are 0..=19")]
    UnknownLabel {
        path: PathBuf,
        label: u8,
        x: u32,
        y: u32,
    },
    #[error("{path}: no person pixels")]
    NoPersonPixels { path: PathBuf },
}

/// One of the fifteen merged parsing classes. Background is not representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassId {
    Hat,
    Hair,
    Glove,
    Sunglasses,
    UpperClothes,
    Socks,
    Pants,
    Scarf,
    Face,
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
    LeftShoe,
    RightShoe,
}

impl ClassId {
    pub const COUNT: usize = 15;

    pub const ALL: [ClassId; Self::COUNT] = [
        ClassId::Hat,
        ClassId::Hair,
        ClassId::Glove,
        ClassId::Sunglasses,
        ClassId::UpperClothes,
        ClassId::Socks,
        ClassId::Pants,
        ClassId::Scarf,
        ClassId::Face,
        ClassId::LeftArm,
        ClassId::RightArm,
        ClassId::LeftLeg,
        ClassId::RightLeg,
        ClassId::LeftShoe,
        ClassId::RightShoe,
    ];

    /// Dense index in `0..15`, following [`ClassId::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// The LIP label this merged class is stored under.
    pub fn lip_label(self) -> u8 {
        match self {
            ClassId::Hat => 1,
            ClassId::Hair => 2,
            ClassId::Glove => 3,
            ClassId::Sunglasses => 4,
            ClassId::UpperClothes => 5,
            ClassId::Socks => 8,
            ClassId::Pants => 9,
            ClassId::Scarf => 11,
            ClassId::Face => 13,
            ClassId::LeftArm => 14,
            ClassId::RightArm => 15,
            ClassId::LeftLeg => 16,
            ClassId::RightLeg => 17,
            ClassId::LeftShoe => 18,
            ClassId::RightShoe => 19,
        }
    }

    /// Maps a raw LIP label to its merged class. `Ok(None)` is background,
    /// `Err(label)` an out-of-range value.
    pub fn from_lip(label: u8) -> Result<Option<ClassId>, u8> {
        let class = match label {
            0 => return Ok(None),
            1 => ClassId::Hat,
            2 => ClassId::Hair,
            3 => ClassId::Glove,
            4 => ClassId::Sunglasses,
            // upper-clothes, dress, coat, jumpsuit
            5 | 6 | 7 | 10 => ClassId::UpperClothes,
            8 => ClassId::Socks,
            // pants, skirt
            9 | 12 => ClassId::Pants,
            11 => ClassId::Scarf,
            13 => ClassId::Face,
            14 => ClassId::LeftArm,
            15 => ClassId::RightArm,
            16 => ClassId::LeftLeg,
            17 => ClassId::RightLeg,
            18 => ClassId::LeftShoe,
            19 => ClassId::RightShoe,
            other => return Err(other),
        };
        Ok(Some(class))
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassId::Hat => "hat",
            ClassId::Hair => "hair",
            ClassId::Glove => "glove",
            ClassId::Sunglasses => "sunglasses",
            ClassId::UpperClothes => "upper_clothes",
            ClassId::Socks => "socks",
            ClassId::Pants => "pants",
            ClassId::Scarf => "scarf",
            ClassId::Face => "face",
            ClassId::LeftArm => "left_arm",
            ClassId::RightArm => "right_arm",
            ClassId::LeftLeg => "left_leg",
            ClassId::RightLeg => "right_leg",
            ClassId::LeftShoe => "left_shoe",
            ClassId::RightShoe => "right_shoe",
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown class '{0}'")]
pub struct UnknownClass(pub String);

impl FromStr for ClassId {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassId::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| UnknownClass(s.to_string()))
    }
}

/// A decoded person crop with its merged-class mask (row-major, `None` = background).
#[derive(Debug, Clone, PartialEq)]
pub struct PersonImage {
    pub image_id: String,
    pub rgb: RgbImage,
    pub mask: Vec<Option<ClassId>>,
}

impl PersonImage {
    /// Builds a person image from an RGB raster and raw LIP labels.
    pub fn from_labels(
        image_id: impl Into<String>,
        rgb: RgbImage,
        labels: &[u8],
        mask_w: u32,
        mask_h: u32,
        origin: &Path,
    ) -> Result<Self, MaskError> {
        let (w, h) = rgb.dimensions();
        if (w, h) != (mask_w, mask_h) || labels.len() != (w as usize) * (h as usize) {
            return Err(MaskError::DimensionMismatch {
                path: origin.to_path_buf(),
                image_w: w,
                image_h: h,
                mask_w,
                mask_h,
            });
        }
        let mut mask = Vec::with_capacity(labels.len());
        let mut any = false;
        for (i, &label) in labels.iter().enumerate() {
            let class = ClassId::from_lip(label).map_err(|label| MaskError::UnknownLabel {
                path: origin.to_path_buf(),
                label,
                x: (i % w as usize) as u32,
                y: (i / w as usize) as u32,
            })?;
            any |= class.is_some();
            mask.push(class);
        }
        if !any {
            return Err(MaskError::NoPersonPixels {
                path: origin.to_path_buf(),
            });
        }
        Ok(Self {
            image_id: image_id.into(),
            rgb,
            mask,
        })
    }

    pub fn width(&self) -> u32 {
        self.rgb.width()
    }

    pub fn height(&self) -> u32 {
        self.rgb.height()
    }

    pub fn class_at(&self, x: u32, y: u32) -> Option<ClassId> {
        self.mask[(y * self.width() + x) as usize]
    }

    /// The mask re-encoded as LIP labels. Feeding it back through
    /// [`PersonImage::from_labels`] reproduces the same mask.
    pub fn lip_labels(&self) -> Vec<u8> {
        self.mask
            .iter()
            .map(|c| c.map_or(0, ClassId::lip_label))
            .collect()
    }
}

/// Loads an image and its parsing mask. The image id is the image file stem.
pub fn load_person_image(image_path: &Path, mask_path: &Path) -> Result<PersonImage, MaskError> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|e| MaskError::Io {
            path: p.to_path_buf(),
            message: e.to_string(),
        })
    };
    let image_id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_person_image(image_id, &read(image_path)?, &read(mask_path)?, image_path, mask_path)
}

/// Decodes an encoded image and mask already held in memory. The paths are
/// only used in error messages.
pub fn decode_person_image(
    image_id: impl Into<String>,
    image_bytes: &[u8],
    mask_bytes: &[u8],
    image_origin: &Path,
    mask_origin: &Path,
) -> Result<PersonImage, MaskError> {
    let rgb = image::load_from_memory(image_bytes)
        .map_err(|e| MaskError::Decode {
            path: image_origin.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (labels, mw, mh) = decode_label_png(std::io::Cursor::new(mask_bytes), mask_origin)?;
    PersonImage::from_labels(image_id, rgb, &labels, mw, mh, mask_origin)
}

/// Reads raw label values from an 8-bit single-channel PNG.
///
/// Palette PNGs (the usual parser output) are read by index without palette
/// expansion, so the stored value is the label.
pub fn read_label_png(path: &Path) -> Result<(Vec<u8>, u32, u32), MaskError> {
    let file = File::open(path).map_err(|e| MaskError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    decode_label_png(BufReader::new(file), path)
}

pub fn decode_label_png<R: std::io::BufRead + std::io::Seek>(
    reader: R,
    path: &Path,
) -> Result<(Vec<u8>, u32, u32), MaskError> {
    let decode_err = |e: png::DecodingError| MaskError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let (color, depth) = reader.output_color_type();
    if !matches!(color, png::ColorType::Grayscale | png::ColorType::Indexed) {
        return Err(MaskError::UnsupportedMask {
            path: path.to_path_buf(),
            message: format!("color type {color:?}"),
        });
    }
    let bits = match depth {
        png::BitDepth::One => 1,
        png::BitDepth::Two => 2,
        png::BitDepth::Four => 4,
        png::BitDepth::Eight => 8,
        png::BitDepth::Sixteen => {
            return Err(MaskError::UnsupportedMask {
                path: path.to_path_buf(),
                message: "16-bit samples".into(),
            })
        }
    };
    let size = reader.output_buffer_size().ok_or_else(|| MaskError::Decode {
        path: path.to_path_buf(),
        message: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(decode_err)?;
    let (w, h) = (info.width, info.height);
    let mut labels = Vec::with_capacity((w as usize) * (h as usize));
    for row in buf.chunks(info.line_size).take(h as usize) {
        if bits == 8 {
            labels.extend_from_slice(&row[..w as usize]);
        } else {
            let per_byte = 8 / bits;
            let max = (1u8 << bits) - 1;
            for x in 0..w as usize {
                let byte = row[x / per_byte];
                let shift = 8 - bits * (x % per_byte + 1);
                labels.push((byte >> shift) & max);
            }
        }
    }
    Ok((labels, w, h))
}

/// Pixel coordinates `(x, y)` grouped by class, in raster order. Classes
/// below `min_pixels` are omitted.
pub fn class_pixel_sets_with(
    img: &PersonImage,
    min_pixels: usize,
) -> BTreeMap<ClassId, Vec<(u32, u32)>> {
    let w = img.width();
    let mut sets: BTreeMap<ClassId, Vec<(u32, u32)>> = BTreeMap::new();
    for (i, class) in img.mask.iter().enumerate() {
        if let Some(class) = class {
            let i = i as u32;
            sets.entry(*class).or_default().push((i % w, i / w));
        }
    }
    sets.retain(|_, px| px.len() >= min_pixels);
    sets
}

pub fn class_pixel_sets(img: &PersonImage) -> BTreeMap<ClassId, Vec<(u32, u32)>> {
    class_pixel_sets_with(img, MIN_CLASS_PIXELS)
}
