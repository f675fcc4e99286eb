//! Regenerates `data/swatches/*.png` and `data/texture_presets.json`.
//!
//! cargo run -p parseid-core --example build_presets

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use parseid_core::query::{preset_from_swatch, TexturePresetTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIZE: u32 = 48;

fn swatch(name: &str) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    match name {
        // flat cloth with faint sensor noise
        "smooth" => RgbImage::from_fn(SIZE, SIZE, |_, _| {
            let v = 128 + rng.gen_range(-3i32..=3);
            Rgb([v as u8; 3])
        }),
        // alternating 2-pixel knit rows with a diagonal offset
        "fine_knit" => RgbImage::from_fn(SIZE, SIZE, |x, y| {
            let on = ((x + (y / 2) % 2) / 2 + y / 2) % 2 == 0;
            let v = if on { 150 } else { 100 } + rng.gen_range(-4i32..=4);
            Rgb([v as u8; 3])
        }),
        // 6-pixel blocks of random intensity
        "coarse" => {
            let blocks: Vec<i32> = (0..(SIZE / 6 + 1).pow(2)).map(|_| rng.gen_range(60..200)).collect();
            RgbImage::from_fn(SIZE, SIZE, |x, y| {
                let v = blocks[((y / 6) * (SIZE / 6 + 1) + x / 6) as usize] + rng.gen_range(-2i32..=2);
                Rgb([v as u8; 3])
            })
        }
        _ => unreachable!(),
    }
}

fn main() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    std::fs::create_dir_all(data.join("swatches")).unwrap();
    let mut presets = BTreeMap::new();
    for name in ["smooth", "fine_knit", "coarse"] {
        let path = data.join("swatches").join(format!("{name}.png"));
        swatch(name).save(&path).unwrap();
        // measure the file as stored so the test can recompute it
        let stored = image::open(&path).unwrap().to_rgb8();
        presets.insert(name.to_string(), preset_from_swatch(&stored));
    }
    let table = TexturePresetTable { presets };
    let json = serde_json::to_string_pretty(&table).unwrap();
    std::fs::write(data.join("texture_presets.json"), json + "\n").unwrap();
    println!("wrote {} presets", table.presets.len());
}
