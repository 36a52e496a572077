//! Synthetic dataset generators.
//!
//! The classed generators produce learnable 10-class image distributions so
//! the whole pipeline runs without external data; two visual styles provide
//! a "foreign" distribution for the out-of-dataset experiments. The noise
//! generator produces the uniform-random inputs used by inference-stage
//! generalization checks.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, ImageShape, LabeledImageSet, Sample, Split};

/// Uniform-random images with dummy label 0; deterministic under `seed`.
pub fn make_synthetic_noise_set(n: usize, shape: ImageShape, seed: u64) -> LabeledImageSet {
    assert!(n >= 1, "need at least one sample");
    let samples: Vec<Sample> = (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xA0u64, i as u64));
            let mut pixels = Array3::<u8>::zeros((shape.c, shape.h, shape.w));
            for v in pixels.iter_mut() {
                *v = rng.random::<u8>();
            }
            Sample {
                id: format!("noise_{i:06}"),
                label: 0,
                pixels,
            }
        })
        .collect();
    LabeledImageSet {
        name: "synthetic-noise".into(),
        k: 2,
        split: Split::Test,
        shape,
        samples,
    }
}

/// Visual family of a synthetic classed dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthStyle {
    /// Gradient backgrounds with geometric foreground shapes.
    Shapes,
    /// Striped/tiled backgrounds with blob-like foregrounds.
    Textures,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    pub k: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub shape: ImageShape,
    pub style: SynthStyle,
    pub seed: u64,
}

impl SynthConfig {
    pub fn desk_default(name: impl Into<String>, seed: u64) -> Self {
        SynthConfig {
            name: name.into(),
            k: 10,
            n_train: 5000,
            n_test: 1000,
            shape: ImageShape::new(3, 32, 32),
            style: SynthStyle::Shapes,
            seed,
        }
    }
}

/// Generate a classed dataset; class identity is carried by the combination
/// of foreground pattern and palette, with per-sample pose/phase/noise.
pub fn make_synthetic_classed_dataset(config: &SynthConfig) -> Dataset {
    assert!(config.k >= 2 && config.k <= 10, "supported class counts: 2..=10");
    let gen_split = |split: Split, n: usize, salt: u64| -> LabeledImageSet {
        let samples: Vec<Sample> = (0..n)
            .map(|i| {
                let label = (i % config.k) as u32;
                let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, salt, i as u64));
                let pixels = render(config.style, label, config.shape, &mut rng);
                Sample {
                    id: format!("{split}_{i:06}"),
                    label,
                    pixels,
                }
            })
            .collect();
        LabeledImageSet {
            name: config.name.clone(),
            k: config.k,
            split,
            shape: config.shape,
            samples,
        }
    };
    Dataset {
        name: config.name.clone(),
        k: config.k,
        shape: config.shape,
        train: gen_split(Split::Train, config.n_train, 0xB1),
        test: gen_split(Split::Test, config.n_test, 0xC2),
    }
}

fn mix(seed: u64, salt: u64, idx: u64) -> u64 {
    // splitmix64 over the tuple
    let mut z = seed ^ salt.wrapping_mul(0x9E3779B97F4A7C15) ^ idx.wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

const PALETTES: [[[f64; 3]; 2]; 10] = [
    [[210.0, 50.0, 50.0], [35.0, 35.0, 120.0]],
    [[50.0, 190.0, 70.0], [120.0, 35.0, 110.0]],
    [[230.0, 190.0, 50.0], [25.0, 85.0, 135.0]],
    [[80.0, 205.0, 205.0], [135.0, 65.0, 25.0]],
    [[185.0, 110.0, 210.0], [55.0, 115.0, 55.0]],
    [[235.0, 130.0, 40.0], [40.0, 70.0, 90.0]],
    [[120.0, 220.0, 120.0], [90.0, 30.0, 60.0]],
    [[60.0, 110.0, 230.0], [130.0, 110.0, 40.0]],
    [[220.0, 80.0, 160.0], [35.0, 100.0, 90.0]],
    [[150.0, 150.0, 150.0], [20.0, 20.0, 30.0]],
];

fn render(style: SynthStyle, label: u32, shape: ImageShape, rng: &mut ChaCha8Rng) -> Array3<u8> {
    let (c, h, w) = (shape.c, shape.h, shape.w);
    let mut img = vec![0.0f64; c * h * w];
    let pattern = (label as usize) % 5;
    let palette = PALETTES[(label as usize) % PALETTES.len()];
    let jitter: f64 = rng.random_range(-15.0..15.0);
    let fg: Vec<f64> = palette[0].iter().map(|v| (v + jitter).clamp(0.0, 255.0)).collect();
    let bg: Vec<f64> = palette[1].iter().map(|v| (v - jitter).clamp(0.0, 255.0)).collect();

    // background
    let horizontal: bool = rng.random();
    let phase: f64 = rng.random_range(0.0..1.0);
    for y in 0..h {
        for x in 0..w {
            let t = if horizontal {
                x as f64 / (w - 1) as f64
            } else {
                y as f64 / (h - 1) as f64
            };
            let t = 0.35 + 0.55 * ((t + phase) % 1.0);
            for ci in 0..c {
                img[(ci * h + y) * w + x] = bg[ci % 3] * t;
            }
        }
    }

    // foreground pattern
    let cx = rng.random_range(0.30..0.70) * w as f64;
    let cy = rng.random_range(0.30..0.70) * h as f64;
    let r = rng.random_range(0.18..0.30) * w as f64;
    let stripe = rng.random_range(3..6) as f64;
    let mut put = |x: usize, y: usize, strength: f64, fgc: &[f64]| {
        for ci in 0..c {
            let p = &mut img[(ci * h + y) * w + x];
            *p = *p * (1.0 - strength) + fgc[ci % 3] * strength;
        }
    };
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let inside = match (style, pattern) {
                (SynthStyle::Shapes, 0) => dx * dx + dy * dy < r * r,
                (SynthStyle::Shapes, 1) => dx.abs() < r && dy.abs() < r * 0.8,
                (SynthStyle::Shapes, 2) => dx.abs() < r * 0.35 || dy.abs() < r * 0.35,
                (SynthStyle::Shapes, 3) => ((dx + dy) / stripe).rem_euclid(2.0) < 1.0 && dx.abs() + dy.abs() < 1.6 * r,
                (SynthStyle::Shapes, 4) => (dx / stripe).rem_euclid(2.0) < 1.0 && dx * dx + dy * dy < 1.8 * r * r,
                (SynthStyle::Textures, 0) => (dx * dx + dy * dy).sqrt().rem_euclid(stripe * 1.6) < stripe * 0.8 && dx * dx + dy * dy < 2.2 * r * r,
                (SynthStyle::Textures, 1) => dx.abs() + dy.abs() < r * 1.2,
                (SynthStyle::Textures, 2) => (dy / stripe).rem_euclid(2.0) < 1.0 && dx.abs() < 1.4 * r,
                (SynthStyle::Textures, 3) => ((x / 4 + y / 4) % 2 == 0) && dx * dx + dy * dy < 2.0 * r * r,
                (SynthStyle::Textures, 4) => dx * dx * 0.3 + dy * dy < r * r,
                _ => unreachable!(),
            };
            if inside {
                put(x, y, 0.9, &fg);
            }
        }
    }

    // pixel noise
    let mut out = Array3::<u8>::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let noise: f64 = rng.random_range(-8.0..8.0);
                let v = img[(ci * h + y) * w + x] + noise;
                out[[ci, y, x]] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}
