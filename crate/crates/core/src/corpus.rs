//! Procedurally generated desk-scale image corpus.
//!
//! Images are smooth two-color gradients with soft colored blobs, a low
//! frequency texture and mild noise, which gives them varied global color
//! statistics without any external dataset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image::ImageBuffer;
use crate::scalar::Real;

pub const DEFAULT_CORPUS_SIZE: usize = 24;
pub const DEFAULT_CORPUS_SEED: u64 = 20_240_117;

fn random_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

/// One image from its own seed.
pub fn generate_image<T: Real>(width: usize, height: usize, seed: u64) -> Result<ImageBuffer<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = random_color(&mut rng, 0.15, 0.85);
    let bottom = random_color(&mut rng, 0.1, 0.8);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let blobs: Vec<([f64; 3], f64, f64, f64, f64)> = (0..rng.random_range(2..5))
        .map(|_| {
            (
                random_color(&mut rng, 0.05, 0.95),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.08..0.3),
                rng.random_range(0.4..0.9),
            )
        })
        .collect();
    let freq = rng.random_range(2.0..7.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let texture = rng.random_range(0.02..0.08);
    let noise: Vec<f64> = (0..width * height).map(|_| rng.random_range(-0.02..0.02)).collect();

    ImageBuffer::from_fn_clamped(width, height, |x, y| {
        let u = (x as f64 + 0.5) / width as f64;
        let v = (y as f64 + 0.5) / height as f64;
        let g = ((u - 0.5) * dx + (v - 0.5) * dy + 0.5).clamp(0.0, 1.0);
        let mut rgb: [f64; 3] = std::array::from_fn(|c| top[c] * (1.0 - g) + bottom[c] * g);
        for (color, bx, by, radius, strength) in &blobs {
            let d2 = (u - bx).powi(2) + (v - by).powi(2);
            let a = strength * (-d2 / (2.0 * radius * radius)).exp();
            for c in 0..3 {
                rgb[c] = rgb[c] * (1.0 - a) + color[c] * a;
            }
        }
        let tex = texture * (freq * std::f64::consts::PI * (u + 0.6 * v) + phase).sin();
        let n = noise[y * width + x];
        rgb.map(|c| T::lit(c + tex + n))
    })
}

/// `count` images; image `i` uses seed `seed + i`.
pub fn generate<T: Real>(count: usize, width: usize, height: usize, seed: u64) -> Result<Vec<ImageBuffer<T>>> {
    (0..count as u64).map(|i| generate_image(width, height, seed.wrapping_add(i))).collect()
}

/// The bundled default corpus: 24 images of 48x48.
pub fn default_corpus<T: Real>() -> Result<Vec<ImageBuffer<T>>> {
    generate(DEFAULT_CORPUS_SIZE, 48, 48, DEFAULT_CORPUS_SEED)
}
