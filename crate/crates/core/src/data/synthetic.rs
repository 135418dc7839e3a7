//! A generated 10-class, 32x32 RGB corpus in cifar-binary layout.
//!
//! Each image shows one of five shapes on a shaded background. The shape
//! fixes the coarse class; a fine surface texture, 1-pixel stripes or a
//! 1-pixel checkerboard, splits each shape into two classes. The texture sits
//! at the sampling limit of the 32x32 grid, so reduced-resolution copies keep
//! the shape but only a distorted trace of the texture.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::dataset::{encode_cifar, CIFAR_SIDE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub train: usize,
    pub test: usize,
    pub seed: u64,
    /// Peak deviation of the surface texture.
    pub texture: f32,
    /// Peak deviation of per-pixel uniform noise.
    pub noise: f32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train: 10_000,
            test: 2_000,
            seed: 0,
            texture: 0.18,
            noise: 0.08,
        }
    }
}

fn inside(shape: usize, dx: f32, dy: f32, r: f32) -> bool {
    match shape {
        0 => dx * dx + dy * dy <= r * r,
        1 => dx.abs() <= 0.8 * r && dy.abs() <= 0.8 * r,
        2 => dy <= 0.7 * r && dy >= -r + 1.7 * dx.abs(),
        3 => (dx.abs() <= 0.3 * r && dy.abs() <= r) || (dy.abs() <= 0.3 * r && dx.abs() <= r),
        _ => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
        }
    }
}

/// One `(label, 3x32x32 bytes)` sample.
pub fn sample(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) -> (u8, Vec<u8>) {
    let label: u8 = rng.random_range(0..10);
    let (shape, fine) = ((label / 2) as usize, label % 2);
    let side = CIFAR_SIDE;
    let bg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
    let mut fg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    let contrast: f32 = bg.iter().zip(&fg).map(|(a, b)| (a - b).abs()).sum();
    if contrast < 0.6 {
        for (f, b) in fg.iter_mut().zip(&bg) {
            *f = if *b > 0.5 { *b - 0.35 } else { *b + 0.35 };
        }
    }
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (gx, gy) = (0.15 * angle.cos(), 0.15 * angle.sin());
    let cx = rng.random_range(11.0..21.0f32);
    let cy = rng.random_range(11.0..21.0f32);
    let r = rng.random_range(7.0..11.0f32);
    let vertical = rng.random_bool(0.5);
    let phase = rng.random_range(0..2usize);
    let mut px = vec![0u8; 3 * side * side];
    for y in 0..side {
        for x in 0..side {
            let (dx, dy) = (x as f32 - cx, y as f32 - cy);
            let on = inside(shape, dx, dy, r);
            let tex = if fine == 0 {
                let t = if vertical { x } else { y };
                if (t + phase) % 2 == 0 { 1.0 } else { -1.0 }
            } else if (x + y + phase) % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            let shade = gx * (x as f32 / side as f32 - 0.5) + gy * (y as f32 / side as f32 - 0.5);
            for c in 0..3 {
                let base = if on { fg[c] + cfg.texture * tex } else { bg[c] + shade };
                let v = base + rng.random_range(-cfg.noise..=cfg.noise);
                px[c * side * side + y * side + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    (label, px)
}

/// `n` samples from a stream seeded with `seed`.
pub fn generate(n: usize, seed: u64, cfg: &SyntheticConfig) -> Vec<(u8, Vec<u8>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample(&mut rng, cfg)).collect()
}

/// Writes `data_batch_1.bin` and `test_batch.bin` into `dir`.
pub fn write_synthetic_cifar(dir: &Path, cfg: &SyntheticConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let parts = [
        ("data_batch_1.bin", cfg.train, cfg.seed.wrapping_mul(2)),
        ("test_batch.bin", cfg.test, cfg.seed.wrapping_mul(2).wrapping_add(1)),
    ];
    for (name, n, seed) in parts {
        let path = dir.join(name);
        std::fs::write(&path, encode_cifar(&generate(n, seed, cfg)))
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok(())
}
