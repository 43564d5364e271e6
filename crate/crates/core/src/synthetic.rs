//! Procedural scenes and their darkened, colour-cast, noisy counterparts.
//! Used by tests, benchmarks and quick experiments without a real dataset.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Condition, TrainingPair};
use crate::error::Result;
use crate::image::{quantize, ImageBuffer};
use crate::rng::RandomState;

/// Gamma applied to darken the reference.
pub const DARKEN_GAMMA: f64 = 2.5;
/// Per-channel multiplier giving the blue cast.
pub const CAST: [f64; 3] = [0.8, 0.9, 1.0];
pub const CAST_OFFSET: [f64; 3] = [0.0, 0.01, 0.05];
pub const NOISE_SIGMA: f64 = 0.02;

fn to_8bit(v: f64) -> f64 {
    quantize(v) as f64 / 255.0
}

struct Rect {
    top: f64,
    left: f64,
    bottom: f64,
    right: f64,
    color: [f64; 3],
}

struct Disc {
    cy: f64,
    cx: f64,
    r: f64,
    color: [f64; 3],
}

fn random_color(rng: &mut RandomState, lo: f64, hi: f64) -> [f64; 3] {
    [
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    ]
}

/// A street-like scene: sky gradient, ground plane with stripes, blocks and
/// a few discs, with fine periodic texture on the blocks.
pub fn reference_scene(size: usize, rng: &mut RandomState) -> ImageBuffer {
    let s = size as f64;
    let horizon = rng.random_range(0.3..0.55) * s;
    let sky_top = random_color(rng, 0.55, 0.75);
    let sky_low = random_color(rng, 0.8, 0.95);
    let ground = random_color(rng, 0.3, 0.5);
    let stripe_period = rng.random_range(6.0..14.0);
    let blocks: Vec<Rect> = (0..rng.random_range(3..6))
        .map(|_| {
            let w = rng.random_range(0.1..0.3) * s;
            let h = rng.random_range(0.2..0.5) * s;
            let left = rng.random_range(0.0..(s - w));
            let bottom = horizon + rng.random_range(0.0..0.2) * s;
            Rect {
                top: (bottom - h).max(0.0),
                left,
                bottom,
                right: left + w,
                color: random_color(rng, 0.2, 0.9),
            }
        })
        .collect();
    let discs: Vec<Disc> = (0..rng.random_range(1..4))
        .map(|_| Disc {
            cy: rng.random_range(0.1..0.9) * s,
            cx: rng.random_range(0.1..0.9) * s,
            r: rng.random_range(0.04..0.12) * s,
            color: random_color(rng, 0.5, 0.95),
        })
        .collect();
    let texture_period = rng.random_range(3.0..6.0);

    ImageBuffer::from_fn(size, size, 3, |y, x, c| {
        let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
        let mut v = if fy < horizon {
            let t = fy / horizon;
            sky_top[c] * (1.0 - t) + sky_low[c] * t
        } else {
            let depth = (fy - horizon) / (s - horizon).max(1.0);
            let stripe = if ((fx + depth * 20.0) / stripe_period).floor() as i64 % 2 == 0 { 0.08 } else { 0.0 };
            ground[c] * (0.8 + 0.4 * depth) + stripe
        };
        for b in &blocks {
            if fy >= b.top && fy < b.bottom && fx >= b.left && fx < b.right {
                let win = ((fy / texture_period).floor() + (fx / texture_period).floor()) as i64 % 2 == 0;
                v = b.color[c] * if win { 1.0 } else { 0.85 };
            }
        }
        for d in &discs {
            if (fy - d.cy).powi(2) + (fx - d.cx).powi(2) < d.r * d.r {
                v = d.color[c];
            }
        }
        v.clamp(0.05, 0.97)
    })
    .expect("values are clamped into range")
}

/// Darkens with gamma, applies the blue cast and adds Gaussian noise.
pub fn degrade(reference: &ImageBuffer, rng: &mut RandomState) -> ImageBuffer {
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let c = reference.channels();
    let mut data: Vec<f64> = reference
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = i % c;
            let dark = v.powf(DARKEN_GAMMA) * CAST[ch] + CAST_OFFSET[ch];
            (dark + noise.sample(rng)).clamp(0.0, 1.0)
        })
        .collect();
    // Keep the pair representable as 8-bit files.
    data.iter_mut().for_each(|v| *v = to_8bit(*v));
    ImageBuffer::new(reference.height(), reference.width(), c, data).expect("clamped")
}

pub fn synthetic_pair(size: usize, seed: u64, index: usize) -> TrainingPair {
    let mut rng = RandomState::with_stream(seed, 1000 + index as u64);
    let reference = reference_scene(size, &mut rng);
    let target = ImageBuffer::new(
        size,
        size,
        3,
        reference.data().iter().map(|&v| to_8bit(v)).collect(),
    )
    .expect("in range");
    let source = degrade(&target, &mut rng);
    TrainingPair {
        name: format!("synth_{index:03}"),
        condition: Condition::Night,
        source,
        target,
    }
}

pub fn synthetic_pairs(n: usize, size: usize, seed: u64) -> Vec<TrainingPair> {
    (0..n).map(|i| synthetic_pair(size, seed, i)).collect()
}

/// Writes `n` pairs as `root/night/{source,reference}/synth_XXX.png`.
pub fn write_dataset(root: impl AsRef<Path>, n: usize, size: usize, seed: u64) -> Result<Vec<TrainingPair>> {
    let base = root.as_ref().join(Condition::Night.to_string());
    let src_dir = base.join("source");
    let ref_dir = base.join("reference");
    fs::create_dir_all(&src_dir)?;
    fs::create_dir_all(&ref_dir)?;
    let pairs = synthetic_pairs(n, size, seed);
    for p in &pairs {
        p.source.save(src_dir.join(format!("{}.png", p.name)))?;
        p.target.save(ref_dir.join(format!("{}.png", p.name)))?;
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{psnr, ssim};

    #[test]
    fn deterministic_per_seed_and_index() {
        let a = synthetic_pair(64, 5, 2);
        let b = synthetic_pair(64, 5, 2);
        assert_eq!(a.source, b.source);
        assert_eq!(a.target, b.target);
        assert_ne!(synthetic_pair(64, 5, 3).target, a.target);
    }

    #[test]
    fn source_is_darker_and_degraded() {
        for p in synthetic_pairs(4, 128, 0) {
            let mean = |i: &ImageBuffer| i.data().iter().sum::<f64>() / i.data().len() as f64;
            assert!(mean(&p.source) < mean(&p.target) - 0.1);
            assert!(ssim(&p.source, &p.target).unwrap() < 0.9);
            assert!(psnr(&p.source, &p.target).unwrap() < 20.0);
        }
    }

    #[test]
    fn written_dataset_scans_back() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = write_dataset(dir.path(), 3, 64, 1).unwrap();
        let manifest = crate::dataset::scan(dir.path()).unwrap();
        let loaded = crate::dataset::load_pairs(&manifest, 0).unwrap();
        assert_eq!(loaded.len(), 3);
        for (a, b) in pairs.iter().zip(&loaded) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.source, b.source);
            assert_eq!(a.target, b.target);
        }
    }
}
