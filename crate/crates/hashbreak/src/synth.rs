//! Deterministic synthetic test images with smooth, natural-like statistics:
//! mixtures of low-frequency gratings normalized away from the value bounds.
//! Used for the bundled benchmark corpus and by the test suites; none of the
//! toolkit's algorithms depend on this module.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::imagecore::Image;

/// A smooth random field: a handful of low-frequency cosine gratings.
fn field(width: usize, height: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.random_range(0.3..1.0),           // amplitude
                rng.random_range(0.4..3.5),           // x cycles
                rng.random_range(0.4..3.5),           // y cycles
                rng.random_range(0.0..std::f64::consts::TAU), // phase
            )
        })
        .collect();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
            let s: f64 = waves
                .iter()
                .map(|(a, fx, fy, phase)| {
                    a * (std::f64::consts::TAU * (fx * u + fy * v) + phase).cos()
                })
                .sum();
            out.push(s);
        }
    }
    out
}

/// Affinely maps `v` onto `[lo, hi]`.
fn normalize(v: &mut [f64], lo: f64, hi: f64) {
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in v.iter() {
        min = min.min(x);
        max = max.max(x);
    }
    let span = if max > min { max - min } else { 1.0 };
    for x in v.iter_mut() {
        *x = lo + (hi - lo) * (*x - min) / span;
    }
}

/// One smooth random image with `channels` in {1, 3}.
pub fn smooth_image(
    width: usize,
    height: usize,
    channels: usize,
    rng: &mut ChaCha12Rng,
) -> Image {
    assert!(channels == 1 || channels == 3);
    let mut base = field(width, height, rng);
    normalize(&mut base, 0.08, 0.92);
    if channels == 1 {
        return Image::new(width, height, 1, base).expect("normalized into [0,1]");
    }
    let mut data = vec![0.0; width * height * 3];
    for c in 0..3 {
        let mut tint = field(width, height, rng);
        normalize(&mut tint, -0.08, 0.08);
        for (i, t) in tint.iter().enumerate() {
            data[i * 3 + c] = (base[i] + t).clamp(0.0, 1.0);
        }
    }
    Image::new(width, height, 3, data).expect("clamped into [0,1]")
}

/// A deterministic corpus of `count` smooth images.
pub fn corpus(count: usize, width: usize, height: usize, channels: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| smooth_image(width, height, channels, &mut rng))
        .collect()
}
