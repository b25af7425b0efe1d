//! The five perceptual hash pipelines and their shared primitive transforms:
//! grayscale conversion, resizing, box blurring, DCT feature extraction, and
//! mean/median binarization.
//!
//! Pipelines (all accept any image size and channel count):
//! - aHash: grayscale, resize 8x8, bit = pixel > mean.
//! - dHash: grayscale, resize 9x8, bit = column difference > 0, row-major.
//! - pHash: grayscale, 7x7 box blur, resize 32x32, DCT block (a=1, b=8),
//!   bit = coefficient > median.
//! - pHash-continuous: the pHash pipeline stopped before binarization.
//! - PDQ-lite: grayscale, resize 64x64, DCT block (a=1, b=16), median
//!   binarization to 256 bits. Follows the published outline of PDQ only; it
//!   is deliberately not bit-compatible with the reference implementation.

use thiserror::Error;

use crate::dctlab::DctMap;
use crate::imagecore::{Hash, HashAlgorithm, Image};
use crate::resample::{box_blur_plane, resize_plane, Plane};

#[derive(Debug, Error)]
pub enum HashkitError {
    #[error("box blur kernel must be odd, got {0}")]
    EvenKernel(usize),
    #[error("expected a {expected} single-channel image, got {got}")]
    ShapeMismatch { expected: String, got: String },
}

/// DCT-block parameters (0-based kept range `a..=b` on a `k x k` input) for
/// the DCT-based pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DctParams {
    pub a: usize,
    pub b: usize,
    pub k: usize,
}

/// Fixed per-algorithm pipeline parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineParams {
    /// Resize target (width, height) ahead of feature extraction.
    pub resize: (usize, usize),
    /// Box-blur kernel applied before resizing, 1 = none.
    pub blur_kernel: usize,
    /// DCT block, `None` for the spatial-domain pipelines.
    pub dct: Option<DctParams>,
}

/// Pipeline parameters for `algo`.
pub fn pipeline_params(algo: HashAlgorithm) -> PipelineParams {
    match algo {
        HashAlgorithm::AHash => PipelineParams {
            resize: (8, 8),
            blur_kernel: 1,
            dct: None,
        },
        HashAlgorithm::DHash => PipelineParams {
            resize: (9, 8),
            blur_kernel: 1,
            dct: None,
        },
        HashAlgorithm::PHash | HashAlgorithm::PHashContinuous => PipelineParams {
            resize: (32, 32),
            blur_kernel: 7,
            dct: Some(DctParams { a: 1, b: 8, k: 32 }),
        },
        HashAlgorithm::PdqLite => PipelineParams {
            resize: (64, 64),
            blur_kernel: 1,
            dct: Some(DctParams { a: 1, b: 16, k: 64 }),
        },
    }
}

/// BT.601 luma conversion; single-channel input is returned unchanged.
pub fn grayscale(img: &Image) -> Image {
    if img.channels() == 1 {
        return img.clone();
    }
    let mut data = Vec::with_capacity(img.width() * img.height());
    for px in img.data().chunks_exact(3) {
        let y = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        data.push(y.clamp(0.0, 1.0));
    }
    Image::new(img.width(), img.height(), 1, data).expect("luma stays in [0,1]")
}

/// Resizes to `(w, h)`: area averaging when every output pixel covers at
/// least 2x2 input pixels, bilinear with half-pixel centers otherwise.
pub fn resize(img: &Image, w: usize, h: usize) -> Image {
    assert!(w >= 1 && h >= 1);
    let ch = img.channels();
    let mut out = vec![0.0; w * h * ch];
    for c in 0..ch {
        let plane_data: Vec<f64> = img.data().iter().skip(c).step_by(ch).copied().collect();
        let plane = Plane::new(img.width(), img.height(), plane_data);
        let resized = resize_plane(&plane, w, h);
        for (i, v) in resized.data.iter().enumerate() {
            out[i * ch + c] = v.clamp(0.0, 1.0);
        }
    }
    Image::new(w, h, ch, out).expect("resize output stays in [0,1]")
}

/// Mean filter with an odd `kernel` and clamp-to-edge borders. Kernel 1 is
/// the identity; the output stays within the input's value range.
pub fn box_blur(img: &Image, kernel: usize) -> Result<Image, HashkitError> {
    if kernel % 2 == 0 || kernel == 0 {
        return Err(HashkitError::EvenKernel(kernel));
    }
    if kernel == 1 {
        return Ok(img.clone());
    }
    let ch = img.channels();
    let mut out = vec![0.0; img.len()];
    for c in 0..ch {
        let plane_data: Vec<f64> = img.data().iter().skip(c).step_by(ch).copied().collect();
        let plane = Plane::new(img.width(), img.height(), plane_data);
        let blurred = box_blur_plane(&plane, kernel);
        for (i, v) in blurred.data.iter().enumerate() {
            out[i * ch + c] = v.clamp(0.0, 1.0);
        }
    }
    Ok(Image::new(img.width(), img.height(), ch, out).expect("blur output stays in [0,1]"))
}

/// DCT feature extraction for a square single-channel image: computes
/// `M X M^T`, keeps 0-based rows and columns `a..=b`, and flattens the block
/// row-major. Equal to applying the flattened linear map of
/// [`crate::dctlab::DctMap`] to the vectorized image.
pub fn dct_features(img: &Image, a: usize, b: usize) -> Result<Vec<f64>, HashkitError> {
    let k = img.width();
    if img.channels() != 1 || img.height() != k {
        return Err(HashkitError::ShapeMismatch {
            expected: format!("{k}x{k}"),
            got: format!(
                "{}x{}x{}",
                img.width(),
                img.height(),
                img.channels()
            ),
        });
    }
    let map = DctMap::build(k, a, b).map_err(|_| HashkitError::ShapeMismatch {
        expected: format!("kept range within 0..{k}"),
        got: format!("a={a}, b={b}"),
    })?;
    Ok(map.apply_a(img.data()).expect("shape checked above"))
}

/// Median as the mean of the two middle order statistics for even counts.
fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
    let n = sorted.len();
    if n % 2 == 0 {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    } else {
        sorted[n / 2]
    }
}

/// Hashes `img` with `algo`. Deterministic: equal inputs give bitwise-equal
/// hashes. Binarization uses a strict `>` against the mean/median, so ties
/// produce 0-bits.
pub fn hash(img: &Image, algo: HashAlgorithm) -> Hash {
    let params = pipeline_params(algo);
    let gray = grayscale(img);
    let blurred = box_blur(&gray, params.blur_kernel).expect("kernel is odd");
    let small = resize(&blurred, params.resize.0, params.resize.1);

    match algo {
        HashAlgorithm::AHash => {
            let mean = small.data().iter().sum::<f64>() / small.len() as f64;
            let bits: Vec<bool> = small.data().iter().map(|&v| v > mean).collect();
            Hash::from_bits(algo, &bits).expect("64 bits")
        }
        HashAlgorithm::DHash => {
            // Differences between consecutive columns within each row.
            let mut bits = Vec::with_capacity(64);
            for r in 0..8 {
                for c in 0..8 {
                    bits.push(small.get(c + 1, r, 0) - small.get(c, r, 0) > 0.0);
                }
            }
            Hash::from_bits(algo, &bits).expect("64 bits")
        }
        HashAlgorithm::PHash | HashAlgorithm::PdqLite => {
            let dct = params.dct.expect("dct pipeline");
            let features = dct_features(&small, dct.a, dct.b).expect("square resize output");
            let med = median(&features);
            let bits: Vec<bool> = features.iter().map(|&v| v > med).collect();
            Hash::from_bits(algo, &bits).expect("c^2 bits")
        }
        HashAlgorithm::PHashContinuous => {
            let dct = params.dct.expect("dct pipeline");
            let features = dct_features(&small, dct.a, dct.b).expect("square resize output");
            Hash::from_reals(algo, features).expect("64 reals")
        }
    }
}
