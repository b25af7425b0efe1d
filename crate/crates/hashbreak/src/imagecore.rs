//! Core image and hash value types shared by every other module: real-valued
//! images in `[0,1]`, additive perturbations, tagged hash payloads, norms,
//! distances, and PNG/PNM file I/O.

use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Errors raised by image/hash primitives.
#[derive(Debug, Error)]
pub enum ImageError {
    #[error("hash algorithms differ: {0} vs {1}")]
    AlgorithmMismatch(HashAlgorithm, HashAlgorithm),
    #[error("empty input")]
    EmptyInput,
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("invalid image data: {0}")]
    InvalidData(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// The five hash pipelines this toolkit implements.
///
/// `PdqLite` follows the published overview of PDQ (grayscale, 64x64 resize,
/// DCT with a 16x16 low-frequency block, median binarization) and is not
/// bit-compatible with the reference implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HashAlgorithm {
    AHash,
    DHash,
    PHash,
    PHashContinuous,
    PdqLite,
}

impl HashAlgorithm {
    pub const ALL: [HashAlgorithm; 5] = [
        HashAlgorithm::AHash,
        HashAlgorithm::DHash,
        HashAlgorithm::PHash,
        HashAlgorithm::PHashContinuous,
        HashAlgorithm::PdqLite,
    ];

    /// Number of bits for bit-valued outputs, `None` for continuous ones.
    pub fn bit_len(self) -> Option<usize> {
        match self {
            HashAlgorithm::AHash | HashAlgorithm::DHash | HashAlgorithm::PHash => Some(64),
            HashAlgorithm::PdqLite => Some(256),
            HashAlgorithm::PHashContinuous => None,
        }
    }

    /// Length of the real-valued output, `None` for bit-valued ones.
    pub fn real_len(self) -> Option<usize> {
        match self {
            HashAlgorithm::PHashContinuous => Some(64),
            _ => None,
        }
    }

    /// The distance metric paired with this algorithm's payload kind.
    pub fn metric(self) -> DistanceMetric {
        match self {
            HashAlgorithm::PHashContinuous => DistanceMetric::Euclidean,
            _ => DistanceMetric::Hamming,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HashAlgorithm::AHash => "ahash",
            HashAlgorithm::DHash => "dhash",
            HashAlgorithm::PHash => "phash",
            HashAlgorithm::PHashContinuous => "phash-continuous",
            HashAlgorithm::PdqLite => "pdqlite",
        }
    }

    pub fn parse(s: &str) -> Option<HashAlgorithm> {
        match s.to_ascii_lowercase().as_str() {
            "ahash" => Some(HashAlgorithm::AHash),
            "dhash" => Some(HashAlgorithm::DHash),
            "phash" => Some(HashAlgorithm::PHash),
            "phash-continuous" | "phashc" => Some(HashAlgorithm::PHashContinuous),
            "pdqlite" | "pdq" => Some(HashAlgorithm::PdqLite),
            _ => None,
        }
    }
}

impl fmt::Display for HashAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How two hash payloads are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    /// Count of differing bits; applies only to bit payloads.
    Hamming,
    /// L2 distance; applies only to real payloads.
    Euclidean,
}

impl DistanceMetric {
    pub fn name(self) -> &'static str {
        match self {
            DistanceMetric::Hamming => "hamming",
            DistanceMetric::Euclidean => "euclidean",
        }
    }

    pub fn parse(s: &str) -> Option<DistanceMetric> {
        match s.to_ascii_lowercase().as_str() {
            "hamming" => Some(DistanceMetric::Hamming),
            "euclidean" => Some(DistanceMetric::Euclidean),
            _ => None,
        }
    }
}

/// Hash payload: a bit vector or a real vector.
///
/// Bits are stored packed MSB-first: bit `i` of the hash lives at bit
/// `7 - i % 8` of byte `i / 8`, matching the hex serialization.
#[derive(Debug, Clone, PartialEq)]
pub enum HashPayload {
    Bits { len: usize, bytes: Vec<u8> },
    Reals(Vec<f64>),
}

/// A perceptual hash tagged by the algorithm that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Hash {
    algorithm: HashAlgorithm,
    payload: HashPayload,
}

impl Hash {
    /// Packs `bits` (one bool per hash bit, index 0 first) for a bit-valued
    /// algorithm.
    pub fn from_bits(algorithm: HashAlgorithm, bits: &[bool]) -> Result<Hash, ImageError> {
        let expected = algorithm.bit_len().ok_or_else(|| {
            ImageError::InvalidData(format!("{algorithm} does not produce a bit hash"))
        })?;
        if bits.len() != expected {
            return Err(ImageError::ShapeMismatch {
                expected: format!("{expected} bits"),
                got: format!("{} bits", bits.len()),
            });
        }
        let mut bytes = vec![0u8; expected / 8];
        for (i, &b) in bits.iter().enumerate() {
            if b {
                bytes[i / 8] |= 1 << (7 - i % 8);
            }
        }
        Ok(Hash {
            algorithm,
            payload: HashPayload::Bits {
                len: expected,
                bytes,
            },
        })
    }

    pub fn from_reals(algorithm: HashAlgorithm, values: Vec<f64>) -> Result<Hash, ImageError> {
        let expected = algorithm.real_len().ok_or_else(|| {
            ImageError::InvalidData(format!("{algorithm} does not produce a real hash"))
        })?;
        if values.len() != expected {
            return Err(ImageError::ShapeMismatch {
                expected: format!("{expected} reals"),
                got: format!("{} reals", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ImageError::InvalidData("non-finite hash value".into()));
        }
        Ok(Hash {
            algorithm,
            payload: HashPayload::Reals(values),
        })
    }

    pub fn algorithm(&self) -> HashAlgorithm {
        self.algorithm
    }

    pub fn payload(&self) -> &HashPayload {
        &self.payload
    }

    pub fn bit(&self, i: usize) -> Option<bool> {
        match &self.payload {
            HashPayload::Bits { len, bytes } if i < *len => {
                Some(bytes[i / 8] >> (7 - i % 8) & 1 == 1)
            }
            _ => None,
        }
    }

    /// Serialized payload: lowercase hex for bit hashes (MSB-first), a
    /// comma-separated list of 17-significant-digit floats for real ones.
    pub fn payload_string(&self) -> String {
        match &self.payload {
            HashPayload::Bits { bytes, .. } => {
                bytes.iter().map(|b| format!("{b:02x}")).collect()
            }
            HashPayload::Reals(values) => values
                .iter()
                .map(|v| format_f64(*v))
                .collect::<Vec<_>>()
                .join(","),
        }
    }

    /// Parses the output of [`Hash::payload_string`] back for `algorithm`.
    pub fn parse_payload(algorithm: HashAlgorithm, s: &str) -> Result<Hash, ImageError> {
        if let Some(bit_len) = algorithm.bit_len() {
            let expected_chars = bit_len / 4;
            if s.len() != expected_chars || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(ImageError::InvalidData(format!(
                    "expected {expected_chars} hex chars for {algorithm}, got {s:?}"
                )));
            }
            let bytes = (0..s.len() / 2)
                .map(|i| u8::from_str_radix(&s[2 * i..2 * i + 2], 16))
                .collect::<Result<Vec<u8>, _>>()
                .map_err(|e| ImageError::InvalidData(e.to_string()))?;
            Ok(Hash {
                algorithm,
                payload: HashPayload::Bits {
                    len: bit_len,
                    bytes,
                },
            })
        } else {
            let values = s
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| ImageError::InvalidData(e.to_string()))?;
            Hash::from_reals(algorithm, values)
        }
    }
}

impl fmt::Display for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.algorithm, self.payload_string())
    }
}

/// Serializes a float with 17 significant digits; round-trips f64 exactly.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A real-valued image: `channels` interleaved samples per pixel, row-major,
/// every element finite and in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Image, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidData("zero-sized image".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::InvalidData(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(ImageError::ShapeMismatch {
                expected: format!("{} elements", width * height * channels),
                got: format!("{} elements", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(ImageError::InvalidData(
                "pixel values must be finite and within [0,1]".into(),
            ));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image from raw samples, clamping each into `[0,1]`.
    /// Non-finite values are rejected.
    pub fn from_clamped(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Image, ImageError> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ImageError::InvalidData("non-finite pixel value".into()));
        }
        let clamped = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Image::new(width, height, channels, clamped)
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Image {
        Image::new(width, height, channels, vec![value; width * height * channels])
            .expect("constant image in [0,1]")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Total element count `width * height * channels`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Sample at pixel `(x, y)`, channel `ch`.
    pub fn get(&self, x: usize, y: usize, ch: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + ch]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

/// An additive perturbation with the shape of its target image.
///
/// Constructed through [`clip_perturbation`] (or [`Perturbation::zero`]) so
/// that `X + delta` always stays inside `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Perturbation {
    pub fn zero(width: usize, height: usize, channels: usize) -> Perturbation {
        Perturbation {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `X + delta` as a valid image.
    pub fn apply(&self, image: &Image) -> Result<Image, ImageError> {
        if image.width != self.width
            || image.height != self.height
            || image.channels != self.channels
        {
            return Err(ImageError::ShapeMismatch {
                expected: format!("{}x{}x{}", self.width, self.height, self.channels),
                got: format!("{}x{}x{}", image.width, image.height, image.channels),
            });
        }
        let data = image
            .data
            .iter()
            .zip(&self.data)
            .map(|(x, d)| x + d)
            .collect();
        Image::from_clamped(self.width, self.height, self.channels, data)
    }
}

/// Distance between two hashes of the same algorithm.
///
/// Hamming counts differing bits (returned as an integer-valued real so both
/// metrics share one numeric type); Euclidean is the L2 distance.
pub fn distance(a: &Hash, b: &Hash) -> Result<f64, ImageError> {
    if a.algorithm != b.algorithm {
        return Err(ImageError::AlgorithmMismatch(a.algorithm, b.algorithm));
    }
    match (&a.payload, &b.payload) {
        (
            HashPayload::Bits { bytes: ba, len },
            HashPayload::Bits {
                bytes: bb,
                len: len_b,
            },
        ) => {
            debug_assert_eq!(len, len_b);
            let bits = ba
                .iter()
                .zip(bb)
                .map(|(x, y)| (x ^ y).count_ones())
                .sum::<u32>();
            Ok(f64::from(bits))
        }
        (HashPayload::Reals(va), HashPayload::Reals(vb)) => {
            debug_assert_eq!(va.len(), vb.len());
            Ok(va
                .iter()
                .zip(vb)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt())
        }
        _ => unreachable!("payload kind is fixed by the algorithm"),
    }
}

/// Norm order for perturbation budgets: 1, 2 or infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NormOrder {
    L1,
    L2,
    LInf,
}

impl NormOrder {
    /// `n^(1/p)`: the factor converting a per-element bound into a norm bound.
    pub fn root_scale(self, n: usize) -> f64 {
        match self {
            NormOrder::L1 => n as f64,
            NormOrder::L2 => (n as f64).sqrt(),
            NormOrder::LInf => 1.0,
        }
    }

    pub fn parse(s: &str) -> Option<NormOrder> {
        match s {
            "1" => Some(NormOrder::L1),
            "2" => Some(NormOrder::L2),
            "inf" | "oo" => Some(NormOrder::LInf),
            _ => None,
        }
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormOrder::L1 => f.write_str("1"),
            NormOrder::L2 => f.write_str("2"),
            NormOrder::LInf => f.write_str("inf"),
        }
    }
}

/// The Lp norm of `v`.
pub fn lp_norm(v: &[f64], p: NormOrder) -> f64 {
    match p {
        NormOrder::L1 => v.iter().map(|x| x.abs()).sum(),
        NormOrder::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        NormOrder::LInf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
    }
}

/// The size-normalized Lp norm `(1/n sum |v_i|^p)^(1/p)`, comparable across
/// image sizes. Equals `lp_norm(v, p) / n^(1/p)`.
pub fn lp_per_pixel(v: &[f64], p: NormOrder) -> Result<f64, ImageError> {
    if v.is_empty() {
        return Err(ImageError::EmptyInput);
    }
    Ok(lp_norm(v, p) / p.root_scale(v.len()))
}

/// Clips a raw perturbation so that `X + delta` lies in `[0,1]` elementwise.
///
/// Computed as a per-element clamp of `delta` to `[-X_i, 1 - X_i]`, which is
/// algebraically `min(max(X + delta, 0), 1) - X` and exactly idempotent in
/// floating point.
pub fn clip_perturbation(image: &Image, raw: &[f64]) -> Result<Perturbation, ImageError> {
    if raw.len() != image.data.len() {
        return Err(ImageError::ShapeMismatch {
            expected: format!("{} elements", image.data.len()),
            got: format!("{} elements", raw.len()),
        });
    }
    let data = image
        .data
        .iter()
        .zip(raw)
        .map(|(x, d)| d.clamp(-x, 1.0 - x))
        .collect();
    Ok(Perturbation {
        width: image.width,
        height: image.height,
        channels: image.channels,
        data,
    })
}

/// Loads an 8-bit PNG or binary PNM (PGM/PPM) image; sample `u` maps to
/// `u / 255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let path = path.as_ref();
    let format = format_for_path(path)?;
    let bytes = std::fs::read(path)?;
    let decoded = image::load_from_memory_with_format(&bytes, format)
        .map_err(|e| ImageError::Decode(e.to_string()))?;
    match decoded {
        image::DynamicImage::ImageLuma8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            let data = img.into_raw().iter().map(|&u| f64::from(u) / 255.0).collect();
            Image::new(w, h, 1, data)
        }
        image::DynamicImage::ImageRgb8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            let data = img.into_raw().iter().map(|&u| f64::from(u) / 255.0).collect();
            Image::new(w, h, 3, data)
        }
        other => Err(ImageError::UnsupportedFormat(format!(
            "only 8-bit grayscale or RGB images are supported, got {other:?}"
        ))),
    }
}

/// Saves as 8-bit PNG or binary PNM depending on the file extension; each
/// sample rounds to the nearest 8-bit value.
pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let format = format_for_path(path)?;
    let quantized: Vec<u8> = image
        .data
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    let (w, h) = (image.width as u32, image.height as u32);
    let color = if image.channels == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    use image::ImageEncoder as _;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        image::ImageFormat::Png => {
            image::codecs::png::PngEncoder::new(&mut file)
                .write_image(&quantized, w, h, color)
                .map_err(|e| ImageError::Decode(e.to_string()))?;
        }
        image::ImageFormat::Pnm => {
            use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
            let subtype = if image.channels == 1 {
                PnmSubtype::Graymap(SampleEncoding::Binary)
            } else {
                PnmSubtype::Pixmap(SampleEncoding::Binary)
            };
            PnmEncoder::new(&mut file)
                .with_subtype(subtype)
                .write_image(&quantized, w, h, color)
                .map_err(|e| ImageError::Decode(e.to_string()))?;
        }
        _ => unreachable!(),
    }
    Ok(())
}

fn format_for_path(path: &Path) -> Result<image::ImageFormat, ImageError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(image::ImageFormat::Png),
        "pgm" | "ppm" | "pnm" => Ok(image::ImageFormat::Pnm),
        other => Err(ImageError::UnsupportedFormat(format!(
            "expected .png/.pgm/.ppm, got .{other}"
        ))),
    }
}
