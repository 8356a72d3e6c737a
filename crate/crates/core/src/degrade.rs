//! Transmission damage: Gaussian blur and JPEG re-encoding.

use std::fmt;
use std::str::FromStr;

use jpeg_encoder::{ColorType, Encoder, SamplingFactor};

use crate::error::{Error, Result};
use crate::preprocess::RgbImage;

/// A (blur σ, JPEG quality) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationLevel {
    sigma: f64,
    quality: u8,
}

/// Levels 1 to 5, from untouched to extreme.
pub const CANONICAL_LEVELS: [DegradationLevel; 5] = [
    DegradationLevel {
        sigma: 0.0,
        quality: 100,
    },
    DegradationLevel {
        sigma: 0.5,
        quality: 90,
    },
    DegradationLevel {
        sigma: 1.5,
        quality: 75,
    },
    DegradationLevel {
        sigma: 2.5,
        quality: 50,
    },
    DegradationLevel {
        sigma: 4.0,
        quality: 30,
    },
];

impl DegradationLevel {
    pub fn new(sigma: f64, quality: u32) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(DegradationLevel {
            sigma,
            quality: check_quality(quality)?,
        })
    }

    /// Canonical level `k`, counted from 1.
    pub fn canonical(k: usize) -> Result<Self> {
        k.checked_sub(1)
            .and_then(|i| CANONICAL_LEVELS.get(i))
            .copied()
            .ok_or_else(|| Error::config(format!("degradation level must be 1..=5, got {k}")))
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn quality(&self) -> u8 {
        self.quality
    }

    pub fn is_identity(&self) -> bool {
        self.sigma == 0.0 && self.quality == 100
    }
}

impl fmt::Display for DegradationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.sigma, self.quality)
    }
}

/// Accepts a canonical level number (`3`) or an explicit `sigma:quality`
/// pair (`1.5:75`).
impl FromStr for DegradationLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.split_once(':') {
            Some((sigma, q)) => {
                let sigma = sigma
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config(format!("bad blur sigma in {s:?}")))?;
                let q = q
                    .trim()
                    .parse::<u32>()
                    .map_err(|_| Error::config(format!("bad JPEG quality in {s:?}")))?;
                DegradationLevel::new(sigma, q)
            }
            None => {
                let k = s
                    .parse::<usize>()
                    .map_err(|_| Error::config(format!("bad degradation level {s:?}")))?;
                DegradationLevel::canonical(k)
            }
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "blur sigma must be finite and >= 0, got {sigma}"
        )))
    }
}

fn check_quality(quality: u32) -> Result<u8> {
    if (1..=100).contains(&quality) {
        Ok(quality as u8)
    } else {
        Err(Error::config(format!(
            "JPEG quality must be 1..=100, got {quality}"
        )))
    }
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur with edge clamping. `sigma = 0` returns the input
/// unchanged.
pub fn gaussian_blur(img: &RgbImage, sigma: f64) -> Result<RgbImage> {
    check_sigma(sigma)?;
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let src = img.pixels();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut horizontal = vec![0f32; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0f64;
                for (k, &tap) in kernel.iter().enumerate() {
                    let sx = clamp(x as isize + k as isize - r, w);
                    acc += tap * src[(y * w + sx) * 3 + c] as f64;
                }
                horizontal[(y * w + x) * 3 + c] = acc as f32;
            }
        }
    }

    let mut out = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0f64;
                for (k, &tap) in kernel.iter().enumerate() {
                    let sy = clamp(y as isize + k as isize - r, h);
                    acc += tap * horizontal[(sy * w + x) * 3 + c] as f64;
                }
                out[(y * w + x) * 3 + c] = acc.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RgbImage::new(w, h, out)
}

/// Baseline JPEG encode at `quality` followed by a decode. Chroma is
/// subsampled 4:2:0 below quality 90 and kept at 4:4:4 from 90 up.
pub fn jpeg_reencode(img: &RgbImage, quality: u32) -> Result<RgbImage> {
    let quality = check_quality(quality)?;
    let (w, h) = (img.width(), img.height());
    let (w16, h16) = match (u16::try_from(w), u16::try_from(h)) {
        (Ok(w), Ok(h)) => (w, h),
        _ => {
            return Err(Error::domain(format!(
                "{w}x{h} exceeds the JPEG size limit"
            )))
        }
    };
    let mut bytes = Vec::new();
    let mut encoder = Encoder::new(&mut bytes, quality);
    encoder.set_sampling_factor(if quality < 90 {
        SamplingFactor::R_4_2_0
    } else {
        SamplingFactor::R_4_4_4
    });
    encoder.encode(img.pixels(), w16, h16, ColorType::Rgb)?;
    let decoded = RgbImage::decode(&bytes)?;
    if decoded.width() != w || decoded.height() != h {
        return Err(Error::format("JPEG round trip changed the image size"));
    }
    Ok(decoded)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DegradeOrder {
    #[default]
    BlurThenJpeg,
    JpegThenBlur,
}

/// Blur then re-encode. The untouched level (σ = 0, Q = 100) returns the
/// input exactly; other levels skip only the blur when σ = 0.
pub fn apply_level(img: &RgbImage, level: DegradationLevel) -> Result<RgbImage> {
    apply_level_ordered(img, level, DegradeOrder::default())
}

pub fn apply_level_ordered(
    img: &RgbImage,
    level: DegradationLevel,
    order: DegradeOrder,
) -> Result<RgbImage> {
    if level.is_identity() {
        return Ok(img.clone());
    }
    match order {
        DegradeOrder::BlurThenJpeg => {
            let blurred = gaussian_blur(img, level.sigma)?;
            jpeg_reencode(&blurred, level.quality as u32)
        }
        DegradeOrder::JpegThenBlur => {
            let compressed = jpeg_reencode(img, level.quality as u32)?;
            gaussian_blur(&compressed, level.sigma)
        }
    }
}

/// Mean absolute per-channel difference between two equally sized images.
pub fn mean_absolute_error(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let total: u64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| x.abs_diff(y) as u64)
        .sum();
    Ok(total as f64 / a.pixels().len() as f64)
}
