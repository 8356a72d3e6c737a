//! Turning a decoded RGB image into the locally computed feature views.
//!
//! The pipeline is `resize_bilinear → normalize`, after which the normalized
//! tensor feeds [`fft_features`], [`stat_features`] and [`unfold_patches`].

mod fft;
mod patches;
mod stats;

use std::path::Path;

pub use fft::{fft2d, fft_features, FftFeatures, FFT_FEATURES};
pub use patches::{
    fold_patches, unfold_patches, PatchMatrix, COVERED, GRID, PATCH, PATCH_COUNT, PATCH_DIM,
};
pub use stats::{stat_features, StatFeatures, STAT_FEATURES};

use crate::error::{Error, Result, ResultExt};

/// Side length of the square network input.
pub const INPUT_SIZE: usize = 448;

/// ImageNet per-channel mean.
pub const CHANNEL_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
/// ImageNet per-channel standard deviation.
pub const CHANNEL_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// 8-bit interleaved RGB pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::format(format!(
                "image dimensions must be positive, got {width}×{height}"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::format(format!(
                "{width}×{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    /// Build an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.into_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    /// Open a PNG or JPEG file.
    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .with_context(|| format!("decoding {}", path.display()))?
            .into_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    /// Save losslessly; the format follows the file extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let buf =
            image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
                .ok_or_else(|| Error::format("pixel buffer does not match dimensions"))?;
        buf.save(path)
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Resize to `INPUT_SIZE × INPUT_SIZE` with bilinear interpolation.
///
/// Sample positions use pixel centres (`src = (dst + 0.5)·scale − 0.5`),
/// clamped to the edge. Aspect ratio is not preserved. An input that is
/// already the target size is returned unchanged.
pub fn resize_bilinear(img: &RgbImage) -> RgbImage {
    resize_bilinear_to(img, INPUT_SIZE, INPUT_SIZE)
}

pub fn resize_bilinear_to(img: &RgbImage, out_w: usize, out_h: usize) -> RgbImage {
    if img.width == out_w && img.height == out_h {
        return img.clone();
    }
    let taps = |in_len: usize, out_len: usize| -> Vec<(usize, usize, f32)> {
        let scale = in_len as f32 / out_len as f32;
        (0..out_len)
            .map(|d| {
                let src = ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f32);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(in_len - 1);
                (lo, hi, src - lo as f32)
            })
            .collect()
    };
    let xs = taps(img.width, out_w);
    let ys = taps(img.height, out_h);
    let mut pixels = Vec::with_capacity(out_w * out_h * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let p = |x: usize, y: usize| f32::from(img.pixels[(y * img.width + x) * 3 + c]);
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage {
        width: out_w,
        height: out_h,
        pixels,
    }
}

/// Channel-planar `3 × 448 × 448` tensor in ImageNet normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedImage {
    data: Vec<f32>,
}

impl NormalizedImage {
    pub const PLANE: usize = INPUT_SIZE * INPUT_SIZE;

    /// Wrap raw planar data; used by tests and synthetic pipelines.
    pub fn from_planar(data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * Self::PLANE {
            return Err(Error::shape(format!(
                "normalized image needs {} values, got {}",
                3 * Self::PLANE,
                data.len()
            )));
        }
        Ok(NormalizedImage { data })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * Self::PLANE..(c + 1) * Self::PLANE]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[c * Self::PLANE + y * INPUT_SIZE + x]
    }
}

/// `(v/255 − μ_c)/σ_c` for an intensity `v` on the 0–255 scale.
pub fn normalize_value(channel: usize, v: f32) -> f32 {
    (v / 255.0 - CHANNEL_MEAN[channel]) / CHANNEL_STD[channel]
}

pub fn normalize(img: &RgbImage) -> Result<NormalizedImage> {
    if img.width != INPUT_SIZE || img.height != INPUT_SIZE {
        return Err(Error::shape(format!(
            "normalize expects {INPUT_SIZE}×{INPUT_SIZE}, got {}×{}",
            img.width, img.height
        )));
    }
    let mut data = vec![0.0f32; 3 * NormalizedImage::PLANE];
    for (i, px) in img.pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * NormalizedImage::PLANE + i] = normalize_value(c, f32::from(px[c]));
        }
    }
    Ok(NormalizedImage { data })
}

/// Resize and normalize in one step.
pub fn prepare(img: &RgbImage) -> Result<NormalizedImage> {
    normalize(&resize_bilinear(img))
}
