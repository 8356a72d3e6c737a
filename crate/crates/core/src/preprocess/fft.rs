use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{NormalizedImage, INPUT_SIZE};
use crate::error::{Error, Result};

pub const FFT_FEATURES: usize = 9;

/// Per-channel spectral statistics laid out as
/// `[μ_R, σ_R, η_R, μ_G, σ_G, η_G, μ_B, σ_B, η_B]`.
///
/// `μ`/`σ` are the mean and population standard deviation of the
/// log-magnitude spectrum `ln(1 + |F|)` over every frequency bin (DC
/// included). `η` is the RMS deviation of the normalized phase
/// `(Φ + π)/(2π)` from `0.5`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FftFeatures(pub [f32; FFT_FEATURES]);

impl FftFeatures {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn mean(&self, c: usize) -> f32 {
        self.0[3 * c]
    }

    pub fn std(&self, c: usize) -> f32 {
        self.0[3 * c + 1]
    }

    pub fn phase_dispersion(&self, c: usize) -> f32 {
        self.0[3 * c + 2]
    }
}

/// Unnormalized forward 2-D DFT of a row-major `height × width` plane.
///
/// Bin `(u, v)` is stored at `u·width + v`, where `u` pairs with the row
/// index and `v` with the column index. Any size is accepted; the 1-D
/// transforms use mixed-radix or Bluestein as the length requires.
pub fn fft2d(plane: &[f32], height: usize, width: usize) -> Result<Vec<Complex<f64>>> {
    if plane.len() != height * width {
        return Err(Error::shape(format!(
            "fft2d plane of {} values for {height}×{width}",
            plane.len()
        )));
    }
    if plane.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("fft2d input contains a non-finite value"));
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = plane
        .iter()
        .map(|&v| Complex::new(f64::from(v), 0.0))
        .collect();

    let row_fft = planner.plan_fft_forward(width);
    row_fft.process(&mut buf);

    let col_fft = planner.plan_fft_forward(height);
    let mut column = vec![Complex::new(0.0, 0.0); height];
    for x in 0..width {
        for (y, slot) in column.iter_mut().enumerate() {
            *slot = buf[y * width + x];
        }
        col_fft.process(&mut column);
        for (y, v) in column.iter().enumerate() {
            buf[y * width + x] = *v;
        }
    }
    Ok(buf)
}

/// Phase in `(−π, π]`.
fn phase(z: Complex<f64>) -> f64 {
    let p = z.im.atan2(z.re);
    if p <= -PI {
        PI
    } else {
        p
    }
}

pub fn fft_features(x: &NormalizedImage) -> Result<FftFeatures> {
    let mut out = [0.0f32; FFT_FEATURES];
    for c in 0..3 {
        let spectrum = fft2d(x.channel(c), INPUT_SIZE, INPUT_SIZE)?;
        let n = spectrum.len() as f64;

        let log_mag: Vec<f64> = spectrum.iter().map(|z| z.norm().ln_1p()).collect();
        let mean = log_mag.iter().sum::<f64>() / n;
        let var = log_mag.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;

        let phase_sq = spectrum
            .iter()
            .map(|&z| {
                let d = (phase(z) + PI) / (2.0 * PI) - 0.5;
                d * d
            })
            .sum::<f64>()
            / n;

        out[3 * c] = mean as f32;
        out[3 * c + 1] = var.sqrt() as f32;
        out[3 * c + 2] = phase_sq.sqrt() as f32;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("spectral features are not finite"));
    }
    Ok(FftFeatures(out))
}
