use super::NormalizedImage;
use crate::error::{Error, Result};

pub const STAT_FEATURES: usize = 8;

/// Below this global standard deviation, skewness and kurtosis are reported
/// as zero.
pub const DEGENERATE_STD: f64 = 1e-8;

/// `[μ′_R, σ′_R, μ′_G, σ′_G, μ′_B, σ′_B, γ, κ]`: per-channel mean and
/// population standard deviation, then global skewness and excess kurtosis
/// over all `3·448·448` values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatFeatures(pub [f32; STAT_FEATURES]);

impl StatFeatures {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn skewness(&self) -> f32 {
        self.0[6]
    }

    pub fn excess_kurtosis(&self) -> f32 {
        self.0[7]
    }
}

/// Single-pass central moments up to order four (Terriberry's update).
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        let n1 = self.n;
        self.n += 1.0;
        let n = self.n;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    fn std(&self) -> f64 {
        (self.m2 / self.n).sqrt()
    }
}

pub fn stat_features(x: &NormalizedImage) -> Result<StatFeatures> {
    let mut global = Moments::default();
    let mut out = [0.0f32; STAT_FEATURES];
    for c in 0..3 {
        let mut channel = Moments::default();
        for &v in x.channel(c) {
            let v = f64::from(v);
            channel.push(v);
            global.push(v);
        }
        out[2 * c] = channel.mean as f32;
        out[2 * c + 1] = channel.std() as f32;
    }
    let std = global.std();
    if std >= DEGENERATE_STD {
        let n = global.n;
        out[6] = ((global.m3 / n) / std.powi(3)) as f32;
        out[7] = ((global.m4 / n) / std.powi(4) - 3.0) as f32;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("statistical features are not finite"));
    }
    Ok(StatFeatures(out))
}
