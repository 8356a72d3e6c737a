use rand::Rng;
use rustfft::num_complex::Complex;

use spectra::evaluation::{auc, mann_whitney_2u};
use spectra::preprocess::{fft2d, NormalizedImage};
use spectra::record::Label;
use spectra::rng;

use super::normals;

/// Direct O(N⁴) two-dimensional DFT.
fn direct_dft(plane: &[f32], n: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); n * n];
    for u in 0..n {
        for v in 0..n {
            let mut acc = Complex::new(0.0, 0.0);
            for y in 0..n {
                for x in 0..n {
                    let angle = -2.0
                        * std::f64::consts::PI
                        * ((u * y) as f64 / n as f64 + (v * x) as f64 / n as f64);
                    acc += Complex::from_polar(plane[y * n + x] as f64, angle);
                }
            }
            out[u * n + v] = acc;
        }
    }
    out
}

pub fn fft_matches_direct_dft(seeds: std::ops::Range<u64>) -> f64 {
    let mut worst = 0f64;
    for seed in seeds {
        let mut r = rng::stream(seed, "oracle-dft", &[]);
        let plane = normals(&mut r, 256, 1.0);
        let fast = fft2d(&plane, 16, 16).unwrap();
        for (a, b) in fast.iter().zip(direct_dft(&plane, 16)) {
            worst = worst.max((a - b).norm() / b.norm().max(1e-9));
        }
    }
    worst
}

/// Per-channel mean and population std, and global skewness and excess
/// kurtosis, by two passes in f64.
pub fn two_pass_moments(x: &NormalizedImage) -> [f64; 8] {
    let mut out = [0f64; 8];
    for c in 0..3 {
        let v = x.channel(c);
        let mean = v.iter().map(|&a| a as f64).sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|&a| (a as f64 - mean).powi(2)).sum::<f64>() / v.len() as f64;
        out[2 * c] = mean;
        out[2 * c + 1] = var.sqrt();
    }
    let all = x.data();
    let n = all.len() as f64;
    let mean = all.iter().map(|&a| a as f64).sum::<f64>() / n;
    let m2 = all.iter().map(|&a| (a as f64 - mean).powi(2)).sum::<f64>() / n;
    let m3 = all.iter().map(|&a| (a as f64 - mean).powi(3)).sum::<f64>() / n;
    let m4 = all.iter().map(|&a| (a as f64 - mean).powi(4)).sum::<f64>() / n;
    let std = m2.sqrt();
    if std >= 1e-8 {
        out[6] = m3 / std.powi(3);
        out[7] = m4 / (std * std * std * std) - 3.0;
    }
    out
}

/// Pairwise count of fake-over-real wins, ties counting one half, doubled.
fn pairwise_2u(scores: &[f64], labels: &[Label]) -> u128 {
    let mut twice = 0u128;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == Label::Fake && labels[j] == Label::Real {
                twice += if si > sj {
                    2
                } else if si == sj {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice
}

pub fn auc_matches_pairwise_oracle(instances: u64) {
    for seed in 0..instances {
        let mut r = rng::stream(seed, "oracle-auc", &[]);
        let n = r.random_range(2..=200);
        let levels = r.random_range(2..=50);
        let mut labels: Vec<Label> = (0..n)
            .map(|_| {
                if r.random::<bool>() {
                    Label::Fake
                } else {
                    Label::Real
                }
            })
            .collect();
        labels[0] = Label::Fake;
        labels[1] = Label::Real;
        let scores: Vec<f64> = (0..n)
            .map(|_| r.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let twice = pairwise_2u(&scores, &labels);
        assert_eq!(mann_whitney_2u(&scores, &labels).unwrap(), twice);
        let n_fake = labels.iter().filter(|&&l| l == Label::Fake).count() as u128;
        let n_real = n as u128 - n_fake;
        let oracle = twice as f64 / (2 * n_fake * n_real) as f64;
        assert_eq!(auc(&scores, &labels).unwrap(), oracle, "seed {seed}");
    }
}
