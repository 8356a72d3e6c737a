use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result, ResultExt};
use crate::preprocess::{GRID, PATCH_COUNT};

/// Raw patch logits laid out on the 49×49 patch grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap49 {
    scores: Vec<f32>,
}

impl Heatmap49 {
    pub fn from_scores(scores: Vec<f32>) -> Result<Self> {
        if scores.len() != PATCH_COUNT {
            return Err(Error::shape(format!(
                "heatmap needs {PATCH_COUNT} scores, got {}",
                scores.len()
            )));
        }
        Ok(Heatmap49 { scores })
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.scores[row * GRID + col]
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    /// Binary PGM (P5), min-max scaled to 0–255. A flat map renders black.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (lo, hi) = self
            .scores
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        let mut out = format!("P5\n{GRID} {GRID}\n255\n").into_bytes();
        out.extend(self.scores.iter().map(|&v| {
            if range > 0.0 {
                ((v - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        }));
        out
    }

    /// One line per grid row, comma-separated raw logits.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.scores.chunks_exact(GRID) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                write!(s, "{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).with_context(|| format!("writing {}", path.display()))
    }
}
