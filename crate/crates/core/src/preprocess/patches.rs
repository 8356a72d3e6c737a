use super::{NormalizedImage, INPUT_SIZE};
use crate::error::{Error, Result};

/// Patch side length and stride.
pub const PATCH: usize = 9;
/// Patches per axis: `⌊(448 − 9)/9⌋ + 1`.
pub const GRID: usize = (INPUT_SIZE - PATCH) / PATCH + 1;
pub const PATCH_COUNT: usize = GRID * GRID;
/// Values per patch: `9·9·3`.
pub const PATCH_DIM: usize = PATCH * PATCH * 3;

/// Non-overlapping 9×9×3 patches, one row per grid cell.
///
/// Row `i` is the block at grid position `(i / 49, i % 49)`. Within a row the
/// layout is channel-major, then patch row, then patch column:
/// `row[c·81 + py·9 + px] = X[c][9·gy + py][9·gx + px]`.
/// Pixels 441–447 along either axis are not covered.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchMatrix {
    data: Vec<f32>,
}

impl PatchMatrix {
    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        if data.len() != PATCH_COUNT * PATCH_DIM {
            return Err(Error::shape(format!(
                "patch matrix needs {}×{} values, got {}",
                PATCH_COUNT,
                PATCH_DIM,
                data.len()
            )));
        }
        Ok(PatchMatrix { data })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * PATCH_DIM..(i + 1) * PATCH_DIM]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * PATCH_DIM..(i + 1) * PATCH_DIM]
    }
}

pub fn unfold_patches(x: &NormalizedImage) -> PatchMatrix {
    let mut data = Vec::with_capacity(PATCH_COUNT * PATCH_DIM);
    for gy in 0..GRID {
        for gx in 0..GRID {
            for c in 0..3 {
                let plane = x.channel(c);
                for py in 0..PATCH {
                    let start = (gy * PATCH + py) * INPUT_SIZE + gx * PATCH;
                    data.extend_from_slice(&plane[start..start + PATCH]);
                }
            }
        }
    }
    PatchMatrix { data }
}

/// Extent of the region covered by patches along each axis.
pub const COVERED: usize = GRID * PATCH;

/// Inverse of [`unfold_patches`]: planar `3×448×448` values with every
/// covered pixel restored and the uncovered border left at zero.
pub fn fold_patches(p: &PatchMatrix) -> Vec<f32> {
    let mut out = vec![0.0f32; NormalizedImage::PLANE * 3];
    for (i, row) in p.data.chunks_exact(PATCH_DIM).enumerate() {
        let (gy, gx) = (i / GRID, i % GRID);
        for c in 0..3 {
            for py in 0..PATCH {
                let src = &row[c * PATCH * PATCH + py * PATCH..][..PATCH];
                let start =
                    c * NormalizedImage::PLANE + (gy * PATCH + py) * INPUT_SIZE + gx * PATCH;
                out[start..start + PATCH].copy_from_slice(src);
            }
        }
    }
    out
}
