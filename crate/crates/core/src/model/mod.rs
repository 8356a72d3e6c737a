//! The four feature encoders, the shared per-patch scorer, the multi-scale
//! spatial block, fusion and the classification head.
//!
//! ```text
//! global 768 ─ Linear 512 ─ GELU ─ Dropout(0.3) ─ Linear 256 ─┐
//! fft      9 ─ Linear  32 ─ GELU ─ Linear 16 ─────────────────┤
//! stat     8 ─ Linear  16 ─ GELU ─ Linear  8 ─────────────────┤
//! patches 2401×243 ─ Linear 64 ─ GELU ─ Dropout(0.2) ─ Linear 1 = scores s
//!     s as 49×49 ─ {3,5,7} depthwise conv ─ GELU ─ (mean, max) ─ Linear 32 ┤
//!     mean(s), max(s) ────────────────────────────────────────────────────┤
//!                                                                 fused 314
//! fused ─ Linear 256 ─ GELU ─ Linear 128 ─ GELU ─ Linear 1 = logit z
//! ```

mod checkpoint;
mod heatmap;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use heatmap::Heatmap49;
pub use params::{
    parameter_count, ModelParams, ParamId, ParamKind, ParamSpec, FUSED_DIM, PARAM_LAYOUT,
};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::preprocess::{FftFeatures, PatchMatrix, StatFeatures, GRID, PATCH_COUNT, PATCH_DIM};
use crate::record::MultiViewRecord;
use crate::rng::StreamRng;
use crate::semantic::GlobalDescriptor;
use crate::tensor::{ReduceKind, Tensor};

pub const GLOBAL_DROPOUT: f32 = 0.3;
pub const PATCH_DROPOUT: f32 = 0.2;

/// Spatial block kernels, smallest first.
const SPATIAL_KERNELS: [ParamId; 3] = [ParamId::SpatialK3, ParamId::SpatialK5, ParamId::SpatialK7];

/// Whether dropout is active. Training mode carries the stream that dropout
/// masks are drawn from.
pub enum Mode<'r> {
    Inference,
    Training(&'r mut StreamRng),
}

impl Mode<'_> {
    fn reborrow(&mut self) -> Mode<'_> {
        match self {
            Mode::Inference => Mode::Inference,
            Mode::Training(r) => Mode::Training(r),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logit: f32,
    /// See [`probability`].
    pub probability: f64,
    pub heatmap: Heatmap49,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Largest f64 below one.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// `σ(z)` kept strictly inside (0, 1), so even saturated logits give a
/// usable probability.
pub fn probability(logit: f32) -> f64 {
    sigmoid(f64::from(logit)).clamp(f64::from_bits(1), ONE_MINUS_ULP)
}

/// A tape with every parameter recorded as a leaf.
struct Graph {
    tape: Tape,
    params: Vec<Var>,
}

impl Graph {
    fn new(params: &ModelParams, differentiable: bool) -> Self {
        let mut tape = Tape::new();
        let params = params
            .tensors()
            .iter()
            .map(|t| {
                if differentiable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Graph { tape, params }
    }

    fn p(&self, id: ParamId) -> Var {
        self.params[id as usize]
    }

    fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let h = self.tape.matmul(x, self.p(w))?;
        self.tape.add_row_bias(h, self.p(b))
    }

    /// `W₂·Dropout(GELU(W₁x + b₁)) + b₂`.
    fn mlp(
        &mut self,
        x: Var,
        layers: [ParamId; 4],
        dropout: f32,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let [w1, b1, w2, b2] = layers;
        let h = self.linear(x, w1, b1)?;
        let h = self.tape.gelu(h)?;
        let h = match mode {
            Mode::Training(r) if dropout > 0.0 => self.tape.dropout(h, dropout, true, *r)?,
            _ => h,
        };
        self.linear(h, w2, b2)
    }

    fn global(&mut self, f: &GlobalDescriptor, mode: &mut Mode<'_>) -> Result<Var> {
        let x = self.tape.constant(Tensor::row(f.as_slice()));
        self.mlp(
            x,
            [
                ParamId::GlobalW1,
                ParamId::GlobalB1,
                ParamId::GlobalW2,
                ParamId::GlobalB2,
            ],
            GLOBAL_DROPOUT,
            mode,
        )
    }

    fn spectral(&mut self, x: Var) -> Result<Var> {
        self.mlp(
            x,
            [
                ParamId::SpectralW1,
                ParamId::SpectralB1,
                ParamId::SpectralW2,
                ParamId::SpectralB2,
            ],
            0.0,
            &mut Mode::Inference,
        )
    }

    fn stat(&mut self, x: Var) -> Result<Var> {
        self.mlp(
            x,
            [
                ParamId::StatW1,
                ParamId::StatB1,
                ParamId::StatW2,
                ParamId::StatB2,
            ],
            0.0,
            &mut Mode::Inference,
        )
    }

    /// Scores as a `2401×1` column.
    fn patch_scores(&mut self, patches: &PatchMatrix, mode: &mut Mode<'_>) -> Result<Var> {
        let x = self.tape.constant(Tensor::new(
            vec![PATCH_COUNT, PATCH_DIM],
            patches.data().to_vec(),
        )?);
        self.mlp(
            x,
            [
                ParamId::PatchW1,
                ParamId::PatchB1,
                ParamId::PatchW2,
                ParamId::PatchB2,
            ],
            PATCH_DROPOUT,
            mode,
        )
    }

    /// `1×32` spatial feature from a `2401×1` score column.
    fn spatial(&mut self, scores: Var) -> Result<Var> {
        let grid = self.tape.reshape(scores, &[1, GRID, GRID])?;
        let mut pooled = Vec::with_capacity(2 * SPATIAL_KERNELS.len());
        for k in SPATIAL_KERNELS {
            let c = self.tape.depthwise_conv2d(grid, self.p(k))?;
            let a = self.tape.gelu(c)?;
            pooled.push(self.pool_scalar(a, ReduceKind::Mean)?);
            pooled.push(self.pool_scalar(a, ReduceKind::Max)?);
        }
        let v = self.tape.concat(&pooled)?;
        self.linear(v, ParamId::SpatialW, ParamId::SpatialB)
    }

    /// Global pooling to a `1×1` matrix.
    fn pool_scalar(&mut self, x: Var, kind: ReduceKind) -> Result<Var> {
        let s = self.tape.reduce_all(x, kind)?;
        self.tape.reshape(s, &[1, 1])
    }

    fn build(&mut self, record: &MultiViewRecord, mode: &mut Mode<'_>) -> Result<Outputs> {
        let patches = record.patches()?;
        let global = self.global(&record.global, mode)?;
        let fft_in = self.tape.constant(Tensor::row(record.fft.as_slice()));
        let spectral = self.spectral(fft_in)?;
        let stat_in = self.tape.constant(Tensor::row(record.stat.as_slice()));
        let stat = self.stat(stat_in)?;
        let scores = self.patch_scores(patches, mode)?;
        let spatial = self.spatial(scores)?;
        let p_mean = self.pool_scalar(scores, ReduceKind::Mean)?;
        let p_max = self.pool_scalar(scores, ReduceKind::Max)?;
        let fused = self
            .tape
            .concat(&[global, spectral, stat, spatial, p_mean, p_max])?;

        let h = self.linear(fused, ParamId::ClassifierW1, ParamId::ClassifierB1)?;
        let h = self.tape.gelu(h)?;
        let h = self.linear(h, ParamId::ClassifierW2, ParamId::ClassifierB2)?;
        let h = self.tape.gelu(h)?;
        let logit = self.linear(h, ParamId::ClassifierW3, ParamId::ClassifierB3)?;
        Ok(Outputs {
            logit,
            scores,
            fused,
        })
    }

    fn prediction(&self, out: &Outputs) -> Result<Prediction> {
        let logit = self.tape.value(out.logit).item()?;
        Ok(Prediction {
            logit,
            probability: probability(logit),
            heatmap: Heatmap49::from_scores(self.tape.value(out.scores).data().to_vec())?,
        })
    }

    fn param_grads(&self, grads: &mut crate::autodiff::Gradients) -> Result<ModelParams> {
        let tensors = self
            .params
            .iter()
            .zip(PARAM_LAYOUT)
            .map(|(&v, spec)| grads.take(v).unwrap_or_else(|| Tensor::zeros(spec.shape)))
            .collect();
        ModelParams::from_tensors(tensors)
    }
}

struct Outputs {
    logit: Var,
    scores: Var,
    fused: Var,
}

pub fn encode_global(
    f: &GlobalDescriptor,
    params: &ModelParams,
    mut mode: Mode<'_>,
) -> Result<Vec<f32>> {
    let mut g = Graph::new(params, false);
    let out = g.global(f, &mut mode)?;
    Ok(g.tape.value(out).data().to_vec())
}

pub fn encode_spectral(f: &FftFeatures, params: &ModelParams) -> Result<Vec<f32>> {
    let mut g = Graph::new(params, false);
    let x = g.tape.constant(Tensor::row(f.as_slice()));
    let out = g.spectral(x)?;
    Ok(g.tape.value(out).data().to_vec())
}

pub fn encode_stat(f: &StatFeatures, params: &ModelParams) -> Result<Vec<f32>> {
    let mut g = Graph::new(params, false);
    let x = g.tape.constant(Tensor::row(f.as_slice()));
    let out = g.stat(x)?;
    Ok(g.tape.value(out).data().to_vec())
}

pub fn score_patches(
    p: &PatchMatrix,
    params: &ModelParams,
    mut mode: Mode<'_>,
) -> Result<Vec<f32>> {
    let mut g = Graph::new(params, false);
    let out = g.patch_scores(p, &mut mode)?;
    Ok(g.tape.value(out).data().to_vec())
}

pub fn spatial_block(scores: &[f32], params: &ModelParams) -> Result<Vec<f32>> {
    if scores.len() != PATCH_COUNT {
        return Err(Error::shape(format!(
            "spatial block needs {PATCH_COUNT} scores, got {}",
            scores.len()
        )));
    }
    let mut g = Graph::new(params, false);
    let s = g
        .tape
        .constant(Tensor::new(vec![PATCH_COUNT, 1], scores.to_vec())?);
    let out = g.spatial(s)?;
    Ok(g.tape.value(out).data().to_vec())
}

pub fn forward(
    record: &MultiViewRecord,
    params: &ModelParams,
    mut mode: Mode<'_>,
) -> Result<Prediction> {
    let mut g = Graph::new(params, false);
    let out = g.build(record, &mut mode)?;
    g.prediction(&out)
}

/// The concatenated fusion vector (inference mode).
pub fn fused_features(record: &MultiViewRecord, params: &ModelParams) -> Result<Vec<f32>> {
    let mut g = Graph::new(params, false);
    let out = g.build(record, &mut Mode::Inference)?;
    Ok(g.tape.value(out.fused).data().to_vec())
}

/// Result of one differentiated forward pass.
pub struct RecordGradient {
    pub loss: f32,
    pub logit: f32,
    pub grads: ModelParams,
}

/// Binary cross-entropy of one record and its gradient with respect to every
/// parameter.
pub fn loss_and_gradients(
    record: &MultiViewRecord,
    params: &ModelParams,
    mut mode: Mode<'_>,
) -> Result<RecordGradient> {
    let mut g = Graph::new(params, true);
    let out = g.build(record, &mut mode.reborrow())?;
    let loss = g
        .tape
        .bce_with_logits(out.logit, &[record.label.as_f32()])?;
    let mut grads = g.tape.backward(loss)?;
    let param_grads = g.param_grads(&mut grads)?;
    if !param_grads.is_finite() {
        return Err(Error::numeric(format!(
            "non-finite gradient for record {}",
            record.id
        )));
    }
    Ok(RecordGradient {
        loss: g.tape.value(loss).item()?,
        logit: g.tape.value(out.logit).item()?,
        grads: param_grads,
    })
}
