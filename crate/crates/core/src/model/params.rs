use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::rng::{self, tags};
use crate::tensor::Tensor;

/// Width of the fused vector: 256 + 16 + 8 + 32 + 1 + 1.
pub const FUSED_DIM: usize = 314;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Decayed by AdamW, Glorot-initialized with the given fans.
    Weight { fan_in: usize, fan_out: usize },
    /// Zero-initialized, exempt from weight decay.
    Bias,
}

pub struct ParamSpec {
    pub name: &'static str,
    pub shape: &'static [usize],
    pub kind: ParamKind,
}

const fn weight(
    name: &'static str,
    shape: &'static [usize],
    fan_in: usize,
    fan_out: usize,
) -> ParamSpec {
    ParamSpec {
        name,
        shape,
        kind: ParamKind::Weight { fan_in, fan_out },
    }
}

const fn bias(name: &'static str, shape: &'static [usize]) -> ParamSpec {
    ParamSpec {
        name,
        shape,
        kind: ParamKind::Bias,
    }
}

macro_rules! param_layout {
    ($($id:ident => $spec:expr,)*) => {
        /// Every learnable tensor, in checkpoint order.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum ParamId { $($id,)* }

        pub const PARAM_LAYOUT: &[ParamSpec] = &[$($spec,)*];

        impl ParamId {
            pub const ALL: &'static [ParamId] = &[$(ParamId::$id,)*];
        }
    };
}

param_layout! {
    GlobalW1 => weight("global.w1", &[768, 512], 768, 512),
    GlobalB1 => bias("global.b1", &[512]),
    GlobalW2 => weight("global.w2", &[512, 256], 512, 256),
    GlobalB2 => bias("global.b2", &[256]),
    SpectralW1 => weight("spectral.w1", &[9, 32], 9, 32),
    SpectralB1 => bias("spectral.b1", &[32]),
    SpectralW2 => weight("spectral.w2", &[32, 16], 32, 16),
    SpectralB2 => bias("spectral.b2", &[16]),
    StatW1 => weight("stat.w1", &[8, 16], 8, 16),
    StatB1 => bias("stat.b1", &[16]),
    StatW2 => weight("stat.w2", &[16, 8], 16, 8),
    StatB2 => bias("stat.b2", &[8]),
    PatchW1 => weight("patch.w1", &[243, 64], 243, 64),
    PatchB1 => bias("patch.b1", &[64]),
    PatchW2 => weight("patch.w2", &[64, 1], 64, 1),
    PatchB2 => bias("patch.b2", &[1]),
    SpatialK3 => weight("spatial.k3", &[3, 3], 9, 9),
    SpatialK5 => weight("spatial.k5", &[5, 5], 25, 25),
    SpatialK7 => weight("spatial.k7", &[7, 7], 49, 49),
    SpatialW => weight("spatial.w", &[6, 32], 6, 32),
    SpatialB => bias("spatial.b", &[32]),
    ClassifierW1 => weight("classifier.w1", &[314, 256], 314, 256),
    ClassifierB1 => bias("classifier.b1", &[256]),
    ClassifierW2 => weight("classifier.w2", &[256, 128], 256, 128),
    ClassifierB2 => bias("classifier.b2", &[128]),
    ClassifierW3 => weight("classifier.w3", &[128, 1], 128, 1),
    ClassifierB3 => bias("classifier.b3", &[1]),
}

impl ParamId {
    pub fn spec(self) -> &'static ParamSpec {
        &PARAM_LAYOUT[self as usize]
    }

    pub fn from_name(name: &str) -> Option<ParamId> {
        PARAM_LAYOUT
            .iter()
            .position(|s| s.name == name)
            .map(|i| ParamId::ALL[i])
    }
}

/// Total learnable scalars across the layout.
pub fn parameter_count() -> usize {
    PARAM_LAYOUT
        .iter()
        .map(|s| s.shape.iter().product::<usize>())
        .sum()
}

/// One tensor per [`ParamId`]. Also used for gradients and optimizer moments,
/// which share the parameter layout exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn zeros() -> Self {
        ModelParams {
            tensors: PARAM_LAYOUT
                .iter()
                .map(|s| Tensor::zeros(s.shape))
                .collect(),
        }
    }

    /// Glorot-uniform weights and zero biases, drawn in layout order from the
    /// `init` stream of `seed`.
    pub fn init(seed: u64) -> Self {
        let mut r = rng::stream(seed, tags::INIT, &[]);
        ModelParams {
            tensors: PARAM_LAYOUT
                .iter()
                .map(|s| match s.kind {
                    ParamKind::Weight { fan_in, fan_out } => {
                        Tensor::glorot_uniform(s.shape, fan_in, fan_out, &mut r)
                    }
                    ParamKind::Bias => Tensor::zeros(s.shape),
                })
                .collect(),
        }
    }

    /// Assemble from tensors in layout order, checking every shape.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != PARAM_LAYOUT.len() {
            return Err(Error::shape(format!(
                "expected {} parameter tensors, got {}",
                PARAM_LAYOUT.len(),
                tensors.len()
            )));
        }
        for (t, s) in tensors.iter().zip(PARAM_LAYOUT) {
            if t.shape() != s.shape {
                return Err(Error::shape(format!(
                    "{} has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
        }
        Ok(ModelParams { tensors })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        ParamId::ALL.iter().copied().zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor)> {
        ParamId::ALL.iter().copied().zip(self.tensors.iter_mut())
    }

    pub fn add_assign(&mut self, other: &ModelParams) -> Result<()> {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f32) {
        self.tensors.iter_mut().for_each(|t| t.scale(factor));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

impl Index<ParamId> for ModelParams {
    type Output = Tensor;

    fn index(&self, id: ParamId) -> &Tensor {
        &self.tensors[id as usize]
    }
}

impl IndexMut<ParamId> for ModelParams {
    fn index_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id as usize]
    }
}
