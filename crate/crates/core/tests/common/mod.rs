#![allow(dead_code)]

pub mod oracles;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use spectra::model::{loss_and_gradients, Mode, ModelParams, ParamId};
use spectra::preprocess::{
    FftFeatures, PatchMatrix, RgbImage, StatFeatures, GRID, PATCH_COUNT, PATCH_DIM,
};
use spectra::record::{Label, MultiViewRecord, RecordSource};
use spectra::rng::{self, StreamRng};
use spectra::semantic::{stub, ContentId, GlobalDescriptor};

pub fn normals(r: &mut StreamRng, n: usize, scale: f32) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let v: f32 = StandardNormal.sample(r);
            v * scale
        })
        .collect()
}

pub fn random_image(seed: u64, w: usize, h: usize) -> RgbImage {
    let mut r = rng::stream(seed, "test-image", &[w as u64, h as u64]);
    RgbImage::from_fn(w, h, |_, _| [r.random(), r.random(), r.random()]).unwrap()
}

/// A photo-like image: a 1/f amplitude spectrum of random cosines, a few
/// hard-edged shapes and mild sensor noise.
pub fn natural_image(seed: u64, w: usize, h: usize) -> RgbImage {
    let mut r = rng::stream(seed, "test-natural", &[]);
    let waves: Vec<(f64, f64, f64, f64, [f64; 3])> = (0..48)
        .map(|_| {
            let f = r.random_range(1.0f64..40.0);
            let theta = r.random_range(0.0..std::f64::consts::TAU);
            let phase = r.random_range(0.0..std::f64::consts::TAU);
            let tint = [
                r.random_range(0.6..1.0),
                r.random_range(0.6..1.0),
                r.random_range(0.6..1.0),
            ];
            (f * theta.cos(), f * theta.sin(), phase, 60.0 / f, tint)
        })
        .collect();
    let shapes: Vec<(usize, usize, usize, usize, [f64; 3])> = (0..5)
        .map(|_| {
            let x0 = r.random_range(0..w);
            let y0 = r.random_range(0..h);
            let sw = r.random_range(w / 10..w / 3);
            let sh = r.random_range(h / 10..h / 3);
            let c = [
                r.random_range(-50.0..50.0),
                r.random_range(-50.0..50.0),
                r.random_range(-50.0..50.0),
            ];
            (x0, y0, sw, sh, c)
        })
        .collect();
    let noise = Normal::new(0.0, 2.0).unwrap();
    RgbImage::from_fn(w, h, |x, y| {
        let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
        let mut px = [128.0f64; 3];
        for &(fx, fy, phase, amp, tint) in &waves {
            let s = amp * (std::f64::consts::TAU * (fx * u + fy * v) + phase).cos();
            for c in 0..3 {
                px[c] += s * tint[c];
            }
        }
        for &(x0, y0, sw, sh, col) in &shapes {
            if (x0..x0 + sw).contains(&x) && (y0..y0 + sh).contains(&y) {
                for c in 0..3 {
                    px[c] += col[c];
                }
            }
        }
        px.map(|v| (v + noise.sample(&mut r)).round().clamp(0.0, 255.0) as u8)
    })
    .unwrap()
}

/// A record with unit-scale random views, used for gradient checks.
pub fn miniature_record(seed: u64) -> MultiViewRecord {
    let mut r = rng::stream(seed, "test-record", &[]);
    let global = GlobalDescriptor::new(normals(&mut r, 768, 1.0)).unwrap();
    let fft = FftFeatures(normals(&mut r, 9, 1.0).try_into().unwrap());
    let stat = StatFeatures(normals(&mut r, 8, 1.0).try_into().unwrap());
    let patches = PatchMatrix::from_vec(normals(&mut r, PATCH_COUNT * PATCH_DIM, 1.0)).unwrap();
    let mut id = [0u8; 32];
    r.fill(&mut id);
    MultiViewRecord {
        id: ContentId(id),
        label: if seed % 2 == 0 {
            Label::Real
        } else {
            Label::Fake
        },
        global,
        fft,
        stat,
        patches: Some(patches),
    }
}

/// Parameters widened to f64, indexed like `ParamId::ALL`.
pub type WideParams = Vec<Vec<f64>>;

pub fn widen(params: &ModelParams) -> WideParams {
    params
        .tensors()
        .iter()
        .map(|t| t.data().iter().map(|&v| f64::from(v)).collect())
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// `x · W + b` with `W` stored input-major.
fn affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut out = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(&w[i * n..(i + 1) * n]) {
            *o += xi * wv;
        }
    }
    out
}

fn two_layer(x: &[f64], p: &WideParams, ids: [ParamId; 4]) -> Vec<f64> {
    let h: Vec<f64> = affine(x, &p[ids[0] as usize], &p[ids[1] as usize])
        .into_iter()
        .map(gelu)
        .collect();
    affine(&h, &p[ids[2] as usize], &p[ids[3] as usize])
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}

/// Inference-mode logit computed from scratch in f64.
pub fn reference_logit(record: &MultiViewRecord, p: &WideParams) -> f64 {
    reference_forward(record, p, None).0
}

/// The reference logit and the winning index of each max pooling, in
/// network order. With `frozen`, each max pooling reads the given index
/// instead of its own winner, which selects one smooth piece of the
/// network.
pub fn reference_forward(
    record: &MultiViewRecord,
    p: &WideParams,
    frozen: Option<&[usize]>,
) -> (f64, Vec<usize>) {
    let mut winners = Vec::new();
    let mut pick = |v: &[f64]| {
        let w = argmax(v);
        let chosen = frozen.map_or(w, |f| f[winners.len()]);
        winners.push(w);
        v[chosen]
    };
    use ParamId::*;
    let wide = |v: &[f32]| v.iter().map(|&a| f64::from(a)).collect::<Vec<f64>>();
    let mut fused = two_layer(
        &wide(record.global.as_slice()),
        p,
        [GlobalW1, GlobalB1, GlobalW2, GlobalB2],
    );
    fused.extend(two_layer(
        &wide(record.fft.as_slice()),
        p,
        [SpectralW1, SpectralB1, SpectralW2, SpectralB2],
    ));
    fused.extend(two_layer(
        &wide(record.stat.as_slice()),
        p,
        [StatW1, StatB1, StatW2, StatB2],
    ));
    let patches = record.patches.as_ref().unwrap();
    let scores: Vec<f64> = (0..PATCH_COUNT)
        .map(|i| {
            two_layer(
                &wide(patches.row(i)),
                p,
                [PatchW1, PatchB1, PatchW2, PatchB2],
            )[0]
        })
        .collect();
    let mut pooled = Vec::new();
    for id in [SpatialK3, SpatialK5, SpatialK7] {
        let kern = &p[id as usize];
        let k = (kern.len() as f64).sqrt() as usize;
        let r = (k / 2) as isize;
        let g = GRID as isize;
        let mut act = Vec::with_capacity(PATCH_COUNT);
        for i in 0..g {
            for j in 0..g {
                let mut s = 0.0;
                for a in 0..k as isize {
                    for b in 0..k as isize {
                        let (y, x) = (i + a - r, j + b - r);
                        if (0..g).contains(&y) && (0..g).contains(&x) {
                            s += kern[(a * k as isize + b) as usize] * scores[(y * g + x) as usize];
                        }
                    }
                }
                act.push(gelu(s));
            }
        }
        pooled.push(act.iter().sum::<f64>() / act.len() as f64);
        pooled.push(pick(&act));
    }
    fused.extend(affine(
        &pooled,
        &p[SpatialW as usize],
        &p[SpatialB as usize],
    ));
    fused.push(scores.iter().sum::<f64>() / PATCH_COUNT as f64);
    fused.push(pick(&scores));
    let h: Vec<f64> = affine(&fused, &p[ClassifierW1 as usize], &p[ClassifierB1 as usize])
        .into_iter()
        .map(gelu)
        .collect();
    let h: Vec<f64> = affine(&h, &p[ClassifierW2 as usize], &p[ClassifierB2 as usize])
        .into_iter()
        .map(gelu)
        .collect();
    let z = affine(&h, &p[ClassifierW3 as usize], &p[ClassifierB3 as usize])[0];
    (z, winners)
}

/// Binary cross-entropy of one logit, in f64.
pub fn reference_loss(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

#[derive(Debug)]
pub struct GroupCheck {
    pub id: ParamId,
    /// Largest absolute deviation over the checked elements divided by the
    /// largest checked gradient magnitude.
    pub error: f64,
    /// Checked elements whose ±step interval moves a max-pooling winner.
    pub kinked: usize,
}

/// Autodiff against central differences of the f64 reference loss, per
/// parameter group, on the smooth piece selected at the unperturbed
/// parameters. Checks the dominant element plus `extra` random ones.
pub fn gradient_check(
    record: &MultiViewRecord,
    params: &ModelParams,
    seed: u64,
    extra: usize,
) -> Vec<GroupCheck> {
    const STEP: f64 = 1e-3;
    let y = f64::from(record.label.as_f32());
    let analytic = loss_and_gradients(record, params, Mode::Inference)
        .unwrap()
        .grads;
    let mut wide = widen(params);
    let (_, base) = reference_forward(record, &wide, None);
    let mut pick = rng::stream(seed, "test-pick", &[]);
    let mut out = Vec::new();
    for &id in ParamId::ALL {
        let g = analytic[id].data();
        let top = (0..g.len())
            .max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs()))
            .unwrap();
        let mut idx = vec![top];
        idx.extend((0..extra).map(|_| pick.random_range(0..g.len())));
        let (mut worst_err, mut scale) = (0f64, 0f64);
        let mut kinked = 0;
        for &i in &idx {
            let orig = wide[id as usize][i];
            wide[id as usize][i] = orig + STEP;
            let (plus, plus_winners) = reference_forward(record, &wide, Some(&base));
            wide[id as usize][i] = orig - STEP;
            let (minus, minus_winners) = reference_forward(record, &wide, Some(&base));
            wide[id as usize][i] = orig;
            if plus_winners != base || minus_winners != base {
                kinked += 1;
            }
            let numeric = (reference_loss(plus, y) - reference_loss(minus, y)) / (2.0 * STEP);
            worst_err = worst_err.max((numeric - g[i] as f64).abs());
            scale = scale.max(numeric.abs()).max((g[i] as f64).abs());
        }
        let error = if scale == 0.0 { 0.0 } else { worst_err / scale };
        out.push(GroupCheck { id, error, kinked });
    }
    out
}

pub const TOY_PLANTED: usize = 64;

/// Synthetic records: even indices real, odd indices fake. Fakes carry
/// +0.5 on all nine spectral features and a ±2 checkerboard in
/// `TOY_PLANTED` random patches. Records are generated on demand.
pub struct ToyData {
    pub len: usize,
    pub seed: u64,
}

impl ToyData {
    pub fn label(i: usize) -> Label {
        if i % 2 == 0 {
            Label::Real
        } else {
            Label::Fake
        }
    }

    pub fn planted(&self, i: usize) -> Vec<usize> {
        if Self::label(i) == Label::Real {
            return Vec::new();
        }
        let mut r = rng::stream(self.seed, "toy-planted", &[i as u64]);
        rand::seq::index::sample(&mut r, PATCH_COUNT, TOY_PLANTED).into_vec()
    }
}

impl RecordSource for ToyData {
    fn len(&self) -> usize {
        self.len
    }

    fn record(&self, i: usize) -> spectra::Result<MultiViewRecord> {
        let label = Self::label(i);
        let mut r = rng::stream(self.seed, "toy", &[i as u64]);
        let mut id = [0u8; 32];
        r.fill(&mut id);
        let id = ContentId(id);
        let offset = if label == Label::Fake { 0.5 } else { 0.0 };
        let fft = FftFeatures(std::array::from_fn(|_| {
            let v: f32 = StandardNormal.sample(&mut r);
            0.5 * v + offset
        }));
        let stat = StatFeatures(normals(&mut r, 8, 0.5).try_into().unwrap());
        let mut data = normals(&mut r, PATCH_COUNT * PATCH_DIM, 1.0);
        for p in self.planted(i) {
            for (k, v) in data[p * PATCH_DIM..(p + 1) * PATCH_DIM]
                .iter_mut()
                .enumerate()
            {
                *v = if k % 2 == 0 { 2.0 } else { -2.0 };
            }
        }
        Ok(MultiViewRecord {
            id,
            label,
            global: stub(&id),
            fft,
            stat,
            patches: Some(PatchMatrix::from_vec(data)?),
        })
    }
}
