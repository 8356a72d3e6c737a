//! Independent reference implementations checked against the library.

mod common;

use rand::Rng;
use rustfft::num_complex::Complex;

use spectra::autodiff::{sigmoid, Tape, Var};
use spectra::degrade::{gaussian_blur, gaussian_kernel, jpeg_reencode, mean_absolute_error};
use spectra::evaluation::{average_precision, mean_average_precision};
use spectra::model::{
    encode_spectral, encode_stat, forward, spatial_block, Mode, ModelParams, ParamId,
};
use spectra::preprocess::{
    fft_features, fold_patches, normalize, stat_features, unfold_patches, NormalizedImage,
    RgbImage, COVERED, GRID, INPUT_SIZE,
};
use spectra::record::Label;
use spectra::rng;
use spectra::semantic::{stub, ContentId};
use spectra::tensor::{depthwise_conv2d, gelu_scalar, ReduceKind, Tensor};
use spectra::train::{adamw_step, AdamWConfig, OptimizerState};

use common::oracles::{auc_matches_pairwise_oracle, fft_matches_direct_dft, two_pass_moments};
use common::{
    gradient_check, miniature_record, natural_image, normals, random_image, reference_logit, widen,
};

fn random_tensor(seed: u64, shape: &[usize]) -> Tensor {
    let mut r = rng::stream(
        seed,
        "oracle-tensor",
        &[shape.len() as u64, shape[0] as u64],
    );
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), normals(&mut r, n, 1.0)).unwrap()
}

/// Largest |autodiff − central difference| over all input elements,
/// relative to the largest gradient magnitude seen.
fn finite_difference_error(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    const STEP: f32 = 1e-3;
    let eval = |inputs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars);
        (tape.value(out).item().unwrap() as f64, tape, vars, out)
    };
    let (_, tape, vars, out) = eval(inputs);
    let grads = tape.backward(out).unwrap();
    let (mut err, mut scale) = (0f64, 0f64);
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).unwrap().data().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * STEP as f64);
            err = err.max((numeric - a as f64).abs());
            scale = scale.max(numeric.abs()).max((a as f64).abs());
        }
    }
    err / scale
}

#[test]
fn matmul_gradients_match_finite_differences() {
    for seed in 0..20 {
        let inputs = [
            random_tensor(seed, &[5, 4]),
            random_tensor(seed + 100, &[4, 3]),
        ];
        let err = finite_difference_error(&inputs, |t, v| {
            let c = t.matmul(v[0], v[1]).unwrap();
            t.reduce_all(c, ReduceKind::Sum).unwrap()
        });
        assert!(err < 1e-3, "seed {seed}: {err}");
    }
}

#[test]
fn composite_gradients_match_finite_differences() {
    for seed in 0..20 {
        let inputs = [
            random_tensor(seed, &[3, 6]),
            random_tensor(seed + 1, &[6, 4]),
            random_tensor(seed + 2, &[4]),
            random_tensor(seed + 3, &[3, 4]),
            random_tensor(seed + 4, &[1, 7, 7]),
            random_tensor(seed + 5, &[3, 3]),
        ];
        let err = finite_difference_error(&inputs, |t, v| {
            let h = t.matmul(v[0], v[1]).unwrap();
            let h = t.add_row_bias(h, v[2]).unwrap();
            let h = t.gelu(h).unwrap();
            let mut masks = rng::stream(seed, "oracle-dropout", &[]);
            let h = t.dropout(h, 0.25, true, &mut masks).unwrap();
            let h = t.mul(h, v[3]).unwrap();
            let h = t.add(h, v[3]).unwrap();
            let rows = t.reduce(h, ReduceKind::Std, &[1]).unwrap();
            let rows = t.reshape(rows, &[1, 3]).unwrap();
            let c = t.depthwise_conv2d(v[4], v[5]).unwrap();
            let c = t.gelu(c).unwrap();
            let cm = t.reduce_all(c, ReduceKind::Mean).unwrap();
            let cm = t.reshape(cm, &[1, 1]).unwrap();
            let cx = t.reduce_all(c, ReduceKind::Max).unwrap();
            let cx = t.reshape(cx, &[1, 1]).unwrap();
            let cols = t.reduce(h, ReduceKind::Mean, &[0]).unwrap();
            let cols = t.reshape(cols, &[1, 4]).unwrap();
            let all = t.concat(&[rows, cm, cx, cols]).unwrap();
            let z = t.reduce_all(all, ReduceKind::Sum).unwrap();
            let z = t.reshape(z, &[1, 1]).unwrap();
            t.bce_with_logits(z, &[(seed % 2) as f32]).unwrap()
        });
        assert!(err < 1e-3, "seed {seed}: {err}");
    }
}

#[test]
fn reference_forward_agrees_with_model() {
    for seed in 0..3 {
        let record = miniature_record(seed);
        let params = ModelParams::init(seed + 50);
        let z = forward(&record, &params, Mode::Inference).unwrap().logit as f64;
        let reference = reference_logit(&record, &widen(&params));
        assert!(
            (z - reference).abs() <= 1e-5 * reference.abs().max(1.0),
            "seed {seed}: {z} vs {reference}"
        );
    }
}

#[test]
fn every_parameter_group_matches_finite_differences() {
    for seed in 0..4 {
        let record = miniature_record(seed);
        let params = ModelParams::init(seed + 50);
        for c in gradient_check(&record, &params, seed, 3) {
            assert!(
                c.error <= 1e-2,
                "seed {seed} {}: {}",
                c.id.spec().name,
                c.error
            );
        }
    }
}

#[test]
fn bce_gradient_is_sigmoid_minus_label() {
    let mut r = rng::stream(3, "oracle-bce", &[]);
    for _ in 0..200 {
        let z: f32 = r.random_range(-30.0..30.0);
        let y = if r.random::<bool>() { 1.0 } else { 0.0 };
        let mut t = Tape::new();
        let zv = t.param(Tensor::new(vec![1, 1], vec![z]).unwrap());
        let loss = t.bce_with_logits(zv, &[y]).unwrap();
        let g = t.backward(loss).unwrap().get(zv).unwrap().data()[0];
        let expected = 1.0 / (1.0 + (-(z as f64)).exp()) - y as f64;
        assert!(
            (g as f64 - expected).abs() <= 1e-6,
            "z {z} y {y}: {g} vs {expected}"
        );
    }
}

#[test]
fn bce_large_logit_matches_wide_naive_formula() {
    let stable = spectra::train::bce_with_logits(&[20.0], &[1.0]).unwrap() as f64;
    let naive = -(1.0 / (1.0 + (-20f64).exp())).ln();
    assert!((stable - naive).abs() / naive < 1e-6, "{stable} vs {naive}");
    assert!((stable - 2.06e-9).abs() < 1e-11);
}

/// Input gradient of a two-layer encoder, built on the tape, against finite
/// differences of the library encoder.
fn encoder_input_gradient_error(
    seed: u64,
    ids: [ParamId; 4],
    input: Vec<f32>,
    run: impl Fn(&[f32]) -> Vec<f32>,
) -> f64 {
    let params = ModelParams::init(seed);
    let weights: Vec<f32> = {
        let mut r = rng::stream(seed, "oracle-readout", &[]);
        normals(&mut r, run(&input).len(), 1.0)
    };
    let readout = |out: &[f32]| {
        out.iter()
            .zip(&weights)
            .map(|(a, b)| (a * b) as f64)
            .sum::<f64>()
    };

    let mut t = Tape::new();
    let x = t.param(Tensor::row(&input));
    let p: Vec<Var> = ids
        .iter()
        .map(|&id| t.constant(params[id].clone()))
        .collect();
    let h = t.matmul(x, p[0]).unwrap();
    let h = t.add_row_bias(h, p[1]).unwrap();
    let h = t.gelu(h).unwrap();
    let h = t.matmul(h, p[2]).unwrap();
    let out = t.add_row_bias(h, p[3]).unwrap();
    assert_eq!(t.value(out).data(), run(&input).as_slice());
    let w = t.constant(Tensor::row(&weights));
    let prod = t.mul(out, w).unwrap();
    let s = t.reduce_all(prod, ReduceKind::Sum).unwrap();
    let g = t.backward(s).unwrap().get(x).unwrap().data().to_vec();

    let (mut err, mut scale) = (0f64, 0f64);
    for i in 0..input.len() {
        let (mut plus, mut minus) = (input.clone(), input.clone());
        plus[i] += 1e-3;
        minus[i] -= 1e-3;
        let numeric = (readout(&run(&plus)) - readout(&run(&minus))) / 2e-3;
        err = err.max((numeric - g[i] as f64).abs());
        scale = scale.max(numeric.abs()).max((g[i] as f64).abs());
    }
    err / scale
}

#[test]
fn small_encoder_input_gradients_match_finite_differences() {
    use spectra::preprocess::{FftFeatures, StatFeatures};
    for seed in 0..10 {
        let mut r = rng::stream(seed, "oracle-enc", &[]);
        let params = ModelParams::init(seed);
        let x9 = normals(&mut r, 9, 1.0);
        let err = encoder_input_gradient_error(
            seed,
            [
                ParamId::SpectralW1,
                ParamId::SpectralB1,
                ParamId::SpectralW2,
                ParamId::SpectralB2,
            ],
            x9,
            |x| encode_spectral(&FftFeatures(x.try_into().unwrap()), &params).unwrap(),
        );
        assert!(err < 1e-3, "spectral seed {seed}: {err}");
        let x8 = normals(&mut r, 8, 1.0);
        let err = encoder_input_gradient_error(
            seed,
            [
                ParamId::StatW1,
                ParamId::StatB1,
                ParamId::StatW2,
                ParamId::StatB2,
            ],
            x8,
            |x| encode_stat(&StatFeatures(x.try_into().unwrap()), &params).unwrap(),
        );
        assert!(err < 1e-3, "stat seed {seed}: {err}");
    }
}

#[test]
fn gelu_at_one_matches_quadrature() {
    // Composite Simpson rule for the normal pdf on [-12, 1].
    let n = 200_000;
    let (a, b) = (-12.0f64, 1.0f64);
    let h = (b - a) / n as f64;
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(a) + pdf(b);
    for i in 1..n {
        s += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let phi = s * h / 3.0;
    assert!((gelu_scalar(1.0) as f64 - phi).abs() < 1e-6);
    assert_eq!(gelu_scalar(0.0), 0.0);
    assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
}

#[test]
fn depthwise_conv_matches_nested_loops() {
    for (seed, (h, w, k)) in [(7, 7, 3), (9, 11, 5), (6, 13, 7), (49, 49, 7)]
        .into_iter()
        .enumerate()
    {
        let x = random_tensor(seed as u64, &[1, h, w]);
        let kern = random_tensor(seed as u64 + 10, &[k, k]);
        let r = k / 2;
        let mut padded = vec![0f32; (h + 2 * r) * (w + 2 * r)];
        for i in 0..h {
            for j in 0..w {
                padded[(i + r) * (w + 2 * r) + j + r] = x.data()[i * w + j];
            }
        }
        let got = depthwise_conv2d(&x, &kern).unwrap();
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0f32;
                for a in 0..k {
                    for b in 0..k {
                        acc += kern.data()[a * k + b] * padded[(i + a) * (w + 2 * r) + j + b];
                    }
                }
                assert_eq!(got.data()[i * w + j], acc, "({i},{j}) k={k}");
            }
        }
    }
}

#[test]
fn fft_matches_direct_summation() {
    let worst = fft_matches_direct_dft(0..20);
    assert!(worst < 1e-3, "{worst}");
}

/// Separable DFT with an exact twiddle table, then the features straight
/// from their definitions.
fn reference_fft_features(x: &NormalizedImage) -> [f64; 9] {
    let n = INPUT_SIZE;
    let twiddle: Vec<Complex<f64>> = (0..n)
        .map(|k| Complex::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 / n as f64))
        .collect();
    let mut out = [0f64; 9];
    for c in 0..3 {
        let plane = x.channel(c);
        let mut rows = vec![Complex::new(0.0, 0.0); n * n];
        for y in 0..n {
            for v in 0..n {
                let mut acc = Complex::new(0.0, 0.0);
                for xx in 0..n {
                    acc += twiddle[(v * xx) % n] * plane[y * n + xx] as f64;
                }
                rows[y * n + v] = acc;
            }
        }
        let mut spectrum = vec![Complex::new(0.0, 0.0); n * n];
        for u in 0..n {
            for v in 0..n {
                let mut acc = Complex::new(0.0, 0.0);
                for y in 0..n {
                    acc += twiddle[(u * y) % n] * rows[y * n + v];
                }
                spectrum[u * n + v] = acc;
            }
        }
        let count = (n * n) as f64;
        let logs: Vec<f64> = spectrum.iter().map(|z| (1.0 + z.norm()).ln()).collect();
        let mean = logs.iter().sum::<f64>() / count;
        let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / count;
        let eta = spectrum
            .iter()
            .map(|z| {
                let phi = z.im.atan2(z.re);
                ((phi + std::f64::consts::PI) / (2.0 * std::f64::consts::PI) - 0.5).powi(2)
            })
            .sum::<f64>()
            / count;
        out[3 * c] = mean;
        out[3 * c + 1] = var.sqrt();
        out[3 * c + 2] = eta.sqrt();
    }
    out
}

#[test]
fn fft_features_match_reference_implementation() {
    for seed in 0..2 {
        let x = normalize(&random_image(seed, INPUT_SIZE, INPUT_SIZE)).unwrap();
        let got = fft_features(&x).unwrap();
        let want = reference_fft_features(&x);
        for (g, w) in got.as_slice().iter().zip(want) {
            assert!(
                (*g as f64 - w).abs() <= 1e-4 * w.abs().max(1.0),
                "{g} vs {w}"
            );
        }
    }
}

#[test]
fn stat_features_match_two_pass_reference() {
    for seed in 0..10 {
        let img = if seed % 2 == 0 {
            random_image(seed, INPUT_SIZE, INPUT_SIZE)
        } else {
            natural_image(seed, INPUT_SIZE, INPUT_SIZE)
        };
        let x = normalize(&img).unwrap();
        let got = stat_features(&x).unwrap();
        for (g, w) in got.as_slice().iter().zip(two_pass_moments(&x)) {
            assert!(
                (*g as f64 - w).abs() <= 1e-5 * w.abs().max(1.0),
                "seed {seed}: {g} vs {w}"
            );
        }
    }
}

#[test]
fn fold_inverts_unfold_on_covered_region() {
    for seed in 0..3 {
        let x = normalize(&random_image(seed, INPUT_SIZE, INPUT_SIZE)).unwrap();
        let folded = fold_patches(&unfold_patches(&x));
        for c in 0..3 {
            for y in 0..INPUT_SIZE {
                for xx in 0..INPUT_SIZE {
                    let i = c * NormalizedImage::PLANE + y * INPUT_SIZE + xx;
                    if y < COVERED && xx < COVERED {
                        assert_eq!(folded[i].to_bits(), x.data()[i].to_bits());
                    } else {
                        assert_eq!(folded[i], 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn stub_descriptors_are_nearly_orthogonal() {
    let mut r = rng::stream(1, "oracle-ids", &[]);
    let mut id = || {
        let mut b = [0u8; 32];
        r.fill(&mut b);
        ContentId(b)
    };
    let mut close = 0;
    for _ in 0..10_000 {
        let (a, b) = (stub(&id()), stub(&id()));
        let cos: f64 = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x * y) as f64)
            .sum();
        if cos.abs() >= 0.3 {
            close += 1;
        }
    }
    assert!(close <= 10, "{close} of 10000 pairs had |cos| >= 0.3");
}

#[test]
fn blur_of_impulse_matches_direct_gaussian() {
    let n = 31;
    let img = RgbImage::from_fn(n, n, |x, y| {
        if x == 15 && y == 15 {
            [255, 128, 7]
        } else {
            [0, 0, 0]
        }
    })
    .unwrap();
    let sigma = 1.5;
    let out = gaussian_blur(&img, sigma).unwrap();
    let r = (3.0 * sigma).ceil() as i64;
    let weight = |dx: i64, dy: i64| (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
    let mut total = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            total += weight(dx, dy);
        }
    }
    for y in 0..n {
        for x in 0..n {
            let (dx, dy) = (x as i64 - 15, y as i64 - 15);
            let w = if dx.abs() <= r && dy.abs() <= r {
                weight(dx, dy) / total
            } else {
                0.0
            };
            for (c, amp) in [255.0, 128.0, 7.0].into_iter().enumerate() {
                let expected = (w * amp).round();
                let got = out.pixel(x, y)[c] as f64;
                assert!(
                    (got - expected).abs() <= 1.0,
                    "({x},{y},{c}): {got} vs {expected}"
                );
            }
        }
    }
    assert!((gaussian_kernel(sigma).iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn blur_preserves_mean_on_interior_dominated_images() {
    let img = natural_image(4, 128, 128);
    let mean =
        |i: &RgbImage| i.pixels().iter().map(|&p| p as f64).sum::<f64>() / i.pixels().len() as f64;
    for sigma in [0.5, 1.5, 2.5] {
        let out = gaussian_blur(&img, sigma).unwrap();
        assert!((mean(&out) - mean(&img)).abs() <= 1.0, "sigma {sigma}");
    }
}

fn max_deviation(a: &RgbImage, b: &RgbImage) -> u8 {
    a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| x.abs_diff(*y))
        .max()
        .unwrap()
}

fn grey(img: &RgbImage) -> RgbImage {
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let p = img.pixel(x, y);
        let v = ((u32::from(p[0]) + u32::from(p[1]) + u32::from(p[2])) / 3) as u8;
        [v, v, v]
    })
    .unwrap()
}

#[test]
fn jpeg_q100_is_near_lossless_on_chroma_free_images() {
    for seed in 0..6 {
        let img = grey(&natural_image(seed, 96, 80));
        let once = jpeg_reencode(&img, 100).unwrap();
        assert!(max_deviation(&img, &once) <= 2, "seed {seed}");
        assert!(
            max_deviation(&once, &jpeg_reencode(&once, 100).unwrap()) <= 2,
            "seed {seed}"
        );
    }
}

#[test]
fn jpeg_q100_colour_round_trip_stays_within_measured_bound() {
    for seed in 0..4 {
        let img = natural_image(seed, 96, 80);
        assert!(
            max_deviation(&img, &jpeg_reencode(&img, 100).unwrap()) <= 4,
            "seed {seed}"
        );
    }
}

#[test]
fn jpeg_lower_quality_loses_more() {
    for seed in 0..4 {
        let original = natural_image(seed, 96, 80);
        let q30 = mean_absolute_error(&original, &jpeg_reencode(&original, 30).unwrap()).unwrap();
        let q90 = mean_absolute_error(&original, &jpeg_reencode(&original, 90).unwrap()).unwrap();
        assert!(q30 > q90, "seed {seed}: {q30} <= {q90}");
    }
}

#[test]
fn auc_equals_pairwise_oracle() {
    auc_matches_pairwise_oracle(50);
}

#[test]
fn average_precision_hand_ranked_cases() {
    use Label::{Fake, Real};
    let s = [0.9, 0.8, 0.7];
    assert_eq!(
        average_precision(&s, &[Fake, Real, Real], Fake).unwrap(),
        1.0
    );
    assert!((average_precision(&s, &[Fake, Real, Fake], Fake).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    // Positives at ranks 2 and 3: (1/2 + 2/3) / 2.
    assert!((average_precision(&s, &[Real, Fake, Fake], Fake).unwrap() - 7.0 / 12.0).abs() < 1e-15);
    // Real class ranked by negated scores: the real at rank 3 becomes rank 1.
    assert_eq!(
        average_precision(&[-0.9, -0.8, -0.7], &[Fake, Fake, Real], Real).unwrap(),
        1.0
    );
    let map = mean_average_precision(&s, &[Fake, Real, Fake]).unwrap();
    let real_ap = average_precision(&[-0.9, -0.8, -0.7], &[Fake, Real, Fake], Real).unwrap();
    assert!((real_ap - 0.5).abs() < 1e-15);
    assert!((map - (5.0 / 6.0 + 0.5) / 2.0).abs() < 1e-15);
}

/// Plain Adam in f64 over flat vectors.
struct ReferenceAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl ReferenceAdam {
    fn step(&mut self, theta: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        for i in 0..theta.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = self.m[i] / (1.0 - b1.powi(self.t));
            let v_hat = self.v[i] / (1.0 - b2.powi(self.t));
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

fn flatten(p: &ModelParams) -> Vec<f64> {
    p.tensors()
        .iter()
        .flat_map(|t| t.data().iter().map(|&v| v as f64))
        .collect()
}

#[test]
fn adamw_without_decay_follows_adam() {
    let mut params = ModelParams::init(8);
    let target = ModelParams::init(9);
    let mut state = OptimizerState::new();
    let cfg = AdamWConfig {
        lr: 1e-2,
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut theta = flatten(&params);
    let goal = flatten(&target);
    let mut reference = ReferenceAdam {
        m: vec![0.0; theta.len()],
        v: vec![0.0; theta.len()],
        t: 0,
    };
    for _ in 0..25 {
        // Gradient of ½‖θ − target‖², evaluated on the library's parameters.
        let mut grads = params.clone();
        for ((_, g), (_, t)) in grads.iter_mut().zip(target.iter()) {
            for (a, b) in g.data_mut().iter_mut().zip(t.data()) {
                *a -= b;
            }
        }
        let g = flatten(&grads);
        adamw_step(&mut params, &grads, &mut state, &cfg).unwrap();
        reference.step(&mut theta, &g, 1e-2);
        for (a, b) in flatten(&params).iter().zip(&theta) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
    assert_eq!(state.step(), 25);
    // The reference keeps converging towards the target.
    let dist: f64 = theta.iter().zip(&goal).map(|(a, b)| (a - b).powi(2)).sum();
    assert!(
        dist < flatten(&ModelParams::init(8))
            .iter()
            .zip(&goal)
            .map(|(a, b)| (a - b).powi(2))
            .sum()
    );
}

#[test]
fn adamw_single_unit_gradient_step() {
    let mut params = ModelParams::init(2);
    let before = params.clone();
    let mut grads = ModelParams::zeros();
    grads[ParamId::ClassifierB3].data_mut()[0] = 1.0;
    grads[ParamId::ClassifierW3].data_mut()[0] = 1.0;
    let mut state = OptimizerState::new();
    let cfg = AdamWConfig {
        lr: 1e-3,
        weight_decay: 0.0,
        ..Default::default()
    };
    adamw_step(&mut params, &grads, &mut state, &cfg).unwrap();
    // t = 1: m̂ = 1, v̂ = 1, step = η / (1 + ε).
    let step = 1e-3f64 / (1.0 + 1e-8);
    for id in [ParamId::ClassifierB3, ParamId::ClassifierW3] {
        let expected = (before[id].data()[0] as f64 - step) as f32;
        assert_eq!(params[id].data()[0], expected);
    }
    assert_eq!(
        params[ParamId::ClassifierW3].data()[1..],
        before[ParamId::ClassifierW3].data()[1..]
    );
}

#[test]
fn spatial_block_on_uniform_scores_has_closed_form() {
    let params = ModelParams::init(12);
    for v in [-1.5f32, 0.25, 2.0] {
        let got = spatial_block(&vec![v; GRID * GRID], &params).unwrap();
        let mut pooled = Vec::new();
        for id in [ParamId::SpatialK3, ParamId::SpatialK5, ParamId::SpatialK7] {
            let k = params[id].shape()[0];
            let r = k / 2;
            let kern = params[id].data();
            // Valid tap rows for output row i are those a with i + a - r in 0..49.
            let valid = |i: usize, a: usize| (i + a >= r) && (i + a - r < GRID);
            let mut sum = 0f64;
            let mut max = f64::NEG_INFINITY;
            for i in 0..GRID {
                for j in 0..GRID {
                    let mut s = 0f64;
                    for a in 0..k {
                        for b in 0..k {
                            if valid(i, a) && valid(j, b) {
                                s += kern[a * k + b] as f64;
                            }
                        }
                    }
                    let x = v as f64 * s;
                    let g = x * 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
                    sum += g;
                    max = max.max(g);
                }
            }
            pooled.push(sum / (GRID * GRID) as f64);
            pooled.push(max);
        }
        let w = params[ParamId::SpatialW].data();
        let b = params[ParamId::SpatialB].data();
        for (j, g) in got.iter().enumerate() {
            let expected: f64 = b[j] as f64
                + (0..6)
                    .map(|i| pooled[i] * w[i * 32 + j] as f64)
                    .sum::<f64>();
            assert!(
                (*g as f64 - expected).abs() < 1e-5,
                "v {v} out {j}: {g} vs {expected}"
            );
        }
    }
}

#[test]
fn sigmoid_is_exact_on_simple_points() {
    assert_eq!(sigmoid(0.0), 0.5);
    assert!((spectra::model::sigmoid(2.0) - 1.0 / (1.0 + (-2f64).exp())).abs() < 1e-16);
}
