//! Dense row-major `f32` tensors and the numeric kernels shared by the
//! forward and backward passes.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// A `1×n` row vector.
    pub fn row(values: &[f32]) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    /// Glorot-uniform initialization in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot_uniform<R: Rng + ?Sized>(
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::shape(format!(
                "item() on tensor of shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "cannot add {:?} into {:?}",
                other.shape, self.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f32) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    fn dims2(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[m, n] => Ok((m, n)),
            s => Err(Error::shape(format!("{what} expects a matrix, got {s:?}"))),
        }
    }
}

pub(crate) fn ensure_finite(t: &Tensor, op: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(format!("{op} produced a non-finite value")))
    }
}

/// `C = A·B` for `A: m×k`, `B: k×n`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner dimensions differ: {:?} · {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![0.0f32; m * n];
    let mut acc = vec![0.0f64; n];
    for (a_row, c_row) in a
        .data
        .chunks_exact(k.max(1))
        .zip(out.chunks_exact_mut(n.max(1)))
    {
        acc.fill(0.0);
        for (p, &a_ip) in a_row.iter().enumerate().take(k) {
            let a_ip = f64::from(a_ip);
            let b_row = &b.data[p * n..(p + 1) * n];
            for (c, &bv) in acc.iter_mut().zip(b_row) {
                *c += a_ip * f64::from(bv);
            }
        }
        for (c, v) in c_row.iter_mut().zip(&acc) {
            *c = *v as f32;
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `Aᵀ·B` for `A: m×k`, `B: m×n`, giving `k×n`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul_tn")?;
    let (m2, n) = b.dims2("matmul_tn")?;
    if m != m2 {
        return Err(Error::shape(format!(
            "matmul_tn row counts differ: {:?}ᵀ · {:?}",
            a.shape, b.shape
        )));
    }
    let mut acc = vec![0.0f64; k * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let b_row = &b.data[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let a_ip = f64::from(a_ip);
            let c_row = &mut acc[p * n..(p + 1) * n];
            for (c, &bv) in c_row.iter_mut().zip(b_row) {
                *c += a_ip * f64::from(bv);
            }
        }
    }
    Tensor::new(vec![k, n], acc.into_iter().map(|v| v as f32).collect())
}

/// `A·Bᵀ` for `A: m×n`, `B: k×n`, giving `m×k`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2("matmul_nt")?;
    let (k, n2) = b.dims2("matmul_nt")?;
    if n != n2 {
        return Err(Error::shape(format!(
            "matmul_nt column counts differ: {:?} · {:?}ᵀ",
            a.shape, b.shape
        )));
    }
    let mut out = vec![0.0f32; m * k];
    for i in 0..m {
        let a_row = &a.data[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b.data[p * n..(p + 1) * n];
            out[i * k + p] = a_row
                .iter()
                .zip(b_row)
                .map(|(&x, &y)| f64::from(x) * f64::from(y))
                .sum::<f64>() as f32;
        }
    }
    Tensor::new(vec![m, k], out)
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu_scalar(x: f32) -> f32 {
    let x = f64::from(x);
    (x * normal_cdf(x)) as f32
}

/// `d/dx x·Φ(x) = Φ(x) + x·φ(x)`.
pub fn gelu_grad_scalar(x: f32) -> f32 {
    let x = f64::from(x);
    let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
    (normal_cdf(x) + x * pdf) as f32
}

fn conv_dims(x: &Tensor, kernel: &Tensor) -> Result<(usize, usize, usize)> {
    let (h, w) = match x.shape.as_slice() {
        &[1, h, w] => (h, w),
        s => {
            return Err(Error::shape(format!(
                "depthwise_conv2d expects a 1×H×W input, got {s:?}"
            )))
        }
    };
    let k = match kernel.shape.as_slice() {
        &[k, k2] if k == k2 => k,
        s => {
            return Err(Error::shape(format!(
                "depthwise_conv2d expects a square kernel, got {s:?}"
            )))
        }
    };
    if k % 2 == 0 {
        return Err(Error::config(format!(
            "depthwise_conv2d kernel size must be odd, got {k}"
        )));
    }
    Ok((h, w, k))
}

/// Same-size single-channel cross-correlation with zero padding.
pub fn depthwise_conv2d(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (h, w, k) = conv_dims(x, kernel)?;
    let r = (k / 2) as isize;
    let mut out = vec![0.0f32; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0f32;
            for a in 0..k {
                let y = i as isize + a as isize - r;
                if y < 0 || y >= h as isize {
                    continue;
                }
                let x_row = &x.data[y as usize * w..(y as usize + 1) * w];
                let k_row = &kernel.data[a * k..(a + 1) * k];
                for (b, &kv) in k_row.iter().enumerate() {
                    let xx = j as isize + b as isize - r;
                    if xx >= 0 && xx < w as isize {
                        acc += kv * x_row[xx as usize];
                    }
                }
            }
            out[i * w + j] = acc;
        }
    }
    Tensor::new(vec![1, h, w], out)
}

/// Gradients of [`depthwise_conv2d`] with respect to input and kernel.
pub fn depthwise_conv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (h, w, k) = conv_dims(x, kernel)?;
    let r = (k / 2) as isize;
    let mut dx = vec![0.0f32; h * w];
    let mut dk = vec![0.0f32; k * k];
    for i in 0..h {
        for j in 0..w {
            let g = grad_out.data[i * w + j];
            for a in 0..k {
                let y = i as isize + a as isize - r;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for b in 0..k {
                    let xx = j as isize + b as isize - r;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let idx = y as usize * w + xx as usize;
                    dx[idx] += g * kernel.data[a * k + b];
                    dk[a * k + b] += g * x.data[idx];
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![1, h, w], dx)?,
        Tensor::new(vec![k, k], dk)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
    /// Population standard deviation (divides by N).
    Std,
}

/// Maps every input element to its output slot for a reduction over `axes`.
#[derive(Clone, Debug)]
pub(crate) struct ReducePlan {
    pub out_shape: Vec<usize>,
    /// Input flat indices for each output element, in ascending order.
    pub groups: Vec<Vec<usize>>,
}

impl ReducePlan {
    pub fn new(shape: &[usize], axes: &[usize]) -> Result<Self> {
        let mut reduced = vec![false; shape.len()];
        for &axis in axes {
            if axis >= shape.len() || reduced[axis] {
                return Err(Error::shape(format!(
                    "invalid reduction axes {axes:?} for shape {shape:?}"
                )));
            }
            reduced[axis] = true;
        }
        if axes.is_empty() || axes.iter().any(|&a| shape[a] == 0) {
            return Err(Error::domain(format!(
                "empty reduction over axes {axes:?} of shape {shape:?}"
            )));
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        let out_len: usize = out_shape.iter().product();
        let total: usize = shape.iter().product();
        let mut groups = vec![Vec::with_capacity(total / out_len.max(1)); out_len];
        let mut index = vec![0usize; shape.len()];
        for flat in 0..total {
            let mut out_flat = 0;
            for (d, &i) in index.iter().enumerate() {
                if !reduced[d] {
                    out_flat = out_flat * shape[d] + i;
                }
            }
            groups[out_flat].push(flat);
            for d in (0..shape.len()).rev() {
                index[d] += 1;
                if index[d] < shape[d] {
                    break;
                }
                index[d] = 0;
            }
        }
        Ok(ReducePlan { out_shape, groups })
    }
}

/// Sum in `f64` over the values in ascending order. Sorting first makes the
/// result independent of the order the values arrive in.
pub(crate) fn ordered_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

pub(crate) struct GroupStats {
    pub mean: f64,
    pub std: f64,
}

pub(crate) fn group_stats(x: &[f32], group: &[usize]) -> GroupStats {
    let n = group.len() as f64;
    let mut values: Vec<f64> = group.iter().map(|&i| f64::from(x[i])).collect();
    let mean = ordered_sum(&mut values) / n;
    let mut sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = ordered_sum(&mut sq) / n;
    GroupStats {
        mean,
        std: var.sqrt(),
    }
}

/// First index holding the maximum value of the group.
pub(crate) fn group_argmax(x: &[f32], group: &[usize]) -> usize {
    let mut best = group[0];
    for &i in &group[1..] {
        if x[i] > x[best] {
            best = i;
        }
    }
    best
}

/// Reduce `x` over `axes`. The reduced axes are removed from the shape.
pub fn reduce(x: &Tensor, kind: ReduceKind, axes: &[usize]) -> Result<Tensor> {
    let plan = ReducePlan::new(&x.shape, axes)?;
    let data = plan
        .groups
        .iter()
        .map(|group| match kind {
            ReduceKind::Sum => {
                let mut v: Vec<f64> = group.iter().map(|&i| f64::from(x.data[i])).collect();
                ordered_sum(&mut v) as f32
            }
            ReduceKind::Mean => group_stats(&x.data, group).mean as f32,
            ReduceKind::Std => group_stats(&x.data, group).std as f32,
            ReduceKind::Max => x.data[group_argmax(&x.data, group)],
        })
        .collect();
    Tensor::new(plan.out_shape, data)
}

/// Reduce over every axis.
pub fn reduce_all(x: &Tensor, kind: ReduceKind) -> Result<f32> {
    let axes: Vec<usize> = (0..x.shape.len()).collect();
    if axes.is_empty() {
        return Ok(x.data[0]);
    }
    reduce(x, kind, &axes)?.item()
}
