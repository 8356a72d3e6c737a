//! Reverse-mode differentiation over a linear tape.
//!
//! Operations append nodes to a [`Tape`] as they are evaluated. A call to
//! [`Tape::backward`] walks the tape in reverse, accumulating the gradient of a
//! scalar output into every node that depends on a parameter leaf.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, ensure_finite, ReduceKind, ReducePlan, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Gelu(Var),
    /// Per-element multiplier: 0 for dropped, `1/(1-rate)` for kept.
    Dropout(Var, Vec<f32>),
    DepthwiseConv2d(Var, Var),
    Reduce {
        input: Var,
        kind: ReduceKind,
        plan: ReducePlan,
    },
    Concat(Vec<Var>),
    Reshape(Var),
    BceWithLogits(Var, Vec<f32>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        value: Tensor,
        op: Op,
        requires_grad: bool,
        name: &str,
    ) -> Result<Var> {
        ensure_finite(&value, name)?;
        Ok(self.push(value, op, requires_grad))
    }

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push_checked(out, Op::MatMul(a, b), rg, "matmul")
    }

    /// `x[m×n] + bias[n]`, the bias added to every row.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let n = match xv.shape() {
            &[_, n] => n,
            s => {
                return Err(Error::shape(format!(
                    "add_row_bias expects a matrix, got {s:?}"
                )))
            }
        };
        if bv.len() != n {
            return Err(Error::shape(format!(
                "bias of {} values for rows of width {n}",
                bv.len()
            )));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_exact_mut(n.max(1)) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.requires_grad(x) || self.requires_grad(bias);
        self.push_checked(out, Op::AddRowBias(x, bias), rg, "add_row_bias")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b))?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push_checked(out, Op::Add(a, b), rg, "add")
    }

    /// Element-wise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(format!(
                "mul of {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push_checked(out, Op::Mul(a, b), rg, "mul")
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| tensor::gelu_scalar(v)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.requires_grad(x);
        self.push_checked(out, Op::Gelu(x), rg, "gelu")
    }

    /// Inverted dropout. Outside training, or with `rate == 0`, the input
    /// handle is returned unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f32,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let xv = self.value(x);
        let mask: Vec<f32> = (0..xv.len())
            .map(|_| {
                if rng.random::<f32>() < rate {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Dropout(x, mask), rg))
    }

    pub fn depthwise_conv2d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let out = tensor::depthwise_conv2d(self.value(x), self.value(kernel))?;
        let rg = self.requires_grad(x) || self.requires_grad(kernel);
        self.push_checked(out, Op::DepthwiseConv2d(x, kernel), rg, "depthwise_conv2d")
    }

    pub fn reduce(&mut self, x: Var, kind: ReduceKind, axes: &[usize]) -> Result<Var> {
        let plan = ReducePlan::new(self.value(x).shape(), axes)?;
        let out = tensor::reduce(self.value(x), kind, axes)?;
        let rg = self.requires_grad(x);
        self.push_checked(
            out,
            Op::Reduce {
                input: x,
                kind,
                plan,
            },
            rg,
            "reduce",
        )
    }

    /// Reduce over every axis, giving a scalar.
    pub fn reduce_all(&mut self, x: Var, kind: ReduceKind) -> Result<Var> {
        let axes: Vec<usize> = (0..self.value(x).shape().len()).collect();
        self.reduce(x, kind, &axes)
    }

    /// Concatenate matrices with equal row counts along the column axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first().map(|&p| self.value(p).shape()) {
            Some(&[m, _]) => m,
            _ => return Err(Error::shape("concat expects at least one matrix")),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            match self.value(p).shape() {
                &[m, n] if m == rows => widths.push(n),
                s => {
                    return Err(Error::shape(format!(
                        "concat part of shape {s:?} does not have {rows} rows"
                    )))
                }
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &n) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * n..(r + 1) * n]);
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Mean binary cross-entropy of logits `z` against `labels`, evaluated
    /// as `max(z,0) - z·y + ln(1 + e^{-|z|})`.
    pub fn bce_with_logits(&mut self, z: Var, labels: &[f32]) -> Result<Var> {
        let loss = bce_with_logits_value(self.value(z).data(), labels)?;
        let rg = self.requires_grad(z);
        self.push_checked(
            Tensor::scalar(loss),
            Op::BceWithLogits(z, labels.to_vec()),
            rg,
            "bce_with_logits",
        )
    }

    /// Gradient of the single-element `output` with respect to every node
    /// that depends on a parameter.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_len = self.value(output).len();
        if out_len != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar output, got {out_len} values"
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(Tensor::full(self.value(output).shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, g: Tensor) -> Result<()> {
        if !self.requires_grad(var) {
            return Ok(());
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let da = tensor::matmul_nt(g, self.value(*b))?;
                    self.accumulate(grads, *a, da)?;
                }
                if self.requires_grad(*b) {
                    let db = tensor::matmul_tn(self.value(*a), g)?;
                    self.accumulate(grads, *b, db)?;
                }
            }
            Op::AddRowBias(x, bias) => {
                self.accumulate(grads, *x, g.clone())?;
                if self.requires_grad(*bias) {
                    let bshape = self.value(*bias).shape().to_vec();
                    let n = self.value(*bias).len();
                    let mut db = vec![0.0f64; n];
                    for row in g.data().chunks_exact(n.max(1)) {
                        for (acc, v) in db.iter_mut().zip(row) {
                            *acc += f64::from(*v);
                        }
                    }
                    let db = db.into_iter().map(|v| v as f32).collect();
                    self.accumulate(grads, *bias, Tensor::new(bshape, db)?)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                    self.accumulate(grads, *a, Tensor::new(av.shape().to_vec(), d)?)?;
                }
                if self.requires_grad(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), d)?)?;
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(g, &v)| g * tensor::gelu_grad_scalar(v))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), d)?)?;
            }
            Op::Dropout(x, mask) => {
                let d = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d)?)?;
            }
            Op::DepthwiseConv2d(x, k) => {
                let (dx, dk) =
                    tensor::depthwise_conv2d_backward(self.value(*x), self.value(*k), g)?;
                self.accumulate(grads, *x, dx)?;
                self.accumulate(grads, *k, dk)?;
            }
            Op::Reduce { input, kind, plan } => {
                let xv = self.value(*input);
                let mut d = vec![0.0f32; xv.len()];
                for (group, &go) in plan.groups.iter().zip(g.data()) {
                    match kind {
                        ReduceKind::Sum => group.iter().for_each(|&i| d[i] += go),
                        ReduceKind::Mean => {
                            let share = go / group.len() as f32;
                            group.iter().for_each(|&i| d[i] += share);
                        }
                        ReduceKind::Max => d[tensor::group_argmax(xv.data(), group)] += go,
                        ReduceKind::Std => {
                            let stats = tensor::group_stats(xv.data(), group);
                            if stats.std > 0.0 {
                                let denom = group.len() as f64 * stats.std;
                                for &i in group {
                                    let dev = f64::from(xv.data()[i]) - stats.mean;
                                    d[i] += (f64::from(go) * dev / denom) as f32;
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(xv.shape().to_vec(), d)?)?;
            }
            Op::Concat(parts) => {
                let rows = g.shape()[0];
                let total = g.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let pshape = self.value(p).shape().to_vec();
                    let n = pshape[1];
                    if self.requires_grad(p) {
                        let mut d = Vec::with_capacity(rows * n);
                        for r in 0..rows {
                            d.extend_from_slice(
                                &g.data()[r * total + offset..r * total + offset + n],
                            );
                        }
                        self.accumulate(grads, p, Tensor::new(pshape, d)?)?;
                    }
                    offset += n;
                }
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.clone().reshape(&shape)?)?;
            }
            Op::BceWithLogits(z, labels) => {
                let zv = self.value(*z);
                let scale = g.item()? / labels.len() as f32;
                let d = zv
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&z, &y)| scale * logit_residual(z, y))
                    .collect();
                self.accumulate(grads, *z, Tensor::new(zv.shape().to_vec(), d)?)?;
            }
        }
        Ok(())
    }
}

/// σ(z) − y, formed in f64 so that saturated logits keep their relative
/// precision.
fn logit_residual(z: f32, y: f32) -> f32 {
    let z = z as f64;
    let s = 1.0 / (1.0 + (-z).exp());
    let r = if y == 1.0 {
        -1.0 / (1.0 + z.exp())
    } else {
        s - y as f64
    };
    r as f32
}

pub fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean stable binary cross-entropy over a batch of logits.
pub fn bce_with_logits_value(logits: &[f32], labels: &[f32]) -> Result<f32> {
    if logits.is_empty() {
        return Err(Error::domain("binary cross-entropy of an empty batch"));
    }
    if logits.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} logits for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::domain(format!("label {y} is not binary")));
    }
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let (z, y) = (f64::from(z), f64::from(y));
            z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
        })
        .sum();
    Ok((total / logits.len() as f64) as f32)
}
