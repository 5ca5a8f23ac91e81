//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output and enough saved state
//! to run its backward rule. Node indices are handed out as [`Var`] handles,
//! so the tape is topologically ordered by construction.

use crate::error::{Error, Result};
use crate::ops::conv::{conv2d_backward, conv2d_forward, ConvGeometry, ConvGrads};
use crate::ops::loss::softmax_cross_entropy;
use crate::ops::norm::{
    batchnorm_backward, batchnorm_forward, BatchNormState, NormCache, NormGrads, NormMode,
};
use crate::ops::upsample::{upsample_backward, upsample_forward};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        state: BatchNormState,
        cache: NormCache,
    },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    /// Elementwise product with a constant multiplier of the same shape.
    Mask {
        input: Var,
        mask: Vec<f64>,
    },
    Concat(Vec<Var>),
    Upsample(Var),
    GlobalAvgPool(Var),
    Sum(Var),
    WeightedSum {
        input: Var,
        weights: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        grad: Vec<f64>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::Relu(x) | Op::Upsample(x) | Op::GlobalAvgPool(x) | Op::Sum(x) => vec![*x],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Mask { input, .. } | Op::WeightedSum { input, .. } => vec![*input],
            Op::Concat(xs) => xs.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    verify: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// A tape that rejects any non-finite op output.
    pub fn verifying() -> Self {
        Tape {
            nodes: Vec::new(),
            verify: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Takes the tensor (with any accumulated gradient) out of a node.
    pub fn take(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(0.0))
    }

    pub fn zero_grads(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.value.zero_grad());
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.verify && !value.is_finite() {
            return Err(Error::Tape(format!(
                "non-finite output at node {}",
                self.nodes.len()
            )));
        }
        let rg = op.inputs().iter().any(|&i| self.requires_grad(i));
        self.nodes.push(Node {
            value: value.with_requires_grad(rg),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    ) -> Result<Var> {
        let b = bias.map(|b| self.value(b).data());
        let out = conv2d_forward(self.value(input), self.value(weight), b, geom)?;
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        )
    }

    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        mode: NormMode,
    ) -> Result<Var> {
        let (out, cache) = batchnorm_forward(
            self.value(input),
            self.value(gamma).data(),
            self.value(beta).data(),
            state,
            mode,
        )?;
        self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                state: state.clone(),
                cache,
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(0.0)).collect();
        let out = Tensor::from_vec(v.shape(), data)?;
        self.push(out, Op::Relu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::from_vec(self.shape(a), data)?;
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_vec(self.shape(a), data)?;
        self.push(out, Op::Mul(a, b))
    }

    /// Multiplies by a constant mask; the backward rule applies the same mask.
    pub fn apply_mask(&mut self, x: Var, mask: &Tensor) -> Result<Var> {
        if self.shape(x) != mask.shape() {
            return Err(Error::ShapeMismatch {
                op: "apply_mask",
                left: self.shape(x).to_vec(),
                right: mask.shape().to_vec(),
            });
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(mask.data())
            .map(|(a, m)| a * m)
            .collect();
        let out = Tensor::from_vec(self.shape(x), data)?;
        self.push(
            out,
            Op::Mask {
                input: x,
                mask: mask.data().to_vec(),
            },
        )
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| Error::config("empty concat"))?);
        let mut channels = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.n() != first.n() || s.h() != first.h() || s.w() != first.w() {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    left: first.to_vec(),
                    right: s.to_vec(),
                });
            }
            channels += s.c();
        }
        let out_shape = Shape::new(first.n(), channels, first.h(), first.w());
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..first.n() {
            for &x in xs {
                let v = self.value(x);
                let per = v.shape().c() * v.shape().plane();
                data.extend_from_slice(&v.data()[n * per..(n + 1) * per]);
            }
        }
        let out = Tensor::from_vec(out_shape, data)?;
        self.push(out, Op::Concat(xs.to_vec()))
    }

    pub fn upsample(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = upsample_forward(self.value(x), out_h, out_w)?;
        self.push(out, Op::Upsample(x))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.shape();
        let data = (0..s.n())
            .flat_map(|n| (0..s.c()).map(move |c| (n, c)))
            .map(|(n, c)| v.plane(n, c).iter().sum::<f64>() / s.plane() as f64)
            .collect();
        let out = Tensor::from_vec(Shape::new(s.n(), s.c(), 1, 1), data)?;
        self.push(out, Op::GlobalAvgPool(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    /// `sum(x * weights)` for a constant weight tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        if self.shape(x) != weights.shape() {
            return Err(Error::ShapeMismatch {
                op: "weighted_sum",
                left: self.shape(x).to_vec(),
                right: weights.shape().to_vec(),
            });
        }
        let total = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        self.push(
            Tensor::scalar(total),
            Op::WeightedSum {
                input: x,
                weights: weights.data().to_vec(),
            },
        )
    }

    /// Pixelwise softmax cross-entropy; `target` is laid out `(N, H, W)`.
    pub fn cross_entropy(&mut self, logits: Var, target: &[u8], ignore: u8) -> Result<Var> {
        let ce = softmax_cross_entropy(self.value(logits), target, ignore)?;
        self.push(
            Tensor::scalar(ce.loss),
            Op::CrossEntropy {
                logits,
                grad: ce.grad,
            },
        )
    }

    /// Back-propagates from a scalar root, adding into the gradient buffer of
    /// every node that requires one. Repeated calls accumulate.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Tape(format!("root {} is not on the tape", root.0)));
        }
        if self.shape(root) != Shape::scalar() {
            return Err(Error::Tape(format!(
                "backward needs a scalar root, got {:?}",
                self.shape(root).0
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].value.requires_grad();
        // Hands out a zeroed (or existing) accumulation buffer for `v`.
        fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        let numel = |v: Var| self.nodes[v.0].value.shape().numel();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let mut dx =
                    needs(*input).then(|| std::mem::take(slot(grads, *input, numel(*input))));
                let mut dw =
                    needs(*weight).then(|| std::mem::take(slot(grads, *weight, numel(*weight))));
                let mut db = bias
                    .filter(|b| needs(*b))
                    .map(|b| std::mem::take(slot(grads, b, numel(b))));
                conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    *geom,
                    g,
                    ConvGrads {
                        input: dx.as_deref_mut(),
                        weight: dw.as_deref_mut(),
                        bias: db.as_deref_mut(),
                    },
                )?;
                if let Some(d) = dx {
                    grads[input.0] = Some(d);
                }
                if let Some(d) = dw {
                    grads[weight.0] = Some(d);
                }
                if let (Some(d), Some(b)) = (db, bias) {
                    grads[b.0] = Some(d);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                state,
                cache,
            } => {
                let mut dx =
                    needs(*input).then(|| std::mem::take(slot(grads, *input, numel(*input))));
                let mut dg =
                    needs(*gamma).then(|| std::mem::take(slot(grads, *gamma, numel(*gamma))));
                let mut dbt =
                    needs(*beta).then(|| std::mem::take(slot(grads, *beta, numel(*beta))));
                batchnorm_backward(
                    self.value(*input),
                    self.value(*gamma).data(),
                    state,
                    cache,
                    g,
                    NormGrads {
                        input: dx.as_deref_mut(),
                        gamma: dg.as_deref_mut(),
                        beta: dbt.as_deref_mut(),
                    },
                );
                if let Some(d) = dx {
                    grads[input.0] = Some(d);
                }
                if let Some(d) = dg {
                    grads[gamma.0] = Some(d);
                }
                if let Some(d) = dbt {
                    grads[beta.0] = Some(d);
                }
            }
            Op::Relu(x) => {
                if needs(*x) {
                    let xv = self.value(*x).data();
                    let d = slot(grads, *x, xv.len());
                    for ((d, &gi), &xi) in d.iter_mut().zip(g).zip(xv) {
                        if xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        let d = slot(grads, v, g.len());
                        d.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if needs(v) {
                        let o = self.value(other).data();
                        let d = slot(grads, v, g.len());
                        for ((d, gi), oi) in d.iter_mut().zip(g).zip(o) {
                            *d += gi * oi;
                        }
                    }
                }
            }
            Op::Mask { input, mask } => {
                if needs(*input) {
                    let d = slot(grads, *input, g.len());
                    for ((d, gi), m) in d.iter_mut().zip(g).zip(mask) {
                        *d += gi * m;
                    }
                }
            }
            Op::Concat(xs) => {
                let s = node.value.shape();
                let mut offset = 0;
                for &x in xs {
                    let xs_shape = self.shape(x);
                    let per = xs_shape.c() * xs_shape.plane();
                    if needs(x) {
                        let d = slot(grads, x, xs_shape.numel());
                        for n in 0..s.n() {
                            let src = n * s.c() * s.plane() + offset;
                            d[n * per..(n + 1) * per]
                                .iter_mut()
                                .zip(&g[src..src + per])
                                .for_each(|(d, gi)| *d += gi);
                        }
                    }
                    offset += per;
                }
            }
            Op::Upsample(x) => {
                if needs(*x) {
                    let xs = self.shape(*x);
                    let out = node.value.shape();
                    let d = slot(grads, *x, xs.numel());
                    upsample_backward(xs, out.h(), out.w(), g, d);
                }
            }
            Op::GlobalAvgPool(x) => {
                if needs(*x) {
                    let xs = self.shape(*x);
                    let p = xs.plane();
                    let d = slot(grads, *x, xs.numel());
                    for (plane, gi) in d.chunks_exact_mut(p).zip(g) {
                        let share = gi / p as f64;
                        plane.iter_mut().for_each(|v| *v += share);
                    }
                }
            }
            Op::Sum(x) => {
                if needs(*x) {
                    let d = slot(grads, *x, numel(*x));
                    d.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::WeightedSum { input, weights } => {
                if needs(*input) {
                    let d = slot(grads, *input, weights.len());
                    d.iter_mut().zip(weights).for_each(|(v, w)| *v += g[0] * w);
                }
            }
            Op::CrossEntropy { logits, grad } => {
                if needs(*logits) {
                    let d = slot(grads, *logits, grad.len());
                    d.iter_mut().zip(grad).for_each(|(v, w)| *v += g[0] * w);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(shape: Shape, data: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, data)
            .unwrap()
            .with_requires_grad(true)
    }

    #[test]
    fn sum_gives_ones() {
        let mut t = Tape::new();
        let x = t.leaf(param(Shape::new(1, 2, 2, 1), vec![1.0, -2.0, 3.0, 0.5]));
        let s = t.sum(x).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn square_sum_gives_twice_x() {
        let mut t = Tape::new();
        let data = vec![1.0, -2.0, 3.0, 0.5];
        let x = t.leaf(param(Shape::new(1, 1, 2, 2), data.clone()));
        let xx = t.mul(x, x).unwrap();
        let s = t.sum(xx).unwrap();
        t.backward(s).unwrap();
        let want: Vec<f64> = data.iter().map(|v| 2.0 * v).collect();
        assert_eq!(t.grad(x).unwrap(), want.as_slice());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(param(Shape::new(1, 1, 1, 3), vec![1.0, 2.0, 3.0]));
        let s = t.sum(x).unwrap();
        t.backward(s).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0; 3]);
        t.zero_grads();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(param(Shape::new(1, 1, 1, 3), vec![1.0, 2.0, 3.0]));
        let y = t.relu(x).unwrap();
        assert!(matches!(t.backward(y), Err(Error::Tape(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.leaf(Tensor::ones(Shape::new(1, 1, 1, 2)));
        let x = t.leaf(param(Shape::new(1, 1, 1, 2), vec![1.0, 2.0]));
        let y = t.mul(c, x).unwrap();
        let s = t.sum(y).unwrap();
        t.backward(s).unwrap();
        assert!(t.grad(c).is_none());
        assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn verifying_tape_flags_nan() {
        let mut t = Tape::verifying();
        let x = t.leaf(Tensor::full(Shape::new(1, 1, 1, 1), f64::NAN));
        assert!(t.relu(x).is_err() || t.sum(x).is_err());
    }
}
