//! Direct 2-d convolution via im2col and a dense GEMM.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        ConvGeometry {
            stride,
            padding,
            dilation,
        }
    }

    /// Output extent along one axis, or `None` if no window fits.
    pub fn out_dim(&self, size: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = size + 2 * self.padding;
        if self.stride == 0 || self.dilation == 0 || kernel == 0 || padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

struct Plan {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    g: ConvGeometry,
}

impl Plan {
    fn new(input: Shape, weight: Shape, g: ConvGeometry) -> Result<Plan> {
        let mismatch = || Error::ShapeMismatch {
            op: "conv2d",
            left: input.to_vec(),
            right: weight.to_vec(),
        };
        if input.c() != weight.c() {
            return Err(mismatch());
        }
        let oh = g.out_dim(input.h(), weight.h()).ok_or_else(mismatch)?;
        let ow = g.out_dim(input.w(), weight.w()).ok_or_else(mismatch)?;
        Ok(Plan {
            n: input.n(),
            c: input.c(),
            h: input.h(),
            w: input.w(),
            o: weight.n(),
            kh: weight.h(),
            kw: weight.w(),
            oh,
            ow,
            g,
        })
    }

    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.g.stride == 1 && self.g.padding == 0
    }

    fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.o, self.oh, self.ow)
    }

    /// Source coordinate for output index `o` and kernel tap `k`, if inside.
    #[inline]
    fn src(&self, o: usize, k: usize, size: usize) -> Option<usize> {
        let pos = (o * self.g.stride + k * self.g.dilation) as isize - self.g.padding as isize;
        (pos >= 0 && (pos as usize) < size).then_some(pos as usize)
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let p = self.p();
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        match self.src(oy, ki, self.h) {
                            None => line.fill(0.0),
                            Some(iy) => {
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match self.src(ox, kj, self.w) {
                                        Some(ix) => plane[iy * self.w + ix],
                                        None => 0.0,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let p = self.p();
        for c in 0..self.c {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ki, self.h) else {
                            continue;
                        };
                        for ox in 0..self.ow {
                            if let Some(ix) = self.src(ox, kj, self.w) {
                                plane[iy * self.w + ix] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c = alpha * a * b + beta * c` with explicit strides for `a`/`b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= (m.max(1) - 1) * rsa + (k.max(1) - 1) * csa + 1 || m * k == 0);
    assert!(b.len() >= (k.max(1) - 1) * rsb + (n.max(1) - 1) * csb + 1 || k * n == 0);
    assert!(c.len() >= m * n);
    // SAFETY: bounds of every operand were asserted above for the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f64]>,
    g: ConvGeometry,
) -> Result<Tensor> {
    let plan = Plan::new(input.shape(), weight.shape(), g)?;
    if let Some(b) = bias {
        if b.len() != plan.o {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                left: weight.shape().to_vec(),
                right: vec![b.len()],
            });
        }
    }
    let (k, p) = (plan.k(), plan.p());
    let in_stride = plan.c * plan.h * plan.w;
    let out_stride = plan.o * p;
    let mut out = vec![0.0; plan.n * out_stride];
    let mut cols = if plan.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; k * p]
    };
    for n in 0..plan.n {
        let x = &input.data()[n * in_stride..(n + 1) * in_stride];
        let src: &[f64] = if plan.is_pointwise() {
            x
        } else {
            plan.im2col(x, &mut cols);
            &cols
        };
        let dst = &mut out[n * out_stride..(n + 1) * out_stride];
        gemm(plan.o, k, p, weight.data(), (k, 1), src, (p, 1), 0.0, dst);
        if let Some(b) = bias {
            for (o, row) in dst.chunks_exact_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v += b[o]);
            }
        }
    }
    Tensor::from_vec(plan.out_shape(), out)
}

/// Gradients of a convolution. Each requested buffer is accumulated into.
pub struct ConvGrads<'a> {
    pub input: Option<&'a mut [f64]>,
    pub weight: Option<&'a mut [f64]>,
    pub bias: Option<&'a mut [f64]>,
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    g: ConvGeometry,
    grad_out: &[f64],
    grads: ConvGrads<'_>,
) -> Result<()> {
    let plan = Plan::new(input.shape(), weight.shape(), g)?;
    let (k, p) = (plan.k(), plan.p());
    let in_stride = plan.c * plan.h * plan.w;
    let out_stride = plan.o * p;
    let ConvGrads {
        input: mut dx,
        weight: mut dw,
        bias: mut db,
    } = grads;
    let mut cols = vec![0.0; if plan.is_pointwise() { 0 } else { k * p }];
    let mut dcols = vec![0.0; if dx.is_some() { k * p } else { 0 }];
    for n in 0..plan.n {
        let dy = &grad_out[n * out_stride..(n + 1) * out_stride];
        if let Some(db) = db.as_deref_mut() {
            for (o, row) in dy.chunks_exact(p).enumerate() {
                db[o] += row.iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            let x = &input.data()[n * in_stride..(n + 1) * in_stride];
            let src: &[f64] = if plan.is_pointwise() {
                x
            } else {
                plan.im2col(x, &mut cols);
                &cols
            };
            // dW (o x k) += dY (o x p) * cols^T (p x k)
            gemm(plan.o, p, k, dy, (p, 1), src, (1, p), 1.0, dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dcols (k x p) = W^T (k x o) * dY (o x p)
            gemm(
                k,
                plan.o,
                p,
                weight.data(),
                (1, k),
                dy,
                (p, 1),
                0.0,
                &mut dcols,
            );
            let dst = &mut dx[n * in_stride..(n + 1) * in_stride];
            if plan.is_pointwise() {
                dst.iter_mut().zip(&dcols).for_each(|(a, b)| *a += b);
            } else {
                plan.col2im(&dcols, dst);
            }
        }
    }
    Ok(())
}
