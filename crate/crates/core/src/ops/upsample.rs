//! Bilinear resampling with the align-corners-false convention.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Interpolation taps along one axis: for each output index, the two source
/// indices and the weight of the second.
#[derive(Clone, Debug)]
pub struct AxisTaps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl AxisTaps {
    pub fn new(in_size: usize, out_size: usize) -> Self {
        let scale = in_size as f64 / out_size as f64;
        let mut lo = Vec::with_capacity(out_size);
        let mut hi = Vec::with_capacity(out_size);
        let mut frac = Vec::with_capacity(out_size);
        for i in 0..out_size {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let l = (src.floor() as usize).min(in_size - 1);
            let h = (l + 1).min(in_size - 1);
            lo.push(l);
            hi.push(h);
            frac.push(if h == l { 0.0 } else { src - l as f64 });
        }
        AxisTaps { lo, hi, frac }
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    // exact when a == b
    a + t * (b - a)
}

/// Resamples every plane of `input` to `out_h x out_w`. Used directly by the
/// augmentation code, which also needs downscaling.
pub fn resize_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let s = input.shape();
    let ty = AxisTaps::new(s.h(), out_h);
    let tx = AxisTaps::new(s.w(), out_w);
    let mut out = Tensor::zeros(Shape::new(s.n(), s.c(), out_h, out_w));
    let mut k = 0;
    for n in 0..s.n() {
        for c in 0..s.c() {
            let p = input.plane(n, c);
            for y in 0..out_h {
                let r0 = &p[ty.lo[y] * s.w()..(ty.lo[y] + 1) * s.w()];
                let r1 = &p[ty.hi[y] * s.w()..(ty.hi[y] + 1) * s.w()];
                for x in 0..out_w {
                    let top = lerp(r0[tx.lo[x]], r0[tx.hi[x]], tx.frac[x]);
                    let bot = lerp(r1[tx.lo[x]], r1[tx.hi[x]], tx.frac[x]);
                    out.data_mut()[k] = lerp(top, bot, ty.frac[y]);
                    k += 1;
                }
            }
        }
    }
    out
}

pub fn upsample_forward(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = input.shape();
    if out_h < s.h() || out_w < s.w() {
        return Err(Error::Unsupported(format!(
            "bilinear upsample cannot shrink {}x{} to {out_h}x{out_w}",
            s.h(),
            s.w()
        )));
    }
    Ok(resize_bilinear(input, out_h, out_w))
}

/// Transpose of the interpolation map, accumulated into `grad_in`.
pub fn upsample_backward(
    in_shape: Shape,
    out_h: usize,
    out_w: usize,
    grad_out: &[f64],
    grad_in: &mut [f64],
) {
    let ty = AxisTaps::new(in_shape.h(), out_h);
    let tx = AxisTaps::new(in_shape.w(), out_w);
    let w = in_shape.w();
    let planes = in_shape.n() * in_shape.c();
    for pl in 0..planes {
        let gi = &mut grad_in[pl * in_shape.plane()..(pl + 1) * in_shape.plane()];
        let go = &grad_out[pl * out_h * out_w..(pl + 1) * out_h * out_w];
        for y in 0..out_h {
            let fy = ty.frac[y];
            for x in 0..out_w {
                let g = go[y * out_w + x];
                let fx = tx.frac[x];
                // out = (1-fy)[(1-fx)a + fx b] + fy[(1-fx)c + fx d]
                gi[ty.lo[y] * w + tx.lo[x]] += g * (1.0 - fy) * (1.0 - fx);
                gi[ty.lo[y] * w + tx.hi[x]] += g * (1.0 - fy) * fx;
                gi[ty.hi[y] * w + tx.lo[x]] += g * fy * (1.0 - fx);
                gi[ty.hi[y] * w + tx.hi[x]] += g * fy * fx;
            }
        }
    }
}
