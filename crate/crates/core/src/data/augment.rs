//! Paired augmentation: every geometric step is applied to image and label
//! on the same grid; photometric steps touch the image only.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SamplePair;
use crate::error::{Error, Result};
use crate::metrics::{LabelMap, IGNORE_LABEL};
use crate::ops::upsample::resize_bilinear;
use crate::tensor::{Shape, Tensor};
use crate::Mode;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub crop_size: usize,
    pub scale_range: [f64; 2],
    pub flip_prob: f64,
    pub blur_range: [f64; 2],
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub mode: Mode,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            crop_size: 64,
            scale_range: [0.5, 2.0],
            flip_prob: 0.5,
            blur_range: [0.0, 1.0],
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
            mode: Mode::Train,
        }
    }
}

impl AugmentSpec {
    pub fn eval(crop_size: usize) -> Self {
        AugmentSpec {
            crop_size,
            mode: Mode::Eval,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::config(format!(
                "scale range [{lo}, {hi}] must be positive and ordered"
            )));
        }
        if self.crop_size == 0 {
            return Err(Error::config("crop size must be positive"));
        }
        let [b0, b1] = self.blur_range;
        if !(b0 >= 0.0 && b0 <= b1) {
            return Err(Error::config(format!(
                "blur range [{b0}, {b1}] must be non-negative and ordered"
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::config(format!(
                "flip probability {} outside [0, 1]",
                self.flip_prob
            )));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("normalisation std must be positive"));
        }
        Ok(())
    }
}

/// One realisation of the random choices. Offsets are fractions of the
/// free space along each axis (0.5 centres the crop or the padded image).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraws {
    pub scale: f64,
    pub flip: bool,
    pub blur_radius: f64,
    pub offset_y: f64,
    pub offset_x: f64,
}

impl AugmentDraws {
    pub const IDENTITY: AugmentDraws = AugmentDraws {
        scale: 1.0,
        flip: false,
        blur_radius: 0.0,
        offset_y: 0.5,
        offset_x: 0.5,
    };

    pub fn sample<R: Rng + ?Sized>(spec: &AugmentSpec, rng: &mut R) -> Self {
        let uniform =
            |rng: &mut R, [lo, hi]: [f64; 2]| if lo == hi { lo } else { rng.gen_range(lo..hi) };
        let scale = uniform(rng, spec.scale_range);
        let flip = rng.gen::<f64>() < spec.flip_prob;
        let blur_radius = uniform(rng, spec.blur_range);
        AugmentDraws {
            scale,
            flip,
            blur_radius,
            offset_y: rng.gen(),
            offset_x: rng.gen(),
        }
    }
}

/// Nearest-neighbour resampling on the same pixel-centre grid as the
/// bilinear image path.
pub fn resize_nearest(label: &LabelMap, out_h: usize, out_w: usize) -> LabelMap {
    let src = |i: usize, in_size: usize, out_size: usize| {
        (((i as f64 + 0.5) * in_size as f64 / out_size as f64).floor() as usize).min(in_size - 1)
    };
    let mut out = LabelMap::filled(out_h, out_w, 0);
    for y in 0..out_h {
        let sy = src(y, label.height(), out_h);
        for x in 0..out_w {
            out.set(y, x, label.get(sy, src(x, label.width(), out_w)));
        }
    }
    out
}

/// Source range and destination start for placing `len` samples on an
/// axis of `size` with offset fraction `frac`.
fn place(len: usize, size: usize, frac: f64) -> (usize, usize, usize) {
    if len >= size {
        let off = ((len - size) as f64 * frac).floor() as usize;
        (off.min(len - size), 0, size)
    } else {
        let off = ((size - len) as f64 * frac).floor() as usize;
        (0, off.min(size - len), len)
    }
}

fn crop_or_pad(
    pair: &SamplePair,
    size: usize,
    d: &AugmentDraws,
    fill: [f64; 3],
) -> Result<SamplePair> {
    let (h, w) = (pair.height(), pair.width());
    let (sy, dy, ny) = place(h, size, d.offset_y);
    let (sx, dx, nx) = place(w, size, d.offset_x);
    let mut image = Tensor::zeros(Shape::new(1, 3, size, size));
    let mut label = LabelMap::filled(size, size, IGNORE_LABEL);
    for c in 0..3 {
        let src = pair.image.plane(0, c);
        let dst = &mut image.data_mut()[c * size * size..(c + 1) * size * size];
        dst.fill(fill[c]);
        for y in 0..ny {
            let s = (sy + y) * w + sx;
            let t = (dy + y) * size + dx;
            dst[t..t + nx].copy_from_slice(&src[s..s + nx]);
        }
    }
    for y in 0..ny {
        for x in 0..nx {
            label.set(dy + y, dx + x, pair.label.get(sy + y, sx + x));
        }
    }
    SamplePair::new(image, label)
}

pub fn flip_horizontal(pair: &SamplePair) -> SamplePair {
    let (h, w) = (pair.height(), pair.width());
    let mut out = pair.clone();
    for row in out.image.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    for y in 0..h {
        for x in 0..w {
            out.label.set(y, x, pair.label.get(y, w - 1 - x));
        }
    }
    out
}

/// Separable Gaussian blur with standard deviation `sigma`, edges clamped.
pub fn gaussian_blur(image: &Tensor, sigma: f64) -> Tensor {
    if sigma <= 0.0 {
        return image.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    let s = image.shape();
    let (h, w) = (s.h() as isize, s.w() as isize);
    let mut tmp = vec![0.0; s.numel()];
    let mut out = Tensor::zeros(s);
    for p in 0..s.n() * s.c() {
        let base = p * s.plane();
        let src = &image.data()[base..base + s.plane()];
        let mid = &mut tmp[base..base + s.plane()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let xx = (x + j as isize - r).clamp(0, w - 1);
                    acc += kv * src[(y * w + xx) as usize];
                }
                mid[(y * w + x) as usize] = acc;
            }
        }
        let dst = &mut out.data_mut()[base..base + s.plane()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let yy = (y + j as isize - r).clamp(0, h - 1);
                    acc += kv * mid[(yy * w + x) as usize];
                }
                dst[(y * w + x) as usize] = acc;
            }
        }
    }
    out
}

/// Scale, crop/pad, flip, blur and normalise with fixed draws. Eval mode
/// ignores the draws and uses [`AugmentDraws::IDENTITY`].
pub fn augment_with(
    pair: &SamplePair,
    spec: &AugmentSpec,
    draws: &AugmentDraws,
) -> Result<SamplePair> {
    spec.validate()?;
    let d = match spec.mode {
        Mode::Train => *draws,
        Mode::Eval => AugmentDraws::IDENTITY,
    };
    let (h, w) = (pair.height(), pair.width());
    let nh = ((h as f64 * d.scale).round() as usize).max(1);
    let nw = ((w as f64 * d.scale).round() as usize).max(1);
    let scaled = if (nh, nw) == (h, w) {
        pair.clone()
    } else {
        SamplePair::new(
            resize_bilinear(&pair.image, nh, nw),
            resize_nearest(&pair.label, nh, nw),
        )?
    };
    let mut out = crop_or_pad(&scaled, spec.crop_size, &d, spec.mean)?;
    if d.flip {
        out = flip_horizontal(&out);
    }
    if d.blur_radius > 0.0 {
        out.image = gaussian_blur(&out.image, d.blur_radius);
    }
    let plane = spec.crop_size * spec.crop_size;
    for (c, chunk) in out.image.data_mut().chunks_exact_mut(plane).enumerate() {
        for v in chunk {
            *v = (*v - spec.mean[c]) / spec.std[c];
        }
    }
    Ok(out)
}

pub fn augment_pair<R: Rng + ?Sized>(
    pair: &SamplePair,
    spec: &AugmentSpec,
    rng: &mut R,
) -> Result<SamplePair> {
    let draws = match spec.mode {
        Mode::Train => AugmentDraws::sample(spec, rng),
        Mode::Eval => AugmentDraws::IDENTITY,
    };
    augment_with(pair, spec, &draws)
}
