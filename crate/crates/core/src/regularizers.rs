//! Train-time stochastic regularizers for convolutional activations.
//!
//! Each method is a multiplicative mask over an NCHW tensor. Vanilla,
//! channel and block dropout use inverted scaling so the expected activation
//! is unchanged and inference is the identity. UOut multiplies each channel
//! plane by `1 + r` with `r ~ U[-beta, beta]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Shape, Tensor};
use crate::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    None,
    Vanilla,
    Channel,
    #[serde(rename = "dropblock")]
    DropBlock,
    #[serde(rename = "uout")]
    UOut,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Vanilla => "vanilla",
            Method::Channel => "channel",
            Method::DropBlock => "dropblock",
            Method::UOut => "uout",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Probability grows linearly from 0 and reaches its target after
    /// `epochs` completed epochs.
    LinearRamp {
        epochs: u32,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub method: Method,
    /// Drop probability; for UOut the noise half-width.
    pub p: f64,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default)]
    pub seed: u64,
}

fn default_block_size() -> usize {
    3
}

fn default_schedule() -> Schedule {
    Schedule::Constant
}

impl RegularizerSpec {
    pub fn new(method: Method, p: f64) -> Self {
        RegularizerSpec {
            method,
            p,
            block_size: default_block_size(),
            schedule: Schedule::Constant,
            seed: 0,
        }
    }

    pub fn none() -> Self {
        Self::new(Method::None, 0.0)
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn is_active(&self) -> bool {
        self.method != Method::None
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::config(format!(
                "{} probability {} outside [0, 1)",
                self.method.name(),
                self.p
            )));
        }
        if self.block_size == 0 || self.block_size % 2 == 0 {
            return Err(Error::config(format!(
                "block size must be odd and positive, got {}",
                self.block_size
            )));
        }
        if let Schedule::LinearRamp { epochs: 0 } = self.schedule {
            return Err(Error::config("linear ramp needs at least one epoch"));
        }
        Ok(())
    }
}

/// Effective probability at the start of `epoch` (0-based).
pub fn scheduled_p(spec: &RegularizerSpec, epoch: usize) -> f64 {
    match spec.schedule {
        Schedule::Constant => spec.p,
        Schedule::LinearRamp { epochs } => {
            if epoch as u64 >= epochs as u64 {
                spec.p
            } else {
                spec.p * epoch as f64 / epochs as f64
            }
        }
    }
}

/// A realized multiplier tensor and how it was drawn.
#[derive(Clone, Debug)]
pub struct DropMask {
    pub mask: Tensor,
    pub method: Method,
    pub p: f64,
    pub epoch: usize,
}

/// Identifies one mask draw: the spec seed, the epoch, the insertion site
/// and the batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MaskKey {
    pub seed: u64,
    pub epoch: usize,
    pub layer: u64,
    pub batch: u64,
}

impl MaskKey {
    pub fn rng(&self) -> rand_chacha::ChaCha8Rng {
        rng::keyed(&[
            rng::stream::MASK,
            self.seed,
            self.epoch as u64,
            self.layer,
            self.batch,
        ])
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!(
            "drop probability {p} outside [0, 1)"
        )));
    }
    Ok(())
}

pub fn vanilla_mask<R: Rng + ?Sized>(shape: Shape, p: f64, rng: &mut R) -> Result<Tensor> {
    check_p(p)?;
    let keep = 1.0 / (1.0 - p);
    let data = (0..shape.numel())
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    Tensor::from_vec(shape, data)
}

fn per_plane<R: Rng + ?Sized>(
    shape: Shape,
    rng: &mut R,
    mut draw: impl FnMut(&mut R) -> f64,
) -> Result<Tensor> {
    let mut data = Vec::with_capacity(shape.numel());
    for _ in 0..shape.n() * shape.c() {
        let v = draw(rng);
        data.extend(std::iter::repeat(v).take(shape.plane()));
    }
    Tensor::from_vec(shape, data)
}

pub fn channel_mask<R: Rng + ?Sized>(shape: Shape, p: f64, rng: &mut R) -> Result<Tensor> {
    check_p(p)?;
    let keep = 1.0 / (1.0 - p);
    per_plane(shape, rng, |r| if r.gen::<f64>() < p { 0.0 } else { keep })
}

pub fn uout_mask<R: Rng + ?Sized>(shape: Shape, beta: f64, rng: &mut R) -> Result<Tensor> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::config(format!(
            "UOut half-width {beta} must be >= 0"
        )));
    }
    per_plane(shape, rng, |r| 1.0 + r.gen_range(-beta..=beta))
}

/// Seed probability for block centres: the target drop rate spread over the
/// block area and corrected for the valid centre region.
pub fn dropblock_gamma(p: f64, block: usize, h: usize, w: usize) -> f64 {
    let b = block as f64;
    let valid = ((h - block + 1) * (w - block + 1)) as f64;
    p / (b * b) * (h * w) as f64 / valid
}

/// Per-plane block dropout. Centres are drawn on the interior so blocks never
/// cross the border; survivors are rescaled by `total / kept`.
pub fn dropblock_mask<R: Rng + ?Sized>(
    shape: Shape,
    p: f64,
    block: usize,
    rng: &mut R,
) -> Result<Tensor> {
    check_p(p)?;
    let (h, w) = (shape.h(), shape.w());
    if block == 0 || block > h.min(w) {
        return Err(Error::config(format!(
            "block size {block} does not fit a {h}x{w} feature map"
        )));
    }
    let gamma = dropblock_gamma(p, block, h, w);
    let mut keep = vec![1.0; shape.numel()];
    for plane in keep.chunks_exact_mut(h * w) {
        for i in 0..=h - block {
            for j in 0..=w - block {
                if rng.gen::<f64>() < gamma {
                    for y in i..i + block {
                        plane[y * w + j..y * w + j + block].fill(0.0);
                    }
                }
            }
        }
    }
    let kept = keep.iter().filter(|&&v| v > 0.0).count();
    if kept > 0 {
        let s = keep.len() as f64 / kept as f64;
        keep.iter_mut().for_each(|v| *v *= s);
    }
    Tensor::from_vec(shape, keep)
}

/// Draws the mask for `spec` at `epoch` with probability `p` already
/// scheduled. Returns `None` for methods or probabilities that are no-ops.
pub fn draw_mask(
    spec: &RegularizerSpec,
    p: f64,
    shape: Shape,
    key: MaskKey,
) -> Result<Option<DropMask>> {
    if !spec.is_active() || p == 0.0 {
        return Ok(None);
    }
    let mut r = key.rng();
    let mask = match spec.method {
        Method::None => unreachable!(),
        Method::Vanilla => vanilla_mask(shape, p, &mut r)?,
        Method::Channel => channel_mask(shape, p, &mut r)?,
        Method::DropBlock => dropblock_mask(shape, p, spec.block_size, &mut r)?,
        Method::UOut => uout_mask(shape, p, &mut r)?,
    };
    Ok(Some(DropMask {
        mask,
        method: spec.method,
        p,
        epoch: key.epoch,
    }))
}

fn apply(x: &Tensor, mode: Mode, make: impl FnOnce() -> Result<Tensor>) -> Result<Tensor> {
    if mode == Mode::Eval {
        return Ok(x.clone());
    }
    let m = make()?;
    let data = x.data().iter().zip(m.data()).map(|(a, b)| a * b).collect();
    Tensor::from_vec(x.shape(), data)
}

pub fn vanilla_dropout<R: Rng + ?Sized>(
    x: &Tensor,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor> {
    check_p(p)?;
    if p == 0.0 {
        return Ok(x.clone());
    }
    apply(x, mode, || vanilla_mask(x.shape(), p, rng))
}

pub fn channel_dropout<R: Rng + ?Sized>(
    x: &Tensor,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor> {
    check_p(p)?;
    if p == 0.0 {
        return Ok(x.clone());
    }
    apply(x, mode, || channel_mask(x.shape(), p, rng))
}

pub fn dropblock<R: Rng + ?Sized>(
    x: &Tensor,
    p: f64,
    block: usize,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor> {
    check_p(p)?;
    let s = x.shape();
    if block == 0 || block > s.h().min(s.w()) {
        return Err(Error::config(format!(
            "block size {block} does not fit a {}x{} feature map",
            s.h(),
            s.w()
        )));
    }
    if p == 0.0 {
        return Ok(x.clone());
    }
    apply(x, mode, || dropblock_mask(s, p, block, rng))
}

pub fn uout<R: Rng + ?Sized>(x: &Tensor, beta: f64, mode: Mode, rng: &mut R) -> Result<Tensor> {
    if beta < 0.0 {
        return Err(Error::config(format!(
            "UOut half-width {beta} must be >= 0"
        )));
    }
    if beta == 0.0 {
        return Ok(x.clone());
    }
    apply(x, mode, || uout_mask(x.shape(), beta, rng))
}

/// Applies `spec` on the tape. Eval mode and zero probability return `x`
/// itself; otherwise the drawn mask is returned alongside the output.
pub fn apply_on_tape(
    tape: &mut Tape,
    x: Var,
    spec: &RegularizerSpec,
    key: MaskKey,
    mode: Mode,
) -> Result<(Var, Option<DropMask>)> {
    if mode == Mode::Eval || !spec.is_active() {
        return Ok((x, None));
    }
    let p = scheduled_p(spec, key.epoch);
    match draw_mask(spec, p, tape.shape(x), key)? {
        None => Ok((x, None)),
        Some(m) => Ok((tape.apply_mask(x, &m.mask)?, Some(m))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn zero_probability_is_identity() {
        let x = Tensor::randn(Shape::new(2, 3, 4, 4), 1.0, &mut rng());
        let mut r = rng();
        assert_eq!(vanilla_dropout(&x, 0.0, Mode::Train, &mut r).unwrap(), x);
        assert_eq!(channel_dropout(&x, 0.0, Mode::Train, &mut r).unwrap(), x);
        assert_eq!(dropblock(&x, 0.0, 3, Mode::Train, &mut r).unwrap(), x);
        assert_eq!(uout(&x, 0.0, Mode::Train, &mut r).unwrap(), x);
    }

    #[test]
    fn eval_mode_is_bitwise_identity() {
        let x = Tensor::randn(Shape::new(2, 3, 5, 5), 1.0, &mut rng());
        let mut r = rng();
        for y in [
            vanilla_dropout(&x, 0.5, Mode::Eval, &mut r).unwrap(),
            channel_dropout(&x, 0.5, Mode::Eval, &mut r).unwrap(),
            dropblock(&x, 0.5, 3, Mode::Eval, &mut r).unwrap(),
            uout(&x, 0.5, Mode::Eval, &mut r).unwrap(),
        ] {
            assert!(y
                .data()
                .iter()
                .zip(x.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn invalid_parameters() {
        let x = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let mut r = rng();
        assert!(vanilla_dropout(&x, 1.0, Mode::Train, &mut r).is_err());
        assert!(channel_dropout(&x, -0.1, Mode::Train, &mut r).is_err());
        assert!(dropblock(&x, 0.1, 5, Mode::Train, &mut r).is_err());
        assert!(uout(&x, -0.1, Mode::Train, &mut r).is_err());
        let mut spec = RegularizerSpec::new(Method::DropBlock, 0.2);
        spec.block_size = 4;
        assert!(spec.validate().is_err());
        let spec = RegularizerSpec::new(Method::Channel, 0.2)
            .with_schedule(Schedule::LinearRamp { epochs: 0 });
        assert!(spec.validate().is_err());
    }

    #[test]
    fn gamma_for_ten_by_ten() {
        let g = dropblock_gamma(0.1, 3, 10, 10);
        assert!((g - 0.1 / 9.0 * 100.0 / 64.0).abs() < 1e-15);
        assert!((g - 0.017361).abs() < 1e-6);
    }

    #[test]
    fn channel_mask_is_plane_constant() {
        let m = channel_mask(Shape::new(3, 40, 5, 6), 0.3, &mut rng()).unwrap();
        for n in 0..3 {
            for c in 0..40 {
                let p = m.plane(n, c);
                assert!(p.iter().all(|&v| v == p[0]));
                assert!(p[0] == 0.0 || p[0] == 1.0 / 0.7);
            }
        }
    }

    #[test]
    fn uout_ratio_is_bounded() {
        let x = Tensor::full(Shape::new(2, 8, 3, 3), 2.0);
        let y = uout(&x, 0.1, Mode::Train, &mut rng()).unwrap();
        for n in 0..2 {
            for c in 0..8 {
                let r = y.plane(n, c)[0] / 2.0;
                assert!((0.9..=1.1).contains(&r));
                assert!(y.plane(n, c).iter().all(|&v| v == y.plane(n, c)[0]));
            }
        }
    }

    #[test]
    fn schedule_values() {
        let spec = RegularizerSpec::new(Method::Channel, 0.2)
            .with_schedule(Schedule::LinearRamp { epochs: 30 });
        assert_eq!(scheduled_p(&spec, 0), 0.0);
        assert_eq!(scheduled_p(&spec, 15), 0.1);
        assert_eq!(scheduled_p(&spec, 30), 0.2);
        assert_eq!(scheduled_p(&spec, 100), 0.2);
        assert_eq!(
            scheduled_p(&RegularizerSpec::new(Method::UOut, 0.2), 0),
            0.2
        );
    }

    #[test]
    fn method_names_serialize() {
        for (m, s) in [
            (Method::None, "\"none\""),
            (Method::Vanilla, "\"vanilla\""),
            (Method::Channel, "\"channel\""),
            (Method::DropBlock, "\"dropblock\""),
            (Method::UOut, "\"uout\""),
        ] {
            assert_eq!(serde_json::to_string(&m).unwrap(), s);
            assert_eq!(serde_json::from_str::<Method>(s).unwrap(), m);
        }
    }

    #[test]
    fn same_key_same_mask() {
        let spec = RegularizerSpec::new(Method::DropBlock, 0.2).with_seed(5);
        let key = MaskKey {
            seed: 5,
            epoch: 3,
            layer: 2,
            batch: 7,
        };
        let s = Shape::new(2, 4, 8, 8);
        let a = draw_mask(&spec, 0.2, s, key).unwrap().unwrap();
        let b = draw_mask(&spec, 0.2, s, key).unwrap().unwrap();
        assert_eq!(a.mask, b.mask);
        let c = draw_mask(&spec, 0.2, s, MaskKey { batch: 8, ..key })
            .unwrap()
            .unwrap();
        assert_ne!(a.mask, c.mask);
    }
}
