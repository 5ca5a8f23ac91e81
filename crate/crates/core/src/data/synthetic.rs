//! Procedural scenes of coloured shapes over a textured background.
//!
//! Class 0 is background; classes 1.. are disk, rectangle, triangle and ring
//! (the first `shape_classes` of them). Shapes are painted back to front, so
//! the label of a pixel is the class of the topmost shape covering it.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::subsample::dominant_class;
use super::SamplePair;
use crate::error::{Error, Result};
use crate::metrics::LabelMap;
use crate::rng;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disk,
    Rectangle,
    Triangle,
    Ring,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Disk,
        ShapeKind::Rectangle,
        ShapeKind::Triangle,
        ShapeKind::Ring,
    ];

    pub fn class(self) -> u8 {
        self as u8 + 1
    }
}

/// Inner radius of a ring relative to its outer radius.
pub const RING_INNER: f64 = 0.55;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeInstance {
    pub kind: ShapeKind,
    /// Centre in pixel coordinates (pixel `(x, y)` is sampled at `x + 0.5`).
    pub cx: f64,
    pub cy: f64,
    /// Radius, or half-width for rectangles.
    pub size: f64,
    /// Height / width for rectangles.
    pub aspect: f64,
    /// Rotation in radians (triangles).
    pub angle: f64,
    pub color: [f64; 3],
}

impl ShapeInstance {
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let (dx, dy) = (px - self.cx, py - self.cy);
        match self.kind {
            ShapeKind::Disk => dx * dx + dy * dy <= self.size * self.size,
            ShapeKind::Ring => {
                let d2 = dx * dx + dy * dy;
                let inner = self.size * RING_INNER;
                d2 <= self.size * self.size && d2 >= inner * inner
            }
            ShapeKind::Rectangle => dx.abs() <= self.size && dy.abs() <= self.size * self.aspect,
            ShapeKind::Triangle => {
                let v: Vec<(f64, f64)> = (0..3)
                    .map(|k| {
                        let a = self.angle + 2.0 * PI * k as f64 / 3.0;
                        (self.size * a.cos(), self.size * a.sin())
                    })
                    .collect();
                let side = |(ax, ay): (f64, f64), (bx, by): (f64, f64)| {
                    (bx - ax) * (dy - ay) - (by - ay) * (dx - ax)
                };
                let s = [side(v[0], v[1]), side(v[1], v[2]), side(v[2], v[0])];
                s.iter().all(|&x| x >= 0.0) || s.iter().all(|&x| x <= 0.0)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneSpec {
    pub height: usize,
    pub width: usize,
    /// Number of shape classes k (2..=4); the label space has k + 1 classes.
    pub shape_classes: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Half-width of the uniform per-pixel texture noise.
    pub noise_amplitude: f64,
    /// Shapes are coloured around a per-class base colour, each channel
    /// jittered by up to this much; `None` draws colours uniformly.
    pub color_jitter: Option<f64>,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            height: 64,
            width: 64,
            shape_classes: 4,
            min_shapes: 1,
            max_shapes: 3,
            noise_amplitude: 0.1,
            color_jitter: Some(0.3),
            seed: 0,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn num_classes(&self) -> usize {
        self.shape_classes + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.shape_classes) {
            return Err(Error::config(format!(
                "shape classes must be in 2..=4, got {}",
                self.shape_classes
            )));
        }
        if self.min_shapes == 0 || self.min_shapes > self.max_shapes {
            return Err(Error::config(format!(
                "shape count range [{}, {}] is invalid",
                self.min_shapes, self.max_shapes
            )));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::config("synthetic canvas must be at least 8x8"));
        }
        if !(self.noise_amplitude >= 0.0) {
            return Err(Error::config("noise amplitude must be >= 0"));
        }
        if matches!(self.color_jitter, Some(j) if !(j >= 0.0)) {
            return Err(Error::config("colour jitter must be >= 0"));
        }
        Ok(())
    }
}

/// Base colours of disk, rectangle, triangle and ring.
pub const CLASS_COLORS: [[f64; 3]; 4] = [
    [0.85, 0.2, 0.2],
    [0.2, 0.8, 0.25],
    [0.2, 0.3, 0.85],
    [0.85, 0.8, 0.2],
];

fn shape_color<R: Rng>(
    spec: &SyntheticSceneSpec,
    kind: ShapeKind,
    bg: [f64; 3],
    rng: &mut R,
) -> [f64; 3] {
    match spec.color_jitter {
        None => random_color(rng, Some(bg)),
        Some(j) => CLASS_COLORS[kind as usize].map(|c| {
            let d = if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
            (c + d).clamp(0.0, 1.0)
        }),
    }
}

fn random_color<R: Rng>(rng: &mut R, avoid: Option<[f64; 3]>) -> [f64; 3] {
    loop {
        let c = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        match avoid {
            Some(a) if c.iter().zip(&a).map(|(x, y)| (x - y).abs()).sum::<f64>() < 0.6 => continue,
            _ => return c,
        }
    }
}

/// Paints `shapes` (back to front) over a background of colour `bg`.
pub fn render_scene<R: Rng>(
    spec: &SyntheticSceneSpec,
    bg: [f64; 3],
    shapes: &[ShapeInstance],
    rng: &mut R,
) -> Result<SamplePair> {
    let (h, w) = (spec.height, spec.width);
    let mut label = LabelMap::filled(h, w, 0);
    let mut image = Tensor::zeros(Shape::new(1, 3, h, w));
    let amp = spec.noise_amplitude;
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut color = bg;
            for s in shapes {
                if s.contains(px, py) {
                    color = s.color;
                    label.set(y, x, s.kind.class());
                }
            }
            for (c, v) in color.iter().enumerate() {
                let noise = if amp > 0.0 {
                    rng.gen_range(-amp..=amp)
                } else {
                    0.0
                };
                let i = image.index(0, c, y, x);
                image.data_mut()[i] = (v + noise).clamp(0.0, 1.0);
            }
        }
    }
    SamplePair::new(image, label)
}

fn random_shape<R: Rng>(
    spec: &SyntheticSceneSpec,
    kind: ShapeKind,
    scale: (f64, f64),
    bg: [f64; 3],
    rng: &mut R,
) -> ShapeInstance {
    let m = spec.height.min(spec.width) as f64;
    let size = m * rng.gen_range(scale.0..scale.1);
    ShapeInstance {
        kind,
        cx: rng.gen_range(size * 0.6..(spec.width as f64 - size * 0.6)),
        cy: rng.gen_range(size * 0.6..(spec.height as f64 - size * 0.6)),
        size,
        aspect: rng.gen_range(0.5..1.5),
        angle: rng.gen_range(0.0..2.0 * PI),
        color: shape_color(spec, kind, bg, rng),
    }
}

/// Deterministic in `(spec.seed, index)`. Scene `index` is built around
/// shape class `1 + index % k`, which is drawn last and largest; the draw is
/// retried until that class dominates and covers at least 1% of the canvas.
pub fn generate_synthetic_sample(spec: &SyntheticSceneSpec, index: u64) -> Result<SamplePair> {
    spec.validate()?;
    let k = spec.shape_classes;
    let primary = ShapeKind::ALL[(index % k as u64) as usize];
    let min_pixels = (spec.height * spec.width).div_ceil(100);
    let mut last = None;
    for attempt in 0..64u64 {
        let mut rng = rng::keyed(&[rng::stream::SCENE, spec.seed, index, attempt]);
        let bg = random_color(&mut rng, None);
        let count = rng.gen_range(spec.min_shapes..=spec.max_shapes);
        let mut shapes = Vec::with_capacity(count);
        for _ in 1..count {
            let kind = ShapeKind::ALL[rng.gen_range(0..k)];
            shapes.push(random_shape(spec, kind, (0.08, 0.18), bg, &mut rng));
        }
        shapes.push(random_shape(spec, primary, (0.18, 0.32), bg, &mut rng));
        let pair = render_scene(spec, bg, &shapes, &mut rng)?;
        let hist = pair.label.histogram(k + 1);
        if dominant_class(&pair.label, k + 1) == primary.class()
            && hist[primary.class() as usize] >= min_pixels
        {
            return Ok(pair);
        }
        last = Some(pair);
    }
    Ok(last.expect("at least one attempt"))
}
