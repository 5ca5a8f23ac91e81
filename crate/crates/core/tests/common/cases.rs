//! Finite-difference cases, one function per op family. Each takes a seed
//! and returns the relative error between analytic and numeric gradients.

use dropreg::autograd::{Tape, Var};
use dropreg::model::{ForwardCtx, Hooks, Model, ModelConfig};
use dropreg::ops::conv::ConvGeometry;
use dropreg::ops::norm::{BatchNormState, NormMode};
use dropreg::regularizers::{channel_mask, dropblock_mask, Method, RegularizerSpec};
use dropreg::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_graph, check_model};

pub const OP_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;

pub type Case = fn(u64) -> f64;

pub const OP_CASES: [(&str, Case); 9] = [
    ("conv2d", conv2d),
    ("pointwise conv", pointwise_conv),
    ("batchnorm training", batchnorm_training),
    ("batchnorm inference", batchnorm_inference),
    ("relu/mul/add", elementwise),
    ("masks", masks),
    ("concat/upsample/pool", concat_upsample_pool),
    ("cross entropy", cross_entropy),
    ("composite", composite),
];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: Shape, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, r)
}

/// Values kept at least `margin` away from zero, so ReLU kinks sit well
/// outside the difference stencil.
fn away_from_zero(shape: Shape, margin: f64, r: &mut ChaCha8Rng) -> Tensor {
    let mut t = randn(shape, r);
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = margin.copysign(*v) * 2.0;
        }
    }
    t
}

pub fn conv2d(seed: u64) -> f64 {
    let geoms = [
        ConvGeometry::new(1, 1, 1),
        ConvGeometry::new(2, 1, 1),
        ConvGeometry::new(1, 2, 2),
        ConvGeometry::new(2, 0, 1),
    ];
    let mut r = rng(seed);
    let g = geoms[seed as usize % geoms.len()];
    let x = randn(Shape::new(2, 3, 7, 6), &mut r);
    let w = randn(Shape::new(4, 3, 3, 3), &mut r);
    let b = randn(Shape::new(1, 4, 1, 1), &mut r);
    let out_h = g.out_dim(7, 3).unwrap();
    let out_w = g.out_dim(6, 3).unwrap();
    let weights = randn(Shape::new(2, 4, out_h, out_w), &mut r);
    check_graph(
        |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), g)?;
            t.weighted_sum(y, &weights)
        },
        &[x, w, b],
        200,
        &mut r,
    )
    .unwrap()
}

pub fn pointwise_conv(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = randn(Shape::new(2, 5, 4, 4), &mut r);
    let w = randn(Shape::new(3, 5, 1, 1), &mut r);
    let weights = randn(Shape::new(2, 3, 4, 4), &mut r);
    check_graph(
        |t, v| {
            let y = t.conv2d(v[0], v[1], None, ConvGeometry::new(1, 0, 1))?;
            t.weighted_sum(y, &weights)
        },
        &[x, w],
        200,
        &mut r,
    )
    .unwrap()
}

pub fn batchnorm_training(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = randn(Shape::new(3, 4, 3, 3), &mut r);
    let gamma = randn(Shape::new(1, 4, 1, 1), &mut r);
    let beta = randn(Shape::new(1, 4, 1, 1), &mut r);
    let weights = randn(Shape::new(3, 4, 3, 3), &mut r);
    check_graph(
        |t, v| {
            let mut st = BatchNormState::new(4);
            let y = t.batchnorm2d(v[0], v[1], v[2], &mut st, NormMode::Training)?;
            t.weighted_sum(y, &weights)
        },
        &[x, gamma, beta],
        200,
        &mut r,
    )
    .unwrap()
}

pub fn batchnorm_inference(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = randn(Shape::new(2, 3, 2, 2), &mut r);
    let gamma = randn(Shape::new(1, 3, 1, 1), &mut r);
    let beta = randn(Shape::new(1, 3, 1, 1), &mut r);
    let weights = randn(Shape::new(2, 3, 2, 2), &mut r);
    let mut state = BatchNormState::new(3);
    for c in 0..3 {
        state.running_mean[c] = r.gen_range(-1.0..1.0);
        state.running_var[c] = r.gen_range(0.5..2.0);
    }
    check_graph(
        |t, v| {
            let mut st = state.clone();
            let y = t.batchnorm2d(v[0], v[1], v[2], &mut st, NormMode::Inference)?;
            t.weighted_sum(y, &weights)
        },
        &[x, gamma, beta],
        200,
        &mut r,
    )
    .unwrap()
}

pub fn elementwise(seed: u64) -> f64 {
    let mut r = rng(seed);
    let s = Shape::new(2, 3, 3, 4);
    let a = away_from_zero(s, 0.05, &mut r);
    let b = randn(s, &mut r);
    let weights = randn(s, &mut r);
    check_graph(
        |t, v| {
            let y = t.relu(v[0])?;
            let y = t.mul(y, v[1])?;
            let y = t.add(y, v[1])?;
            t.weighted_sum(y, &weights)
        },
        &[a, b],
        200,
        &mut r,
    )
    .unwrap()
}

pub fn masks(seed: u64) -> f64 {
    let mut r = rng(seed);
    let s = Shape::new(2, 4, 6, 6);
    let x = randn(s, &mut r);
    let mask = if seed % 2 == 0 {
        channel_mask(s, 0.3, &mut r).unwrap()
    } else {
        dropblock_mask(s, 0.2, 3, &mut r).unwrap()
    };
    let weights = randn(s, &mut r);
    check_graph(
        |t, v| {
            let y = t.apply_mask(v[0], &mask)?;
            t.weighted_sum(y, &weights)
        },
        &[x],
        200,
        &mut r,
    )
    .unwrap()
}

pub fn concat_upsample_pool(seed: u64) -> f64 {
    let mut r = rng(seed);
    let a = randn(Shape::new(2, 2, 3, 4), &mut r);
    let b = randn(Shape::new(2, 3, 3, 4), &mut r);
    let (oh, ow) = if seed % 2 == 0 { (7, 9) } else { (6, 8) };
    let w_up = randn(Shape::new(2, 5, oh, ow), &mut r);
    let w_pool = randn(Shape::new(2, 5, 1, 1), &mut r);
    check_graph(
        |t, v| {
            let cat = t.concat_channels(&[v[0], v[1]])?;
            let up = t.upsample(cat, oh, ow)?;
            let pooled = t.global_avg_pool(cat)?;
            let l1 = t.weighted_sum(up, &w_up)?;
            let l2 = t.weighted_sum(pooled, &w_pool)?;
            t.add(l1, l2)
        },
        &[a, b],
        200,
        &mut r,
    )
    .unwrap()
}

pub fn cross_entropy(seed: u64) -> f64 {
    let mut r = rng(seed);
    let logits = randn(Shape::new(2, 4, 3, 3), &mut r);
    let target: Vec<u8> = (0..18)
        .map(|i| if i % 5 == 0 { 255 } else { r.gen_range(0..4) })
        .collect();
    check_graph(
        |t, v| t.cross_entropy(v[0], &target, 255),
        &[logits],
        200,
        &mut r,
    )
    .unwrap()
}

pub fn composite(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = randn(Shape::new(2, 3, 6, 6), &mut r);
    let w1 = randn(Shape::new(4, 3, 3, 3), &mut r);
    let gamma = randn(Shape::new(1, 4, 1, 1), &mut r);
    let beta = randn(Shape::new(1, 4, 1, 1), &mut r);
    let w2 = randn(Shape::new(3, 8, 1, 1), &mut r);
    let target: Vec<u8> = (0..2 * 12 * 12).map(|_| r.gen_range(0..3)).collect();
    check_graph(
        |t: &mut Tape, v: &[Var]| {
            let h = t.conv2d(v[0], v[1], None, ConvGeometry::new(2, 1, 1))?;
            let mut st = BatchNormState::new(4);
            let h = t.batchnorm2d(h, v[2], v[3], &mut st, NormMode::Training)?;
            let h = t.relu(h)?;
            let pooled = t.global_avg_pool(h)?;
            let pooled = t.upsample(pooled, 3, 3)?;
            let cat = t.concat_channels(&[h, pooled])?;
            let logits = t.conv2d(cat, v[4], None, ConvGeometry::new(1, 0, 1))?;
            let logits = t.upsample(logits, 12, 12)?;
            t.cross_entropy(logits, &target, 255)
        },
        &[x, w1, gamma, beta, w2],
        60,
        &mut r,
    )
    .unwrap()
}

pub fn small_config() -> ModelConfig {
    ModelConfig {
        num_classes: 3,
        stage_widths: vec![4, 6, 8],
        blocks_per_stage: 1,
        pyramid_rates: vec![1, 2],
        decoder_width: 6,
        low_level_width: 4,
        ..ModelConfig::default()
    }
}

/// The whole network with a different regularizer at each hook. Returns
/// the error and the number of masks drawn.
pub fn model(seed: u64) -> (f64, u64) {
    let hooks = Hooks {
        backbone_blocks: RegularizerSpec::new(Method::Channel, 0.2),
        spp_output: RegularizerSpec::new(Method::UOut, 0.2),
        decoder_output: RegularizerSpec::new(Method::DropBlock, 0.2),
    };
    let mut r = rng(seed);
    let mut m = Model::build(small_config(), hooks, seed).unwrap();
    let x = randn(Shape::new(2, 3, 16, 16), &mut r);
    let target: Vec<u8> = (0..2 * 16 * 16).map(|_| r.gen_range(0..3)).collect();
    let n = m.params().len();
    let picks = [0, 1, n / 3, n / 2, 2 * n / 3, n - 2, n - 1];
    let err = check_model(
        &mut m,
        &x,
        &target,
        &ForwardCtx::train(3, seed),
        &picks,
        4,
        &mut r,
    )
    .unwrap();
    (err, m.stats.masks_drawn)
}
