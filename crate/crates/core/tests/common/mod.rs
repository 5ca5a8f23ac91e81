//! Finite-difference gradient checking and small experiment setups shared
//! by the integration tests.
#![allow(dead_code)]

pub mod cases;

use dropreg::autograd::{Tape, Var};
use dropreg::model::{ForwardCtx, Model};
use dropreg::tensor::Tensor;
use dropreg::Result;
use rand::seq::index::sample;
use rand::Rng;

pub const STEP: f64 = 1e-5;

/// `||a - b|| / max(||a||, ||b||)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn evaluate<F>(build: &F, inputs: &[Tensor], track: bool) -> Result<(f64, Vec<Option<Vec<f64>>>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(track)))
        .collect();
    let root = build(&mut tape, &vars)?;
    let value = tape.value(root).item();
    if !track {
        return Ok((value, Vec::new()));
    }
    tape.backward(root)?;
    let grads = vars
        .iter()
        .map(|&v| tape.grad(v).map(|g| g.to_vec()))
        .collect();
    Ok((value, grads))
}

/// Worst relative error over all inputs, comparing reverse-mode gradients
/// with central differences at up to `max_coords` coordinates per input.
pub fn check_graph<F, R>(build: F, inputs: &[Tensor], max_coords: usize, rng: &mut R) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    R: Rng,
{
    let (_, grads) = evaluate(&build, inputs, true)?;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let n = input.data().len();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            sample(rng, n, max_coords).into_vec()
        };
        let analytic: Vec<f64> = coords
            .iter()
            .map(|&i| grads[k].as_ref().map_or(0.0, |g| g[i]))
            .collect();
        let mut numeric = Vec::with_capacity(coords.len());
        for &i in &coords {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let fp = evaluate(&build, &plus, false)?.0;
            let fm = evaluate(&build, &minus, false)?.0;
            numeric.push((fp - fm) / (2.0 * STEP));
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Model-level check: gradients of the cross-entropy with respect to
/// sampled coordinates of the listed parameters. Masks are keyed by `ctx`,
/// so every perturbed pass sees the same masks.
pub fn check_model<R: Rng>(
    model: &mut Model,
    x: &Tensor,
    target: &[u8],
    ctx: &ForwardCtx,
    param_indices: &[usize],
    coords_per_param: usize,
    rng: &mut R,
) -> Result<f64> {
    let loss_at = |m: &mut Model, track: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let input = tape.leaf(x.clone());
        let fv = m.forward_on(&mut tape, input, ctx, track)?;
        let loss = tape.cross_entropy(fv.logits, target, 255)?;
        let value = tape.value(loss).item();
        if !track {
            return Ok((value, Vec::new()));
        }
        tape.backward(loss)?;
        let grads = fv
            .params
            .iter()
            .map(|&v| tape.grad(v).map(|g| g.to_vec()).unwrap_or_default())
            .collect();
        Ok((value, grads))
    };
    let (_, grads) = loss_at(model, true)?;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for &p in param_indices {
        let n = model.params()[p].value.data().len();
        let coords = sample(rng, n, coords_per_param.min(n)).into_vec();
        for i in coords {
            analytic.push(grads[p][i]);
            let orig = model.params()[p].value.data()[i];
            model.params_mut()[p].value.data_mut()[i] = orig + STEP;
            let fp = loss_at(model, false)?.0;
            model.params_mut()[p].value.data_mut()[i] = orig - STEP;
            let fm = loss_at(model, false)?.0;
            model.params_mut()[p].value.data_mut()[i] = orig;
            numeric.push((fp - fm) / (2.0 * STEP));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

/// A few-second synthetic experiment: 8 training and 8 validation scenes
/// at 32x32 with a narrow model.
pub fn tiny_experiment(name: &str, epochs: usize) -> dropreg::harness::ExperimentConfig {
    use dropreg::harness::{DatasetSource, ExperimentConfig};
    use dropreg::regularizers::RegularizerSpec;
    let mut e = ExperimentConfig::new(
        name,
        RegularizerSpec::none(),
        RegularizerSpec::none(),
        RegularizerSpec::none(),
    );
    e.train.epochs = epochs;
    e.train.probe_count = 2;
    if let DatasetSource::Synthetic {
        spec,
        train_count,
        val_count,
    } = &mut e.train.dataset
    {
        spec.height = 32;
        spec.width = 32;
        *train_count = 80;
        *val_count = 8;
    }
    e.train.augment.crop_size = 32;
    e.model.stage_widths = vec![8, 12, 16];
    e.model.blocks_per_stage = 1;
    e.model.decoder_width = 12;
    e.model.low_level_width = 4;
    e
}
