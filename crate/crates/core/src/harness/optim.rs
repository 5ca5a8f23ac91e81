//! Polynomial learning-rate decay and SGD with momentum and weight decay.

use crate::error::{Error, Result};
use crate::model::{GroupId, Param};

/// `base_lr * (1 - iteration / max_iterations)^power`.
pub fn poly_lr(base_lr: f64, iteration: usize, max_iterations: usize, power: f64) -> Result<f64> {
    if max_iterations == 0 {
        return Err(Error::Schedule("max_iterations must be at least 1".into()));
    }
    if iteration > max_iterations {
        return Err(Error::Schedule(format!(
            "iteration {iteration} is past the end of the schedule ({max_iterations})"
        )));
    }
    Ok(base_lr * (1.0 - iteration as f64 / max_iterations as f64).powf(power))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Learning-rate multiplier per parameter group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupMultipliers {
    pub backbone: f64,
    pub head: f64,
}

impl GroupMultipliers {
    pub fn get(&self, id: GroupId) -> f64 {
        match id {
            GroupId::Backbone => self.backbone,
            GroupId::Head => self.head,
        }
    }
}

/// One update over raw buffers:
/// `v <- momentum * v + g + weight_decay * theta; theta <- theta - lr * v`.
pub fn sgd_update(
    theta: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    cfg: SgdConfig,
) -> Result<()> {
    if theta.len() != grad.len() || theta.len() != velocity.len() {
        return Err(Error::Optimizer(format!(
            "parameter has {} values, gradient {}, velocity {}",
            theta.len(),
            grad.len(),
            velocity.len()
        )));
    }
    for ((t, &g), v) in theta.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = cfg.momentum * *v + g + cfg.weight_decay * *t;
        *t -= lr * *v;
    }
    Ok(())
}

/// Steps every parameter with `lr_base` times its group multiplier. An
/// empty `velocity` is initialised to zeros. Returns the learning rates
/// applied to the backbone and head groups.
pub fn sgd_step(
    params: &mut [Param],
    grads: &[&[f64]],
    velocity: &mut Vec<Vec<f64>>,
    lr_base: f64,
    multipliers: GroupMultipliers,
    cfg: SgdConfig,
) -> Result<[f64; 2]> {
    if grads.len() != params.len() {
        return Err(Error::Optimizer(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if velocity.is_empty() {
        *velocity = params
            .iter()
            .map(|p| vec![0.0; p.value.data().len()])
            .collect();
    }
    if velocity.len() != params.len() {
        return Err(Error::Optimizer(format!(
            "{} parameters but {} velocity buffers",
            params.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let lr = lr_base * multipliers.get(p.group);
        sgd_update(p.value.data_mut(), g, v, lr, cfg)
            .map_err(|e| Error::Optimizer(format!("{}: {e}", p.name)))?;
    }
    Ok([lr_base * multipliers.backbone, lr_base * multipliers.head])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_endpoints() {
        assert_eq!(poly_lr(7e-3, 0, 100, 0.9).unwrap(), 7e-3);
        assert_eq!(poly_lr(7e-3, 100, 100, 0.9).unwrap(), 0.0);
        assert!((poly_lr(7e-3, 50, 100, 0.9).unwrap() - 0.003751207118877026).abs() < 1e-15);
        assert!(poly_lr(7e-3, 101, 100, 0.9).is_err());
        assert!(poly_lr(7e-3, 0, 0, 0.9).is_err());
    }

    #[test]
    fn momentum_unrolls() {
        let cfg = SgdConfig {
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let mut theta = [1.0];
        let mut v = [0.0];
        sgd_update(&mut theta, &[0.5], &mut v, 0.1, cfg).unwrap();
        sgd_update(&mut theta, &[0.5], &mut v, 0.1, cfg).unwrap();
        assert!((1.0 - theta[0] - 0.1 * 0.5 * 2.9).abs() < 1e-15);
    }

    #[test]
    fn plain_step_and_fixed_point() {
        let cfg = SgdConfig {
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let mut theta = [2.0, -1.0];
        let mut v = [0.0, 0.0];
        sgd_update(&mut theta, &[1.0, 4.0], &mut v, 0.5, cfg).unwrap();
        assert_eq!(theta, [1.5, -3.0]);
        let before = theta;
        sgd_update(&mut theta, &[0.0, 0.0], &mut [0.0, 0.0], 0.5, cfg).unwrap();
        assert_eq!(theta, before);
        assert!(sgd_update(&mut theta, &[0.0], &mut v, 0.5, cfg).is_err());
    }
}
