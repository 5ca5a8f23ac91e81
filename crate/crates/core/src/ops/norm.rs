//! Per-channel batch normalization kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    Training,
    Inference,
}

/// Running statistics and hyperparameters of one batch-norm layer. The
/// learned scale and shift live with the other trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// Values saved by the forward pass for the backward rule.
#[derive(Clone, Debug)]
pub struct NormCache {
    /// Normalized input in training mode.
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mode: NormMode,
}

fn channel_sums(x: &Tensor, c: usize) -> impl Iterator<Item = &[f64]> {
    let s = x.shape();
    (0..s.n()).map(move |n| x.plane(n, c))
}

pub fn batchnorm_forward(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    state: &mut BatchNormState,
    mode: NormMode,
) -> Result<(Tensor, NormCache)> {
    let s = x.shape();
    let c = s.c();
    if gamma.len() != c || beta.len() != c || state.channels() != c {
        return Err(Error::ShapeMismatch {
            op: "batchnorm2d",
            left: s.to_vec(),
            right: vec![gamma.len(), beta.len(), state.channels()],
        });
    }
    let count = s.n() * s.plane();
    let mut out = Tensor::zeros(s);
    let mut inv_std = vec![0.0; c];
    let mut xhat = Vec::new();
    match mode {
        NormMode::Training => {
            if count < 2 {
                return Err(Error::DegenerateBatch(count));
            }
            xhat = vec![0.0; s.numel()];
            for ch in 0..c {
                let mean = channel_sums(x, ch).flatten().sum::<f64>() / count as f64;
                let var = channel_sums(x, ch)
                    .flatten()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>()
                    / count as f64;
                let is = 1.0 / (var + state.eps).sqrt();
                inv_std[ch] = is;
                for n in 0..s.n() {
                    let start = x.index(n, ch, 0, 0);
                    for i in start..start + s.plane() {
                        let xh = (x.data()[i] - mean) * is;
                        xhat[i] = xh;
                        out.data_mut()[i] = gamma[ch] * xh + beta[ch];
                    }
                }
                let unbiased = var * count as f64 / (count - 1) as f64;
                let m = state.momentum;
                state.running_mean[ch] = (1.0 - m) * state.running_mean[ch] + m * mean;
                state.running_var[ch] = (1.0 - m) * state.running_var[ch] + m * unbiased;
            }
        }
        NormMode::Inference => {
            for ch in 0..c {
                let is = 1.0 / (state.running_var[ch] + state.eps).sqrt();
                inv_std[ch] = is;
                let mean = state.running_mean[ch];
                for n in 0..s.n() {
                    let start = x.index(n, ch, 0, 0);
                    for i in start..start + s.plane() {
                        out.data_mut()[i] = gamma[ch] * (x.data()[i] - mean) * is + beta[ch];
                    }
                }
            }
        }
    }
    Ok((
        out,
        NormCache {
            xhat,
            inv_std,
            mode,
        },
    ))
}

pub struct NormGrads<'a> {
    pub input: Option<&'a mut [f64]>,
    pub gamma: Option<&'a mut [f64]>,
    pub beta: Option<&'a mut [f64]>,
}

/// Backward rule. `x` is the forward input (needed in inference mode only).
pub fn batchnorm_backward(
    x: &Tensor,
    gamma: &[f64],
    state: &BatchNormState,
    cache: &NormCache,
    grad_out: &[f64],
    grads: NormGrads<'_>,
) {
    let s: Shape = x.shape();
    let count = (s.n() * s.plane()) as f64;
    let NormGrads {
        input: mut dx,
        gamma: mut dgamma,
        beta: mut dbeta,
    } = grads;
    let plane = s.plane();
    for ch in 0..s.c() {
        let idx = |n: usize| {
            let start = x.index(n, ch, 0, 0);
            start..start + plane
        };
        let xhat_at = |i: usize| match cache.mode {
            NormMode::Training => cache.xhat[i],
            NormMode::Inference => (x.data()[i] - state.running_mean[ch]) * cache.inv_std[ch],
        };
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for n in 0..s.n() {
            for i in idx(n) {
                sum_dy += grad_out[i];
                sum_dy_xhat += grad_out[i] * xhat_at(i);
            }
        }
        if let Some(g) = dgamma.as_deref_mut() {
            g[ch] += sum_dy_xhat;
        }
        if let Some(b) = dbeta.as_deref_mut() {
            b[ch] += sum_dy;
        }
        if let Some(dx) = dx.as_deref_mut() {
            let scale = gamma[ch] * cache.inv_std[ch];
            for n in 0..s.n() {
                for i in idx(n) {
                    dx[i] += match cache.mode {
                        NormMode::Training => {
                            scale
                                * (grad_out[i] - sum_dy / count - xhat_at(i) * sum_dy_xhat / count)
                        }
                        NormMode::Inference => scale * grad_out[i],
                    };
                }
            }
        }
    }
}
