//! Pixelwise softmax cross-entropy over the channel axis.

use crate::error::{Error, Result};
use crate::metrics::IGNORE_LABEL;
use crate::tensor::Tensor;

pub struct CrossEntropy {
    pub loss: f64,
    /// d loss / d logits, same layout as the logits.
    pub grad: Vec<f64>,
    pub counted: usize,
}

/// Mean of `-log softmax(logits)[label]` over pixels whose label is not
/// `ignore`. `target` is laid out `(N, H, W)`.
pub fn softmax_cross_entropy(logits: &Tensor, target: &[u8], ignore: u8) -> Result<CrossEntropy> {
    let s = logits.shape();
    let (k, plane) = (s.c(), s.plane());
    if target.len() != s.n() * plane {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            left: s.to_vec(),
            right: vec![target.len()],
        });
    }
    let mut grad = vec![0.0; s.numel()];
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut probs = vec![0.0; k];
    for n in 0..s.n() {
        for px in 0..plane {
            let label = target[n * plane + px];
            if label == ignore {
                continue;
            }
            if label as usize >= k {
                return Err(Error::InvalidLabel {
                    label,
                    index: n * plane + px,
                    classes: k,
                });
            }
            let at = |c: usize| (n * k + c) * plane + px;
            let max = (0..k)
                .map(|c| logits.data()[at(c)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (c, p) in probs.iter_mut().enumerate() {
                *p = (logits.data()[at(c)] - max).exp();
                z += *p;
            }
            total += z.ln() - (logits.data()[at(label as usize)] - max);
            for (c, p) in probs.iter().enumerate() {
                grad[at(c)] = p / z;
            }
            grad[at(label as usize)] -= 1.0;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::EmptyTarget);
    }
    let inv = 1.0 / counted as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok(CrossEntropy {
        loss: total * inv,
        grad,
        counted,
    })
}

pub fn cross_entropy_default(logits: &Tensor, target: &[u8]) -> Result<CrossEntropy> {
    softmax_cross_entropy(logits, target, IGNORE_LABEL)
}
