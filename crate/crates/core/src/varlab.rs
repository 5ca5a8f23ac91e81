//! Train/test variance shift of a single unit under dropout and UOut.
//!
//! With inputs of mean `mu` and variance `v`, inverted dropout with keep
//! probability `q` yields training variance `(mu^2 + v)/q - mu^2`, while UOut
//! with `r ~ U[-beta, beta]` yields `(mu^2 + v)(1 + beta^2/3) - mu^2`. The
//! shift ratio is test variance over training variance.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftScenario {
    pub mu: f64,
    pub v: f64,
    pub keep_p: f64,
    pub beta: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl ShiftScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.v > 0.0) {
            return Err(Error::config(format!(
                "variance must be positive, got {}",
                self.v
            )));
        }
        if !(self.keep_p > 0.0 && self.keep_p <= 1.0) {
            return Err(Error::config(format!(
                "keep probability {} outside (0, 1]",
                self.keep_p
            )));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::config(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        if self.n_samples < 10_000 {
            return Err(Error::config(format!(
                "need at least 10000 samples, got {}",
                self.n_samples
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftMethod {
    Dropout,
    #[serde(rename = "uout")]
    UOut,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub closed_form_ratio: f64,
    pub monte_carlo_ratio: f64,
    pub standard_error: f64,
}

pub fn dropout_shift_closed_form(s: &ShiftScenario) -> Result<f64> {
    if !(s.keep_p > 0.0) {
        return Err(Error::config(
            "variance-shift ratio is undefined for keep probability 0",
        ));
    }
    let m2 = s.mu * s.mu;
    Ok(s.v / ((m2 + s.v) / s.keep_p - m2))
}

pub fn uout_shift_closed_form(s: &ShiftScenario) -> Result<f64> {
    if !(s.beta >= 0.0) {
        return Err(Error::config(format!("beta must be >= 0, got {}", s.beta)));
    }
    let m2 = s.mu * s.mu;
    Ok(s.v / ((m2 + s.v) * (1.0 + s.beta * s.beta / 3.0) - m2))
}

pub fn closed_form(s: &ShiftScenario, method: ShiftMethod) -> Result<f64> {
    match method {
        ShiftMethod::Dropout => dropout_shift_closed_form(s),
        ShiftMethod::UOut => uout_shift_closed_form(s),
    }
}

/// Running sums for a variance ratio `var(x) / var(y)` over paired samples.
#[derive(Default)]
struct PairedSums {
    n: f64,
    x: f64,
    xx: f64,
    y: f64,
    yy: f64,
}

impl PairedSums {
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.x += x;
        self.xx += x * x;
        self.y += y;
        self.yy += y * y;
    }

    fn var(n: f64, s: f64, ss: f64) -> f64 {
        let m = s / n;
        (ss / n - m * m) * n / (n - 1.0)
    }

    fn ratio(&self) -> f64 {
        Self::var(self.n, self.x, self.xx) / Self::var(self.n, self.y, self.yy)
    }

    /// Ratio with sample `(x, y)` removed.
    fn ratio_without(&self, x: f64, y: f64) -> f64 {
        let n = self.n - 1.0;
        Self::var(n, self.x - x, self.xx - x * x) / Self::var(n, self.y - y, self.yy - y * y)
    }
}

/// Samples `x ~ N(mu, v)`, applies the train-time transform and compares
/// the sample variances of the clean and transformed draws. The standard
/// error is the delete-one jackknife estimate.
pub fn monte_carlo_shift(s: &ShiftScenario, method: ShiftMethod) -> Result<ShiftReport> {
    s.validate()?;
    let closed = closed_form(s, method)?;
    let normal = Normal::new(s.mu, s.v.sqrt()).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = rng::keyed(&[rng::stream::VARSHIFT, s.seed, method as u64]);
    let mut pairs = Vec::with_capacity(s.n_samples);
    let mut sums = PairedSums::default();
    for _ in 0..s.n_samples {
        let x: f64 = normal.sample(&mut rng);
        let t = match method {
            ShiftMethod::Dropout => {
                if rng.gen::<f64>() < s.keep_p {
                    x / s.keep_p
                } else {
                    0.0
                }
            }
            ShiftMethod::UOut => {
                if s.beta == 0.0 {
                    x
                } else {
                    x * (1.0 + rng.gen_range(-s.beta..=s.beta))
                }
            }
        };
        sums.push(x, t);
        pairs.push((x, t));
    }
    let ratio = sums.ratio();
    let n = pairs.len() as f64;
    let loo: Vec<f64> = pairs
        .iter()
        .map(|&(x, t)| sums.ratio_without(x, t))
        .collect();
    let loo_mean = loo.iter().sum::<f64>() / n;
    let se = ((n - 1.0) / n * loo.iter().map(|r| (r - loo_mean).powi(2)).sum::<f64>()).sqrt();
    Ok(ShiftReport {
        closed_form_ratio: closed,
        monte_carlo_ratio: ratio,
        standard_error: se,
    })
}

/// One line of a variance-shift sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: ShiftMethod,
    pub mu: f64,
    pub v: f64,
    pub p_or_beta: f64,
    pub report: ShiftReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub method: ShiftMethod,
    pub mu: f64,
    pub v: f64,
    /// Drop probability for dropout (keep = 1 - p), half-width for UOut.
    pub p_or_beta: f64,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples() -> usize {
    1_000_000
}

impl SweepEntry {
    pub fn scenario(&self) -> ShiftScenario {
        let (keep_p, beta) = match self.method {
            ShiftMethod::Dropout => (1.0 - self.p_or_beta, 0.0),
            ShiftMethod::UOut => (1.0, self.p_or_beta),
        };
        ShiftScenario {
            mu: self.mu,
            v: self.v,
            keep_p,
            beta,
            n_samples: self.n_samples,
            seed: self.seed,
        }
    }
}

pub fn run_sweep(entries: &[SweepEntry]) -> Result<Vec<SweepRow>> {
    entries
        .iter()
        .map(|e| {
            let report = monte_carlo_shift(&e.scenario(), e.method)?;
            Ok(SweepRow {
                method: e.method,
                mu: e.mu,
                v: e.v,
                p_or_beta: e.p_or_beta,
                report,
            })
        })
        .collect()
}

pub const SWEEP_HEADER: &str = "method,mu,v,p_or_beta,closed_form,monte_carlo,stderr";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let m = match r.method {
            ShiftMethod::Dropout => "dropout",
            ShiftMethod::UOut => "uout",
        };
        out.push_str(&format!(
            "{m},{},{},{},{},{},{}\n",
            r.mu,
            r.v,
            r.p_or_beta,
            r.report.closed_form_ratio,
            r.report.monte_carlo_ratio,
            r.report.standard_error
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(mu: f64, v: f64, keep_p: f64, beta: f64) -> ShiftScenario {
        ShiftScenario {
            mu,
            v,
            keep_p,
            beta,
            n_samples: 100_000,
            seed: 1,
        }
    }

    #[test]
    fn dropout_closed_form_examples() {
        assert!(
            (dropout_shift_closed_form(&scenario(0.0, 1.0, 0.9, 0.0)).unwrap() - 0.9).abs() < 1e-15
        );
        assert_eq!(
            dropout_shift_closed_form(&scenario(2.0, 3.0, 1.0, 0.0)).unwrap(),
            1.0
        );
        let r = dropout_shift_closed_form(&scenario(1.0, 1.0, 0.5, 0.0)).unwrap();
        assert!((r - 1.0 / 3.0).abs() < 1e-15);
        assert!(dropout_shift_closed_form(&scenario(0.0, 1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn uout_closed_form_examples() {
        assert_eq!(
            uout_shift_closed_form(&scenario(1.0, 2.0, 1.0, 0.0)).unwrap(),
            1.0
        );
        let r = uout_shift_closed_form(&scenario(0.0, 1.0, 1.0, 0.1)).unwrap();
        assert!((r - 1.0 / (1.0 + 0.01 / 3.0)).abs() < 1e-15);
        assert!((r - 0.996678).abs() < 1e-6);
        let r = uout_shift_closed_form(&scenario(0.0, 1.0, 1.0, 1.0)).unwrap();
        assert!((r - 0.75).abs() < 1e-15);
    }

    #[test]
    fn uout_without_noise_is_exactly_one() {
        let rep = monte_carlo_shift(&scenario(0.3, 2.0, 1.0, 0.0), ShiftMethod::UOut).unwrap();
        assert_eq!(rep.monte_carlo_ratio, 1.0);
    }

    #[test]
    fn zero_mean_dropout_ratio_ignores_v() {
        for v in [0.01, 1.0, 250.0] {
            let r = dropout_shift_closed_form(&scenario(0.0, v, 0.7, 0.0)).unwrap();
            assert!((r - 0.7).abs() < 1e-14);
        }
    }

    #[test]
    fn too_few_samples() {
        let mut s = scenario(0.0, 1.0, 0.9, 0.0);
        s.n_samples = 100;
        assert!(monte_carlo_shift(&s, ShiftMethod::Dropout).is_err());
    }

    #[test]
    fn sweep_csv_header() {
        let rows = run_sweep(&[SweepEntry {
            method: ShiftMethod::Dropout,
            mu: 0.0,
            v: 1.0,
            p_or_beta: 0.1,
            n_samples: 10_000,
            seed: 0,
        }])
        .unwrap();
        let csv = sweep_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(SWEEP_HEADER));
        assert!(lines.next().unwrap().starts_with("dropout,0,1,0.1,"));
    }
}
