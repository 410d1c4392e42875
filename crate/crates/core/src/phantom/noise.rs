use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame noise added to noiseless TACs.
///
/// Both noisy models share the frame-duration-aware variance
/// `sigma_f^2 = level^2 * mu_f * mean_mu * mean_d / d_f`, where `mean_mu` is
/// the duration-weighted mean activity of the curve and `mean_d` the mean
/// frame duration: short frames and hot frames are noisier, as with
/// counting statistics, and `level` is the relative noise of a frame of
/// average duration at the curve's average activity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    None,
    /// Additive Gaussian with the variance above.
    Gaussian { level: f64 },
    /// Poisson counts rescaled to activity with the same mean and variance.
    ScaledPoisson { level: f64 },
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::Gaussian { level: 0.05 }
    }
}

impl NoiseModel {
    pub fn level(&self) -> f64 {
        match *self {
            NoiseModel::None => 0.0,
            NoiseModel::Gaussian { level } | NoiseModel::ScaledPoisson { level } => level,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.level();
        if !l.is_finite() || l < 0.0 {
            return Err(Error::config(format!("noise level {l} must be finite and non-negative")));
        }
        Ok(())
    }

    /// Noisy copy of `mean` drawn from the stream `stream` of `seed`.
    pub fn apply(&self, mean: &[f64], durations_s: &[f64], seed: u64, stream: u64) -> Vec<f64> {
        let sigma = noise_sigma(self.level(), mean, durations_s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        match *self {
            NoiseModel::None => mean.to_vec(),
            NoiseModel::Gaussian { .. } => mean
                .iter()
                .zip(&sigma)
                .map(|(&m, &s)| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + s * z
                })
                .collect(),
            NoiseModel::ScaledPoisson { .. } => mean
                .iter()
                .zip(&sigma)
                .map(|(&m, &s)| {
                    if m <= 0.0 || s == 0.0 {
                        return m.max(0.0);
                    }
                    // counts with mean m/q and variance m q after rescaling
                    let q = s * s / m;
                    let counts = Poisson::new(m / q).map(|d| d.sample(&mut rng)).unwrap_or(m / q);
                    counts * q
                })
                .collect(),
        }
    }
}

/// Per-frame standard deviation of the noise models for a noiseless curve.
pub fn noise_sigma(level: f64, mean: &[f64], durations_s: &[f64]) -> Vec<f64> {
    let total: f64 = durations_s.iter().sum();
    let mean_d = total / durations_s.len() as f64;
    let mean_mu = mean.iter().zip(durations_s).map(|(m, d)| m * d).sum::<f64>() / total;
    mean.iter()
        .zip(durations_s)
        .map(|(&m, &d)| level * (m.max(0.0) * mean_mu.max(0.0) * mean_d / d).sqrt())
        .collect()
}
