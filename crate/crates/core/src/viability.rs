//! Provider viability models and seeded random substreams.
//!
//! Every Monte Carlo experiment draws from a [`Seed`] tree: a trial derives
//! its own substream from `(seed, trial)`, and each stream inside the trial
//! derives another from its index. Draw sequences therefore never depend on
//! evaluation order or on how trials are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::MarkovRates;
use crate::error::{domain, Result};

/// Generator used for all simulation draws.
pub type SimRng = ChaCha8Rng;

pub const DEFAULT_SEED: u64 = 42;

/// Node in a deterministic seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed(pub u64);

impl Default for Seed {
    fn default() -> Self {
        Seed(DEFAULT_SEED)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Seed {
    /// Child seed for substream `index`.
    pub fn derive(self, index: u64) -> Seed {
        Seed(splitmix64(splitmix64(self.0) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    /// Child seed for a path of indices, e.g. `[trial, stream]`.
    pub fn derive_path(self, path: &[u64]) -> Seed {
        path.iter().fold(self, |s, &i| s.derive(i))
    }

    pub fn rng(self) -> SimRng {
        SimRng::seed_from_u64(self.0)
    }
}

/// Inverse CDF of `Exp(lambda)`.
pub fn exp_inverse_cdf(u: f64, lambda: f64) -> f64 {
    -(-u).ln_1p() / lambda
}

/// Draw a failure time `~ Exp(lambda)`.
pub fn sample_failure_time<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(domain(format!("sample_failure_time: rate must be > 0; got {lambda}")));
    }
    // u in [0, 1) so 1 - u > 0; reject the zero draw to keep the result strictly positive.
    loop {
        let t = exp_inverse_cdf(rng.random::<f64>(), lambda);
        if t > 0.0 {
            return Ok(t);
        }
    }
}

/// How a provider's viability evolves from one step to the next.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ViabilityModel {
    /// Absorbing failure after an `Exp(lambda)` lifetime; per step of length `dt`
    /// the failure probability is `1 - e^{-lambda dt}`.
    ExponentialFailure { lambda: f64, dt: f64 },
    /// Two-state chain sampled every `dt`, using the exact transition
    /// probabilities of the continuous-time process, so its long-run up
    /// fraction is `mu / (mu + lambda)` for any `dt`.
    TwoStateMarkov { rates: MarkovRates, dt: f64 },
    /// Memoryless per-step availability: each step the stream is
    /// non-viable with probability `per_step_fail`, whatever its previous state.
    BernoulliStep { per_step_fail: f64 },
}

impl ViabilityModel {
    pub fn bernoulli(per_step_fail: f64) -> Result<Self> {
        let m = ViabilityModel::BernoulliStep { per_step_fail };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ViabilityModel::ExponentialFailure { lambda, dt } => {
                if !(lambda >= 0.0) || !(dt > 0.0) {
                    return Err(domain(format!("exponential model needs lambda >= 0, dt > 0; got {lambda}, {dt}")));
                }
            }
            ViabilityModel::TwoStateMarkov { rates, dt } => {
                rates.validate()?;
                if !(dt > 0.0) {
                    return Err(domain(format!("two-state model needs dt > 0; got {dt}")));
                }
            }
            ViabilityModel::BernoulliStep { per_step_fail } => {
                if !(0.0..=1.0).contains(&per_step_fail) {
                    return Err(domain(format!("per_step_fail must lie in [0, 1]; got {per_step_fail}")));
                }
            }
        }
        Ok(())
    }

    /// Probability of being viable after one step, given the current state.
    pub fn next_up_probability(&self, currently_viable: bool) -> f64 {
        match *self {
            ViabilityModel::ExponentialFailure { lambda, dt } => {
                if currently_viable {
                    (-lambda * dt).exp()
                } else {
                    0.0
                }
            }
            ViabilityModel::TwoStateMarkov { rates, dt } => {
                let total = rates.mu + rates.lambda;
                let mixing = -(-total * dt).exp_m1();
                if currently_viable {
                    1.0 - rates.lambda / total * mixing
                } else {
                    rates.mu / total * mixing
                }
            }
            ViabilityModel::BernoulliStep { per_step_fail } => 1.0 - per_step_fail,
        }
    }
}

/// Advance one step of the viability process.
pub fn step_viable<R: Rng + ?Sized>(model: &ViabilityModel, currently_viable: bool, rng: &mut R) -> bool {
    let p_up = model.next_up_probability(currently_viable);
    // Exact at the endpoints so p=0 / p=1 never consume an ambiguous draw.
    if p_up >= 1.0 {
        return true;
    }
    if p_up <= 0.0 {
        return false;
    }
    rng.random::<f64>() < p_up
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n }
    }
}
