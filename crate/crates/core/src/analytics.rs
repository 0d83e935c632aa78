//! Closed-form reliability and acquisition results.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Largest rate vector accepted by [`expected_max_exponential`].
pub const MAX_SUBSET_RATES: usize = 20;

/// Recovery and failure rates of a two-state viability process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovRates {
    pub mu: f64,
    pub lambda: f64,
}

impl MarkovRates {
    pub fn new(mu: f64, lambda: f64) -> Result<Self> {
        let rates = Self { mu, lambda };
        rates.validate()?;
        Ok(rates)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.lambda >= 0.0) || !self.mu.is_finite() || !self.lambda.is_finite()
        {
            return Err(domain(format!("rates must be finite and >= 0; got mu={}, lambda={}", self.mu, self.lambda)));
        }
        if self.mu + self.lambda <= 0.0 {
            return Err(domain("mu + lambda must be > 0"));
        }
        Ok(())
    }
}

/// Provider count, batch width and per-provider failure probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedupScenario {
    pub n_providers: u32,
    pub batch_size: u32,
    pub failure_prob: f64,
}

impl SpeedupScenario {
    pub fn new(n_providers: u32, batch_size: u32, failure_prob: f64) -> Result<Self> {
        let s = Self { n_providers, batch_size, failure_prob };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 || self.batch_size > self.n_providers {
            return Err(domain(format!(
                "batch size must satisfy 1 <= b <= N; got b={}, N={}",
                self.batch_size, self.n_providers
            )));
        }
        if !(0.0..1.0).contains(&self.failure_prob) {
            return Err(domain(format!("failure probability must lie in [0, 1); got {}", self.failure_prob)));
        }
        Ok(())
    }
}

pub fn stationary_availability(rates: MarkovRates) -> Result<f64> {
    rates.validate()?;
    Ok(rates.mu / (rates.mu + rates.lambda))
}

/// Upper bound on the probability that every slot fails within `horizon`.
pub fn interruption_prob(lambdas: &[f64], horizon: f64) -> Result<f64> {
    if lambdas.is_empty() {
        return Err(domain("interruption_prob: empty rate list"));
    }
    if !(horizon >= 0.0) {
        return Err(domain(format!("interruption_prob: horizon must be >= 0; got {horizon}")));
    }
    lambdas.iter().try_fold(1.0, |acc, &l| {
        if !(l >= 0.0) {
            return Err(domain(format!("interruption_prob: negative rate {l}")));
        }
        // exp_m1 keeps precision for small lambda*T.
        let p = if horizon.is_infinite() { if l > 0.0 { 1.0 } else { 0.0 } } else { -(-l * horizon).exp_m1() };
        Ok(acc * p)
    })
}

pub fn harmonic(k: u32) -> Result<f64> {
    if k == 0 {
        return Err(domain("harmonic: k must be >= 1"));
    }
    Ok((1..=k).map(|j| 1.0 / j as f64).sum())
}

/// Expected maximum of independent exponential variables, by
/// inclusion–exclusion over all non-empty subsets of `lambdas`.
pub fn expected_max_exponential(lambdas: &[f64]) -> Result<f64> {
    if lambdas.is_empty() {
        return Err(domain("expected_max_exponential: empty rate list"));
    }
    if lambdas.len() > MAX_SUBSET_RATES {
        return Err(domain(format!(
            "expected_max_exponential: at most {MAX_SUBSET_RATES} rates supported; got {}",
            lambdas.len()
        )));
    }
    if let Some(bad) = lambdas.iter().find(|&&l| !(l > 0.0) || !l.is_finite()) {
        return Err(domain(format!("expected_max_exponential: rates must be > 0; got {bad}")));
    }
    let k = lambdas.len();
    let mut total = 0.0;
    for mask in 1u32..(1u32 << k) {
        let rate_sum: f64 = (0..k).filter(|j| mask & (1 << j) != 0).map(|j| lambdas[j]).sum();
        let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
        total += sign / rate_sum;
    }
    Ok(total)
}

/// Expected probe rounds to the first working stream when all N are probed at once.
pub fn expected_time_concurrent(scenario: SpeedupScenario) -> Result<f64> {
    scenario.validate()?;
    Ok(1.0 / (1.0 - scenario.failure_prob.powi(scenario.n_providers as i32)))
}

/// Expected probe rounds under batched probing, with the pessimistic N/b round cost.
pub fn expected_time_batched(scenario: SpeedupScenario) -> Result<f64> {
    scenario.validate()?;
    let n = scenario.n_providers as f64;
    let b = scenario.batch_size as f64;
    Ok((n / b) / (1.0 - scenario.failure_prob.powi(scenario.batch_size as i32)))
}

/// Ratio of batched to concurrent expected acquisition time.
pub fn speedup(scenario: SpeedupScenario) -> Result<f64> {
    scenario.validate()?;
    let f = scenario.failure_prob;
    let n = scenario.n_providers as f64;
    let b = scenario.batch_size as f64;
    Ok((n / b) * (1.0 - f.powi(scenario.n_providers as i32)) / (1.0 - f.powi(scenario.batch_size as i32)))
}

/// `E[min(G, T)]` for `G ~ Geometric(p)` on `{1, 2, ...}`.
pub fn censored_depletion_mean(p_step: f64, horizon: u32) -> Result<f64> {
    if !(p_step > 0.0 && p_step <= 1.0) {
        return Err(domain(format!("censored_depletion_mean: p must lie in (0, 1]; got {p_step}")));
    }
    if horizon < 1 {
        return Err(domain("censored_depletion_mean: horizon must be >= 1"));
    }
    Ok((1.0 - (1.0 - p_step).powi(horizon as i32)) / p_step)
}

/// Upper bound on the expected number of switches over `horizon`.
pub fn no_thrash_bound(horizon: f64, c_switch: f64, mean_lambda: f64, q_max: f64) -> Result<f64> {
    if !(horizon >= 0.0) {
        return Err(domain(format!("no_thrash_bound: horizon must be >= 0; got {horizon}")));
    }
    if !(c_switch > 0.0 && mean_lambda > 0.0 && q_max > 0.0) {
        return Err(domain("no_thrash_bound: cost, rate and quality must be > 0"));
    }
    Ok(horizon / (2.0 * c_switch * mean_lambda * q_max))
}

/// Expected reservoir uptime `H_k / mean_lambda`, used as a monitoring estimate.
pub fn utility_estimate(k: u32, mean_lambda: f64) -> Result<f64> {
    if !(mean_lambda > 0.0) {
        return Err(domain(format!("utility_estimate: mean rate must be > 0; got {mean_lambda}")));
    }
    Ok(harmonic(k)? / mean_lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn sc(n: u32, b: u32, f: f64) -> SpeedupScenario {
        SpeedupScenario::new(n, b, f).unwrap()
    }

    #[test]
    fn availability() {
        let a = |mu, l| stationary_availability(MarkovRates { mu, lambda: l }).unwrap();
        assert_abs_diff_eq!(a(0.9, 0.1), 0.9, epsilon = 1e-12);
        assert_eq!(a(0.0, 1.0), 0.0);
        assert_abs_diff_eq!(a(0.12, 0.12), 0.5, epsilon = 1e-12);
        assert!(stationary_availability(MarkovRates { mu: 0.0, lambda: 0.0 }).is_err());
        assert!(MarkovRates::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn interruption() {
        assert_eq!(interruption_prob(&[0.1], 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            interruption_prob(&[0.1, 0.1, 0.1], 10.0).unwrap(),
            0.252_580_457_827_647,
            epsilon = 1e-12
        );
        assert_eq!(interruption_prob(&[0.3], f64::INFINITY).unwrap(), 1.0);
        assert_abs_diff_eq!(interruption_prob(&[0.3], 1e6).unwrap(), 1.0, epsilon = 1e-12);
        assert!(interruption_prob(&[], 1.0).is_err());
        assert!(interruption_prob(&[-0.1], 1.0).is_err());
    }

    #[test]
    fn harmonic_numbers() {
        assert_eq!(harmonic(1).unwrap(), 1.0);
        assert_abs_diff_eq!(harmonic(3).unwrap(), 1.8333, epsilon = 1e-4);
        assert_abs_diff_eq!(harmonic(8).unwrap(), 2.7179, epsilon = 1e-4);
        assert!(harmonic(0).is_err());
    }

    /// Trapezoid integration of P(max > t) = 1 - prod(1 - e^{-l t}).
    fn integrate_survival(lambdas: &[f64]) -> f64 {
        let lmin = lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
        let upper = 60.0 / lmin;
        let steps = 400_000;
        let h = upper / steps as f64;
        let surv = |t: f64| 1.0 - lambdas.iter().map(|l| 1.0 - (-l * t).exp()).product::<f64>();
        let mut acc = 0.5 * (surv(0.0) + surv(upper));
        for i in 1..steps {
            acc += surv(i as f64 * h);
        }
        acc * h
    }

    #[test]
    fn expected_max_matches_quadrature() {
        let l = [0.10, 0.12, 0.15];
        let closed = expected_max_exponential(&l).unwrap();
        assert_abs_diff_eq!(closed, integrate_survival(&l), epsilon = 1e-4);
        assert_abs_diff_eq!(closed, 15.456, epsilon = 1e-2);
        for rates in [vec![0.5, 2.0], vec![0.3, 0.7, 1.1, 0.2], vec![1.0, 1.0, 3.0, 0.05, 0.4]] {
            assert_relative_eq!(
                expected_max_exponential(&rates).unwrap(),
                integrate_survival(&rates),
                max_relative = 1e-5
            );
        }
    }

    #[test]
    fn expected_max_examples() {
        assert_abs_diff_eq!(expected_max_exponential(&[0.1, 0.1, 0.1]).unwrap(), 18.333, epsilon = 1e-3);
        assert_relative_eq!(expected_max_exponential(&[0.25]).unwrap(), 4.0, max_relative = 1e-15);
        for k in 1..=12u32 {
            let lam = 0.37;
            let rates = vec![lam; k as usize];
            assert_relative_eq!(
                expected_max_exponential(&rates).unwrap(),
                harmonic(k).unwrap() / lam,
                max_relative = 1e-9
            );
        }
        assert!(expected_max_exponential(&[]).is_err());
        assert!(expected_max_exponential(&[0.1, 0.0]).is_err());
        assert!(expected_max_exponential(&[0.1; 21]).is_err());
    }

    #[test]
    fn acquisition_times() {
        assert_abs_diff_eq!(expected_time_concurrent(sc(12, 3, 0.4)).unwrap(), 1.0, epsilon = 1e-3);
        assert_eq!(expected_time_concurrent(sc(1, 1, 0.0)).unwrap(), 1.0);
        assert_abs_diff_eq!(expected_time_concurrent(sc(2, 1, 0.5)).unwrap(), 4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(expected_time_batched(sc(12, 3, 0.4)).unwrap(), 4.27, epsilon = 0.01);
        assert_abs_diff_eq!(expected_time_batched(sc(20, 5, 0.3)).unwrap(), 4.01, epsilon = 0.01);
        assert_eq!(expected_time_batched(sc(8, 8, 0.0)).unwrap(), 1.0);
        assert!(SpeedupScenario::new(3, 4, 0.1).is_err());
        assert!(SpeedupScenario::new(3, 0, 0.1).is_err());
        assert!(SpeedupScenario::new(3, 1, 1.0).is_err());
    }

    #[test]
    fn speedup_table() {
        assert_abs_diff_eq!(speedup(sc(12, 3, 0.4)).unwrap(), 4.27, epsilon = 0.01);
        assert_abs_diff_eq!(speedup(sc(20, 5, 0.3)).unwrap(), 4.01, epsilon = 0.01);
        assert_abs_diff_eq!(speedup(sc(8, 2, 0.5)).unwrap(), 5.31, epsilon = 0.01);
        for f in [0.0, 0.3, 0.9] {
            assert_abs_diff_eq!(speedup(sc(7, 7, f)).unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn censored_mean() {
        // Oracle: direct summation of P(G > t) for t < T.
        let sum = |p: f64, t: u32| (0..t).map(|i| (1.0 - p).powi(i as i32)).sum::<f64>();
        assert_abs_diff_eq!(censored_depletion_mean(0.10, 100).unwrap(), 9.9997, epsilon = 1e-4);
        assert_abs_diff_eq!(censored_depletion_mean(0.10, 100).unwrap(), sum(0.10, 100), epsilon = 1e-10);
        let p = 0.10 * 0.12 * 0.15;
        assert_abs_diff_eq!(censored_depletion_mean(p, 100).unwrap(), 91.59, epsilon = 0.01);
        assert_abs_diff_eq!(censored_depletion_mean(p, 100).unwrap(), sum(p, 100), epsilon = 1e-9);
        assert_eq!(censored_depletion_mean(1.0, 37).unwrap(), 1.0);
        assert!(censored_depletion_mean(0.0, 10).is_err());
        assert!(censored_depletion_mean(0.5, 0).is_err());
    }

    #[test]
    fn thrash_bound() {
        assert_abs_diff_eq!(no_thrash_bound(100.0, 0.12, 0.12, 2160.0).unwrap(), 1.607, epsilon = 1e-3);
        assert_eq!(no_thrash_bound(0.0, 0.12, 0.12, 2160.0).unwrap(), 0.0);
        let one = no_thrash_bound(50.0, 0.12, 0.1, 1080.0).unwrap();
        let two = no_thrash_bound(100.0, 0.12, 0.1, 1080.0).unwrap();
        assert_relative_eq!(two, 2.0 * one, max_relative = 1e-15);
    }

    #[test]
    fn uptime() {
        assert_abs_diff_eq!(utility_estimate(3, 0.1).unwrap(), 18.33, epsilon = 0.01);
        assert_abs_diff_eq!(utility_estimate(1, 0.1).unwrap(), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(utility_estimate(3, 0.12).unwrap(), 15.28, epsilon = 0.01);
        assert!(utility_estimate(0, 0.1).is_err());
        assert!(utility_estimate(2, 0.0).is_err());
    }
}
