//! Prospect-weighted switching calculus.
//!
//! Quality deltas are normalized by [`ProspectParams::q_max`] before the value
//! function is applied, and the switch cost is folded into the score so that a
//! switch is recommended iff the score is strictly positive.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Parameters of the switching calculus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProspectParams {
    /// Curvature of the gains branch.
    pub alpha: f64,
    /// Curvature of the losses branch.
    pub beta: f64,
    /// Loss-aversion coefficient.
    pub lambda_la: f64,
    /// Probability weighting exponent.
    pub gamma: f64,
    /// Switch cost, in score units.
    pub c_switch: f64,
    /// Quality used to normalize deltas, in pixels.
    pub q_max: f64,
    /// Per-verification residual doubt: confidence is `1 - base^n`.
    pub confidence_base: f64,
}

impl Default for ProspectParams {
    fn default() -> Self {
        Self {
            alpha: 0.88,
            beta: 0.88,
            lambda_la: 2.25,
            gamma: 0.61,
            c_switch: 0.12,
            q_max: 2160.0,
            confidence_base: 0.3,
        }
    }
}

impl ProspectParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.alpha) || !unit(self.beta) || !unit(self.gamma) {
            return Err(domain(format!(
                "alpha, beta, gamma must lie in (0, 1]; got {}, {}, {}",
                self.alpha, self.beta, self.gamma
            )));
        }
        if !(self.lambda_la >= 1.0) {
            return Err(domain(format!("lambda_la must be >= 1; got {}", self.lambda_la)));
        }
        if !(self.c_switch >= 0.0) || !self.c_switch.is_finite() {
            return Err(domain(format!("c_switch must be >= 0; got {}", self.c_switch)));
        }
        if !(self.q_max > 0.0) || !self.q_max.is_finite() {
            return Err(domain(format!("q_max must be > 0; got {}", self.q_max)));
        }
        if !(0.0..1.0).contains(&self.confidence_base) {
            return Err(domain(format!(
                "confidence_base must lie in [0, 1); got {}",
                self.confidence_base
            )));
        }
        Ok(())
    }
}

/// Loss-averse value of a (normalized) quality delta.
pub fn value(x: f64, params: &ProspectParams) -> Result<f64> {
    if !x.is_finite() {
        return Err(domain(format!("value: non-finite delta {x}")));
    }
    Ok(value_unchecked(x, params))
}

#[inline]
fn value_unchecked(x: f64, params: &ProspectParams) -> f64 {
    if x >= 0.0 {
        x.powf(params.alpha)
    } else {
        -params.lambda_la * (-x).powf(params.beta)
    }
}

/// Inverse-S probability weighting.
pub fn weight(p: f64, params: &ProspectParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(domain(format!("weight: probability {p} outside [0, 1]")));
    }
    Ok(weight_unchecked(p, params.gamma))
}

#[inline]
fn weight_unchecked(p: f64, gamma: f64) -> f64 {
    // Endpoints are exact; powf(0, gamma) already gives 0 but keep 1 exact too.
    if p == 0.0 || p == 1.0 {
        return p;
    }
    let num = p.powf(gamma);
    let den = (num + (1.0 - p).powf(gamma)).powf(1.0 / gamma);
    num / den
}

/// Confidence that a stream verified `n` times is viable, with the default base of 0.3.
pub fn confidence(n_verifications: u32) -> f64 {
    confidence_with_base(n_verifications, ProspectParams::default().confidence_base)
}

pub fn confidence_with_base(n_verifications: u32, base: f64) -> f64 {
    1.0 - base.powi(n_verifications.min(i32::MAX as u32) as i32)
}

/// Score of switching from the active quality to a candidate quality.
///
/// A switch is recommended iff the returned score is strictly positive.
pub fn switch_score(
    q_active: f64,
    q_candidate: f64,
    n_verifications: u32,
    params: &ProspectParams,
) -> f64 {
    let delta = (q_candidate - q_active) / params.q_max;
    let p = confidence_with_base(n_verifications, params.confidence_base);
    value_unchecked(delta, params) * weight_unchecked(p, params.gamma) - params.c_switch
}

/// Convenience wrapper for the decision itself.
pub fn should_switch(q_active: f64, q_candidate: f64, n: u32, params: &ProspectParams) -> bool {
    switch_score(q_active, q_candidate, n, params) > 0.0
}
