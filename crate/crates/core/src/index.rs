//! Closed-form Whittle index and the per-slot rewards derived from it.
//!
//! For a request with serve probability `r = q_λ v(i)`, cardinality `λ` and
//! age `s`, the index is `s (r s - r + 2) / (2 λ)`. The knapsack reward
//! multiplies it by `λ`, so it depends on the cardinality only through `r`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ServiceProfile;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("age must be at least 1")]
    ZeroAge,
    #[error("serve probability {0} is outside (0, 1]")]
    ServeProbability(f64),
    #[error("cardinality must be at least 2, got {0}")]
    Cardinality(usize),
    #[error("gamma must be finite and nonnegative, got {0}")]
    Gamma(f64),
    #[error("beta must be finite and strictly positive, got {0}")]
    Beta(f64),
}

/// Parameters of the two modified indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexParams {
    /// Subtractive cardinality penalty used by SWIS.
    pub gamma: f64,
    /// Denominator offset used by SWID.
    pub beta: f64,
}

impl IndexParams {
    pub fn new(gamma: f64, beta: f64) -> Result<Self, IndexError> {
        check_gamma(gamma)?;
        check_beta(beta)?;
        Ok(IndexParams { gamma, beta })
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<(), IndexError> {
    if gamma.is_finite() && gamma >= 0.0 {
        Ok(())
    } else {
        Err(IndexError::Gamma(gamma))
    }
}

pub(crate) fn check_beta(beta: f64) -> Result<(), IndexError> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(IndexError::Beta(beta))
    }
}

fn check_domain(serve_success: f64, cardinality: usize, age: u64) -> Result<(), IndexError> {
    if age == 0 {
        return Err(IndexError::ZeroAge);
    }
    if !(serve_success > 0.0 && serve_success <= 1.0) {
        return Err(IndexError::ServeProbability(serve_success));
    }
    if cardinality < 2 {
        return Err(IndexError::Cardinality(cardinality));
    }
    Ok(())
}

#[inline]
pub(crate) fn reward_unchecked(serve_success: f64, age: u64) -> f64 {
    let s = age as f64;
    s * (serve_success * s - serve_success + 2.0) / 2.0
}

/// Whittle index of a request in state `age`.
pub fn whittle(serve_success: f64, cardinality: usize, age: u64) -> Result<f64, IndexError> {
    check_domain(serve_success, cardinality, age)?;
    let s = age as f64;
    Ok(s * (serve_success * s - serve_success + 2.0) / (2.0 * cardinality as f64))
}

/// `λ · whittle`, the value of scheduling the request in the knapsack.
pub fn knapsack_reward(profile: &ServiceProfile, age: u64) -> Result<f64, IndexError> {
    check_domain(profile.serve_success, profile.cardinality, age)?;
    Ok(reward_unchecked(profile.serve_success, age))
}

/// Knapsack reward minus `γ λ`; negative values are allowed.
pub fn swis_index(profile: &ServiceProfile, age: u64, gamma: f64) -> Result<f64, IndexError> {
    check_gamma(gamma)?;
    Ok(knapsack_reward(profile, age)? - gamma * profile.cardinality as f64)
}

/// Knapsack reward divided by `β + λ`.
pub fn swid_index(profile: &ServiceProfile, age: u64, beta: f64) -> Result<f64, IndexError> {
    check_beta(beta)?;
    Ok(knapsack_reward(profile, age)? / (beta + profile.cardinality as f64))
}
