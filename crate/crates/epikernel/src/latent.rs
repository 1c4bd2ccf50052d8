//! Exact-transition Ornstein-Uhlenbeck machinery for the latent log-rate.
//!
//! The latent process reverts toward a piecewise-constant mean at rate `phi`
//! with unit diffusion. Over a step of length `delta` the transition is
//! Gaussian in closed form:
//!
//! ```text
//! mean = mu + (prev - mu) exp(-phi delta)
//! var  = (1 - exp(-2 phi delta)) / (2 phi)
//! ```

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::normal_logpdf;

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("{name} must be finite and > 0, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

/// Mean-reversion rate of the latent process; sampled on the log scale
/// (`phi = exp(theta)`) so the unconstrained parameter is `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OUParams {
    pub phi: f64,
}

impl OUParams {
    pub fn from_log(theta: f64) -> Self {
        Self { phi: theta.exp() }
    }

    pub fn log(self) -> f64 {
        self.phi.ln()
    }

    pub fn validate(self) -> Result<(), LatentError> {
        check_positive("phi", self.phi)
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<(), LatentError> {
    if !(value.is_finite() && value > 0.0) {
        return Err(LatentError::NonPositive { name, value });
    }
    Ok(())
}

/// Exact transition moments over a step of length `delta`.
pub fn ou_mean_var(
    mu: f64,
    lambda_prev: f64,
    phi: f64,
    delta: f64,
) -> Result<(f64, f64), LatentError> {
    check_positive("phi", phi)?;
    check_positive("delta", delta)?;
    let mean = mu + (lambda_prev - mu) * (-phi * delta).exp();
    // exp_m1 keeps the Brownian limit (phi -> 0, var -> delta) accurate.
    let var = -(-2.0 * phi * delta).exp_m1() / (2.0 * phi);
    Ok((mean, var))
}

/// Log transition density of the next latent value.
pub fn ou_logpdf(
    lambda_next: f64,
    mu: f64,
    lambda_prev: f64,
    phi: f64,
    delta: f64,
) -> Result<f64, LatentError> {
    let (mean, var) = ou_mean_var(mu, lambda_prev, phi, delta)?;
    Ok(normal_logpdf(lambda_next, mean, var))
}

/// Simulate a path by exact transitions on the unit weekly grid.
///
/// `out[0] = lambda_0`; each later value is drawn from the transition toward
/// that step's mean. Reproducible under a fixed-seed RNG.
pub fn simulate_path<R: Rng>(
    mu_sequence: &[f64],
    phi: f64,
    lambda_0: f64,
    rng: &mut R,
) -> Result<Vec<f64>, LatentError> {
    check_positive("phi", phi)?;
    let mut out = Vec::with_capacity(mu_sequence.len());
    if mu_sequence.is_empty() {
        return Ok(out);
    }
    out.push(lambda_0);
    let decay = (-phi).exp();
    let sd = (-(-2.0 * phi).exp_m1() / (2.0 * phi)).sqrt();
    for &mu in &mu_sequence[1..] {
        let prev = *out.last().unwrap();
        let mean = mu + (prev - mu) * decay;
        let z: f64 = StandardNormal.sample(rng);
        out.push(mean + sd * z);
    }
    Ok(out)
}
