//! Synthetic dataset generation from known ground-truth parameters, used by
//! recovery tests and the `simulate` command.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use nalgebra::DMatrix;

use crate::data::{build_distance_bundle, DataError, Dataset, FarmLocation};
use crate::num::logistic;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid ground truth: {0}")]
    InvalidTruth(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Ground-truth parameters of a synthetic fit-recovery dataset. Covariates
/// are independent normals; the latent path follows the exact OU transition;
/// counts are zero-inflated Poisson around the latent rate. No spatial
/// kernel enters the truth (distances are built from the realized case
/// locations so the dataset still carries a valid bundle).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub n: usize,
    pub p: usize,
    pub years: usize,
    /// Rate-block coefficients, intercept first (length p + 1).
    pub beta: Vec<f64>,
    /// Zero-block coefficients, intercept first (length p + 1).
    pub zero_beta: Vec<f64>,
    pub ar_coef: f64,
    pub zero_ar_coef: f64,
    pub phi: f64,
    pub sigma_b: f64,
    pub zero_sigma_b: f64,
    pub d_min: f64,
    pub covariate_sd: f64,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n < 2 || self.p == 0 || self.years == 0 {
            return Err(SimError::InvalidTruth(
                "need n >= 2, p >= 1, years >= 1".into(),
            ));
        }
        if self.beta.len() != self.p + 1 || self.zero_beta.len() != self.p + 1 {
            return Err(SimError::InvalidTruth(format!(
                "coefficient vectors must have length {}",
                self.p + 1
            )));
        }
        if !(self.phi.is_finite() && self.phi > 0.0) {
            return Err(SimError::InvalidTruth(format!(
                "phi must be > 0, got {}",
                self.phi
            )));
        }
        if !(self.sigma_b >= 0.0 && self.zero_sigma_b >= 0.0) {
            return Err(SimError::InvalidTruth("negative random-effect sd".into()));
        }
        if !(self.d_min > 0.0 && self.covariate_sd > 0.0) {
            return Err(SimError::InvalidTruth(
                "d_min and covariate_sd must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Realized latent quantities of one simulated dataset, kept alongside the
/// truth so recovery checks can look at them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealizedEffects {
    pub random_effects: Vec<f64>,
    pub zero_random_effects: Vec<f64>,
    pub latent_lograte: Vec<f64>,
    pub zero_latents: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub dataset: Dataset,
    pub realized: RealizedEffects,
}

const MAX_RATE: f64 = 1e6;

/// Simulate a dataset; deterministic under a fixed seed.
pub fn simulate_dataset(truth: &GroundTruth, seed: u64) -> Result<SimOutput, SimError> {
    truth.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = truth.n;
    let p = truth.p;

    let mut covariates = DMatrix::zeros(n, p + 1);
    for i in 0..n {
        covariates[(i, 0)] = 1.0;
        for j in 1..=p {
            let z: f64 = StandardNormal.sample(&mut rng);
            covariates[(i, j)] = truth.covariate_sd * z;
        }
    }
    let years: Vec<usize> = (0..n)
        .map(|i| (i * truth.years / n + 1).min(truth.years))
        .collect();
    let draw_effects = |rng: &mut ChaCha20Rng, sd: f64| -> Vec<f64> {
        (0..truth.years)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            })
            .collect()
    };
    let b = draw_effects(&mut rng, truth.sigma_b);
    let zb = draw_effects(&mut rng, truth.zero_sigma_b);

    let decay = (-truth.phi).exp();
    let trans_sd = (-(-2.0 * truth.phi).exp_m1() / (2.0 * truth.phi)).sqrt();

    let mut counts: Vec<u32> = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    let mut zero_latents = Vec::with_capacity(n);
    let mut locations: Vec<Vec<FarmLocation>> = Vec::with_capacity(n);
    for i in 0..n {
        let predictor = |coeff: &[f64], ar: f64, effects: &[f64]| -> f64 {
            let mut v = coeff[0];
            for j in 1..=p {
                v += coeff[j] * covariates[(i, j)];
            }
            v += effects[years[i] - 1];
            if i >= 1 {
                v += ar * f64::from(counts[i - 1]);
            }
            v
        };
        let mu = predictor(&truth.beta, truth.ar_coef, &b);
        let eta = predictor(&truth.zero_beta, truth.zero_ar_coef, &zb);
        let lam = if i == 0 {
            mu
        } else {
            let prev: f64 = latent[i - 1];
            let z: f64 = StandardNormal.sample(&mut rng);
            mu + (prev - mu) * decay + trans_sd * z
        };
        latent.push(lam);
        let rate = lam.exp();
        if !(rate.is_finite() && rate <= MAX_RATE) {
            return Err(SimError::InvalidTruth(format!(
                "latent rate {rate} at week {} outside (0, {MAX_RATE}]; truth parameters too extreme",
                i + 1
            )));
        }
        let p_zero = logistic(eta);
        let u = rng.random::<f64>() < p_zero;
        zero_latents.push(u);
        let y = if u {
            0
        } else if rate == 0.0 {
            0
        } else {
            Poisson::new(rate)
                .map_err(|e| SimError::InvalidTruth(format!("poisson rate {rate}: {e}")))?
                .sample(&mut rng) as u32
        };
        counts.push(y);
        let farms = (0..y)
            .map(|_| {
                FarmLocation::new(50.0 * rng.random::<f64>(), 50.0 * rng.random::<f64>())
            })
            .collect();
        locations.push(farms);
    }

    let distances = build_distance_bundle(&locations, &counts, truth.d_min)?;
    let covariate_names = (1..=p).map(|j| format!("x{j}")).collect();
    let dataset = Dataset {
        counts,
        years,
        covariates,
        covariate_names,
        distances,
    };
    Ok(SimOutput {
        dataset,
        realized: RealizedEffects {
            random_effects: b,
            zero_random_effects: zb,
            latent_lograte: latent,
            zero_latents,
        },
    })
}
