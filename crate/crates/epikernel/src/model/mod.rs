//! Observation model and linear predictors.
//!
//! The count likelihood is zero-inflated Poisson with a latent log-rate; the
//! rate-side and zero-side predictors share one structure (covariates with
//! selection indicators, yearly random effects, a previous-week count term,
//! and an aggregated transmission kernel term). Weeks are 1-based; week 1 has
//! no predecessor, so its predictor omits the previous-count and kernel terms
//! and its log-rate is pinned to the predictor exactly.

pub mod priors;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, DistanceBundle};
use crate::kernels::{aggregate_kernel, ChangePoint, KernelSpec};
use crate::latent::{ou_logpdf, OUParams};
use crate::num::{ln_factorial, ln_factorial_table, logistic as logistic_impl};

pub use priors::{
    build_coefficient_prior, eiu_prior, fixed_g, gprior_logdensity, model_space_logprior,
    shrinkage_logprior, BlockKind, CoefficientPrior, EiuPrior, ExpSign, FixedGVariant,
    ModelSpacePrior, PriorConfig, PriorFamilyId, ShrinkageVariant,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("design matrix is singular or near-singular; collinear columns: {columns:?}")]
    CollinearDesign { columns: Vec<String> },
    #[error("hyper prior alpha must lie in (2, 4], got {0}")]
    AlphaOutOfRange(f64),
    #[error("degenerate prior: {0}")]
    DegeneratePrior(String),
    #[error("EIU prior requires posterior sds from a completed flat-prior full-model fit")]
    MissingFullModelFit,
    #[error("unknown prior family {0:?}")]
    UnknownPrior(String),
    #[error("unknown model-space prior {0:?}")]
    UnknownModelSpace(String),
}

/// Numerically stable logistic function; the zero-side predictor maps to a
/// probability through this.
pub fn logistic(x: f64) -> f64 {
    logistic_impl(x)
}

/// Centered design built once from a dataset: covariates are centered (the
/// intercept column is left alone), with the cross-product matrix of the
/// non-intercept columns cached for the coefficient prior.
#[derive(Debug, Clone)]
pub struct Design {
    pub n: usize,
    pub n_years: usize,
    pub counts: Vec<u32>,
    pub years: Vec<usize>,
    /// n x (1 + p); non-intercept columns centered.
    pub x: DMatrix<f64>,
    /// Means subtracted from each non-intercept column.
    pub col_means: Vec<f64>,
    pub covariate_names: Vec<String>,
    pub bundle: DistanceBundle,
    /// p x p cross-product of the centered non-intercept columns.
    pub xtx: DMatrix<f64>,
    pub(crate) xtx_logdet: f64,
    pub(crate) ln_fact: Vec<f64>,
}

const MAX_CONDITION: f64 = 1e12;

/// Columns loading heavily on the smallest singular direction.
fn collinear_columns(xtx: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let svd = xtx.clone().svd(true, true);
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| {
            if s < acc.1 {
                (i, s)
            } else {
                acc
            }
        });
    let v_t = svd.v_t.expect("svd with v_t requested");
    let mut cols: Vec<String> = (0..xtx.ncols())
        .filter(|&j| v_t[(idx, j)].abs() > 0.3)
        .map(|j| {
            names
                .get(j)
                .cloned()
                .unwrap_or_else(|| format!("column {}", j + 1))
        })
        .collect();
    if cols.is_empty() {
        cols = names.to_vec();
    }
    cols
}

pub(crate) fn check_condition(
    xtx: &DMatrix<f64>,
    names: &[String],
) -> Result<f64, ModelError> {
    let svd = xtx.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0) || smax / smin > MAX_CONDITION {
        return Err(ModelError::CollinearDesign {
            columns: collinear_columns(xtx, names),
        });
    }
    // log-determinant via Cholesky of the (now known PD) matrix
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| ModelError::CollinearDesign {
            columns: collinear_columns(xtx, names),
        })?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

impl Design {
    pub fn from_dataset(dataset: &Dataset) -> Result<Self, ModelError> {
        let n = dataset.n();
        let p = dataset.n_covariates();
        if n == 0 || p == 0 {
            return Err(ModelError::InvalidArgument(
                "dataset must have at least one week and one covariate".into(),
            ));
        }
        let mut x = dataset.covariates.clone();
        let mut col_means = Vec::with_capacity(p);
        for j in 1..=p {
            let mean = x.column(j).sum() / n as f64;
            for i in 0..n {
                x[(i, j)] -= mean;
            }
            col_means.push(mean);
        }
        let xc = x.columns(1, p).into_owned();
        let xtx = xc.transpose() * &xc;
        let xtx_logdet = check_condition(&xtx, &dataset.covariate_names)?;
        let max_count = dataset.counts.iter().copied().max().unwrap_or(0);
        Ok(Self {
            n,
            n_years: dataset.n_years(),
            counts: dataset.counts.clone(),
            years: dataset.years.clone(),
            x,
            col_means,
            covariate_names: dataset.covariate_names.clone(),
            bundle: dataset.distances.clone(),
            xtx,
            xtx_logdet,
            ln_fact: ln_factorial_table(u64::from(max_count)),
        })
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }
}

/// Coefficients and structure of one predictor block (rate or zero side).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionBlock {
    /// Length 1 + p; index 0 is the intercept.
    pub beta: Vec<f64>,
    /// Selection indicators for the p non-intercept coefficients.
    pub gamma: Vec<bool>,
    /// Coefficient on the aggregated kernel term.
    pub kernel_coef: f64,
    /// Coefficient on the previous week's count.
    pub ar_coef: f64,
    /// Yearly random effects.
    pub random_effects: Vec<f64>,
    pub sigma_b: f64,
}

/// The zero-inflation block mirrors the rate block exactly.
pub type ZeroBlock = RegressionBlock;

impl RegressionBlock {
    pub fn zeros(p: usize, n_years: usize) -> Self {
        Self {
            beta: vec![0.0; p + 1],
            gamma: vec![false; p],
            kernel_coef: 0.0,
            ar_coef: 0.0,
            random_effects: vec![0.0; n_years],
            sigma_b: 1.0,
        }
    }
}

/// Kernel configuration of one block: family plus two-regime parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockKernel {
    pub spec: KernelSpec,
    pub change: ChangePoint,
}

/// One full parameter configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub rate: RegressionBlock,
    pub zero: ZeroBlock,
    pub ou: OUParams,
    pub rate_kernel: Option<BlockKernel>,
    pub zero_kernel: Option<BlockKernel>,
    /// Shared shrinkage scale of the coefficient prior.
    pub g: f64,
    /// Latent log-rate path, one value per week.
    pub latent_lograte: Vec<f64>,
    /// Zero-inflation latents; may be 1 only where the observed count is 0.
    pub zero_latents: Vec<bool>,
}

impl ModelState {
    pub fn validate(&self, design: &Design) -> Result<(), ModelError> {
        let p = design.p();
        if self.rate.beta.len() != p + 1 || self.zero.beta.len() != p + 1 {
            return Err(ModelError::InvalidArgument(format!(
                "beta vectors must have length {}",
                p + 1
            )));
        }
        if self.rate.gamma.len() != p || self.zero.gamma.len() != p {
            return Err(ModelError::InvalidArgument(format!(
                "gamma vectors must have length {p}"
            )));
        }
        if self.latent_lograte.len() != design.n || self.zero_latents.len() != design.n {
            return Err(ModelError::InvalidArgument(format!(
                "latent vectors must have length {}",
                design.n
            )));
        }
        for (i, &u) in self.zero_latents.iter().enumerate() {
            if u && design.counts[i] > 0 {
                return Err(ModelError::InvalidArgument(format!(
                    "zero latent set at week {} with positive count {}",
                    i + 1,
                    design.counts[i]
                )));
            }
        }
        if !(self.g.is_finite() && self.g > 0.0) {
            return Err(ModelError::InvalidArgument(format!(
                "g must be finite and > 0, got {}",
                self.g
            )));
        }
        self.ou
            .validate()
            .map_err(|e| ModelError::InvalidArgument(e.to_string()))?;
        Ok(())
    }
}

fn block_predictor(
    block: &RegressionBlock,
    kernel: Option<&BlockKernel>,
    design: &Design,
    week: usize,
) -> f64 {
    let i = week - 1;
    let mut v = block.beta[0];
    for (j, &active) in block.gamma.iter().enumerate() {
        if active {
            v += block.beta[j + 1] * design.x[(i, j + 1)];
        }
    }
    v += block.random_effects[design.years[i] - 1];
    if week >= 2 {
        v += block.ar_coef * f64::from(design.counts[i - 1]);
        if let Some(bk) = kernel {
            let k = aggregate_kernel(
                &design.bundle,
                week,
                bk.spec,
                &bk.change,
                design.counts[i],
                design.counts[i - 1],
            )
            .expect("validated bundle covers weeks 2..=n");
            v += block.kernel_coef * k;
        }
    }
    v
}

/// Rate-side predictor for one week (the OU mean for that week).
pub fn rate_predictor(state: &ModelState, design: &Design, week: usize) -> f64 {
    block_predictor(&state.rate, state.rate_kernel.as_ref(), design, week)
}

/// Zero-side predictor (logit of the zero-inflation probability).
pub fn zero_predictor(state: &ModelState, design: &Design, week: usize) -> f64 {
    block_predictor(&state.zero, state.zero_kernel.as_ref(), design, week)
}

/// Zero-inflated Poisson log-likelihood of one count.
pub fn zip_loglik_point(y: u32, theta: f64, p: f64) -> Result<f64, ModelError> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(ModelError::InvalidArgument(format!(
            "rate theta must be finite and > 0, got {theta}"
        )));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(ModelError::InvalidArgument(format!(
            "zero-inflation probability must lie in [0, 1), got {p}"
        )));
    }
    Ok(zip_loglik_raw(y, theta, p, ln_factorial(u64::from(y))))
}

pub(crate) fn zip_loglik_raw(y: u32, theta: f64, p: f64, ln_fact_y: f64) -> f64 {
    if y == 0 {
        if p == 0.0 {
            -theta
        } else {
            (p + (1.0 - p) * (-theta).exp()).ln()
        }
    } else {
        (1.0 - p).ln() + f64::from(y) * theta.ln() - theta - ln_fact_y
    }
}

/// Observation log-likelihood (zero-inflation marginalized), summed over
/// weeks. The latent path is taken as stored in the state.
pub fn observation_loglik(state: &ModelState, design: &Design) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for week in 1..=design.n {
        let i = week - 1;
        let theta = state.latent_lograte[i].exp().max(f64::MIN_POSITIVE);
        let p = logistic(zero_predictor(state, design, week));
        total += zip_loglik_raw(
            design.counts[i],
            theta,
            p,
            design.ln_fact[design.counts[i] as usize],
        );
    }
    Ok(total)
}

/// Observation log-likelihood plus the latent path's OU transition terms.
/// Week 1 carries no transition (its log-rate is pinned to the predictor).
pub fn total_loglik(state: &ModelState, design: &Design) -> Result<f64, ModelError> {
    let mut total = observation_loglik(state, design)?;
    for week in 2..=design.n {
        let mu = rate_predictor(state, design, week);
        total += ou_logpdf(
            state.latent_lograte[week - 1],
            mu,
            state.latent_lograte[week - 2],
            state.ou.phi,
            1.0,
        )
        .map_err(|e| ModelError::InvalidArgument(e.to_string()))?;
    }
    Ok(total)
}

/// Model deviance: -2 times the observation log-likelihood.
pub fn deviance(state: &ModelState, design: &Design) -> Result<f64, ModelError> {
    Ok(-2.0 * observation_loglik(state, design)?)
}
