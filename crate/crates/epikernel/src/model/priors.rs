//! Coefficient priors for variable selection: the modified g-prior family,
//! shrinkage hyper-priors, fixed-g defaults, the empirical unit-information
//! prior, and model-space priors.
//!
//! Each selectable prior family implements [`CoefficientPrior`] and is
//! registered by the name used in configs and on the command line. The
//! g-prior covers the non-intercept coefficients of a block with covariance
//! `g * exp(beta0) * (X'X)^{-1}` (the published convention; `exp(-beta0)` is
//! available as a compatibility switch).

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_condition, Design, ModelError};
use crate::num::{ln_factorial, normal_logpdf};

/// Sign convention of the `exp(beta0)` factor in the g-prior covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExpSign {
    /// Covariance `g * exp(+beta0) * (X'X)^{-1}` (published definition).
    #[default]
    Text,
    /// Covariance `g * exp(-beta0) * (X'X)^{-1}` (reference-code convention).
    Code,
}

impl ExpSign {
    fn signed(self, beta0: f64) -> f64 {
        match self {
            ExpSign::Text => beta0,
            ExpSign::Code => -beta0,
        }
    }
}

/// Multivariate normal g-prior log-density on a coefficient subvector.
///
/// `xtx` must be the cross-product matrix of exactly the columns whose
/// coefficients appear in `beta_rest`; it is validated for conditioning.
pub fn gprior_logdensity(
    beta_rest: &[f64],
    beta0: f64,
    g: f64,
    xtx: &DMatrix<f64>,
    sign: ExpSign,
) -> Result<f64, ModelError> {
    let k = beta_rest.len();
    if xtx.nrows() != k || xtx.ncols() != k {
        return Err(ModelError::InvalidArgument(format!(
            "X'X must be {k}x{k} to match the coefficient subvector"
        )));
    }
    if k == 0 {
        return Ok(0.0);
    }
    if !(g.is_finite() && g > 0.0) {
        return Err(ModelError::InvalidArgument(format!(
            "g must be finite and > 0, got {g}"
        )));
    }
    let names: Vec<String> = (1..=k).map(|j| format!("column {j}")).collect();
    let logdet = check_condition(xtx, &names)?;
    Ok(gprior_logpdf_unchecked(
        beta_rest, beta0, g, xtx, logdet, sign,
    ))
}

fn gprior_logpdf_unchecked(
    beta_rest: &[f64],
    beta0: f64,
    g: f64,
    xtx: &DMatrix<f64>,
    logdet: f64,
    sign: ExpSign,
) -> f64 {
    let k = beta_rest.len() as f64;
    let log_scale = g.ln() + sign.signed(beta0);
    let mut quad = 0.0;
    for (i, &bi) in beta_rest.iter().enumerate() {
        for (j, &bj) in beta_rest.iter().enumerate() {
            quad += bi * xtx[(i, j)] * bj;
        }
    }
    -0.5 * k * (2.0 * std::f64::consts::PI).ln() - 0.5 * (k * log_scale - logdet)
        - 0.5 * quad / log_scale.exp()
}

/// Select the principal submatrix of `xtx` for the active columns.
pub fn selected_submatrix(xtx: &DMatrix<f64>, gamma: &[bool]) -> DMatrix<f64> {
    let idx: Vec<usize> = gamma
        .iter()
        .enumerate()
        .filter_map(|(j, &on)| on.then_some(j))
        .collect();
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| xtx[(idx[r], idx[c])])
}

/// g-prior log-density restricted to the selected coefficients; collinear
/// selections are rejected naming the offending columns.
pub fn gprior_logdensity_selected(
    beta_rest: &[f64],
    gamma: &[bool],
    beta0: f64,
    g: f64,
    xtx: &DMatrix<f64>,
    names: &[String],
    sign: ExpSign,
) -> Result<f64, ModelError> {
    if beta_rest.len() != gamma.len() || xtx.nrows() != gamma.len() {
        return Err(ModelError::InvalidArgument(
            "beta, gamma, and X'X dimensions must agree".into(),
        ));
    }
    let sub = selected_submatrix(xtx, gamma);
    if sub.nrows() == 0 {
        return Ok(0.0);
    }
    let sel_names: Vec<String> = gamma
        .iter()
        .enumerate()
        .filter_map(|(j, &on)| on.then(|| names[j].clone()))
        .collect();
    let logdet = check_condition(&sub, &sel_names)?;
    let beta_sel: Vec<f64> = gamma
        .iter()
        .zip(beta_rest)
        .filter_map(|(&on, &b)| on.then_some(b))
        .collect();
    if !(g.is_finite() && g > 0.0) {
        return Err(ModelError::InvalidArgument(format!(
            "g must be finite and > 0, got {g}"
        )));
    }
    Ok(gprior_logpdf_unchecked(
        &beta_sel, beta0, g, &sub, logdet, sign,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShrinkageVariant {
    HyperG,
    HyperGOverN,
}

/// Log prior density of `g` induced by a Beta(1, alpha/2 - 1) law on the
/// shrinkage factor `g/(1+g)` (or on `(g/n)/(1+g/n)` for the `/n` variant),
/// Jacobian included.
pub fn shrinkage_logprior(
    g: f64,
    alpha: f64,
    variant: ShrinkageVariant,
    n: usize,
) -> Result<f64, ModelError> {
    if !(alpha > 2.0 && alpha <= 4.0) {
        return Err(ModelError::AlphaOutOfRange(alpha));
    }
    if !(g.is_finite() && g > 0.0) {
        return Err(ModelError::InvalidArgument(format!(
            "g must be finite and > 0, got {g}"
        )));
    }
    let half = alpha / 2.0;
    match variant {
        ShrinkageVariant::HyperG => Ok((half - 1.0).ln() - half * g.ln_1p()),
        ShrinkageVariant::HyperGOverN => {
            let nf = n as f64;
            Ok((half - 1.0).ln() - nf.ln() - half * (g / nf).ln_1p())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedGVariant {
    /// Unit-information choice g = n.
    ZgN,
    /// Risk-inflation choice g = p^2.
    ZgP2,
}

pub fn fixed_g(variant: FixedGVariant, n: usize, p: usize) -> f64 {
    match variant {
        FixedGVariant::ZgN => n as f64,
        FixedGVariant::ZgP2 => (p * p) as f64,
    }
}

/// Independent-normal prior with per-coefficient variance `n * sd_j^2`,
/// the sds taken from a flat-prior full-model fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EiuPrior {
    pub variances: Vec<f64>,
}

pub fn eiu_prior(sd_full_model: &[f64], n: usize) -> Result<EiuPrior, ModelError> {
    if sd_full_model.is_empty() {
        return Err(ModelError::MissingFullModelFit);
    }
    let mut variances = Vec::with_capacity(sd_full_model.len());
    for (j, &sd) in sd_full_model.iter().enumerate() {
        if !(sd.is_finite() && sd > 0.0) {
            return Err(ModelError::DegeneratePrior(format!(
                "full-model posterior sd of coefficient {} is {} (must be > 0)",
                j + 1,
                sd
            )));
        }
        variances.push(n as f64 * sd * sd);
    }
    Ok(EiuPrior { variances })
}

impl EiuPrior {
    pub fn logpdf(&self, beta_rest: &[f64]) -> f64 {
        beta_rest
            .iter()
            .zip(&self.variances)
            .map(|(&b, &v)| normal_logpdf(b, 0.0, v))
            .sum()
    }
}

/// Prior over the selection indicators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSpacePrior {
    /// Independent Bernoulli(0.5) indicators.
    #[default]
    Uniform,
    /// Indicators Bernoulli(p) with p ~ Beta(1,1), p marginalized.
    BetaBinomial,
}

impl ModelSpacePrior {
    pub fn parse(name: &str) -> Result<Self, ModelError> {
        match name {
            "uniform" => Ok(ModelSpacePrior::Uniform),
            "beta-binomial" => Ok(ModelSpacePrior::BetaBinomial),
            other => Err(ModelError::UnknownModelSpace(other.to_string())),
        }
    }
}

/// Log prior of one block's selection vector.
pub fn model_space_logprior(gamma: &[bool], prior: ModelSpacePrior) -> f64 {
    let m = gamma.len() as u64;
    match prior {
        ModelSpacePrior::Uniform => -(m as f64) * std::f64::consts::LN_2,
        ModelSpacePrior::BetaBinomial => {
            let k = gamma.iter().filter(|&&on| on).count() as u64;
            // ln B(1 + k, 1 + m - k) with integer arguments
            ln_factorial(k) + ln_factorial(m - k) - ln_factorial(m + 1)
        }
    }
}

/// Selectable prior family identifiers, as used in configs and on the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorFamilyId {
    HyperG,
    HyperGN,
    ZgN,
    ZgP2,
    Eiu,
}

pub const PRIOR_FAMILY_NAMES: [&str; 5] = ["hyper-g", "hyper-g-n", "zg-n", "zg-p2", "eiu"];

impl PriorFamilyId {
    pub fn parse(name: &str) -> Result<Self, ModelError> {
        match name {
            "hyper-g" => Ok(PriorFamilyId::HyperG),
            "hyper-g-n" => Ok(PriorFamilyId::HyperGN),
            "zg-n" => Ok(PriorFamilyId::ZgN),
            "zg-p2" => Ok(PriorFamilyId::ZgP2),
            "eiu" => Ok(PriorFamilyId::Eiu),
            other => Err(ModelError::UnknownPrior(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PriorFamilyId::HyperG => "hyper-g",
            PriorFamilyId::HyperGN => "hyper-g-n",
            PriorFamilyId::ZgN => "zg-n",
            PriorFamilyId::ZgP2 => "zg-p2",
            PriorFamilyId::Eiu => "eiu",
        }
    }
}

/// Full prior configuration for one fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub family: PriorFamilyId,
    pub alpha: f64,
    pub model_space: ModelSpacePrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            family: PriorFamilyId::HyperG,
            alpha: 4.0,
            model_space: ModelSpacePrior::Uniform,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self.family {
            PriorFamilyId::HyperG | PriorFamilyId::HyperGN => {
                if !(self.alpha > 2.0 && self.alpha <= 4.0) {
                    return Err(ModelError::AlphaOutOfRange(self.alpha));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Which predictor block a prior evaluation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Rate,
    Zero,
}

/// Strategy interface for the prior on a block's non-intercept coefficients.
///
/// The prior always covers the full coefficient vector; selection indicators
/// gate the likelihood only, so indicator flips never change this term.
pub trait CoefficientPrior: Send + Sync {
    fn name(&self) -> &'static str;
    fn log_coeff_prior(&self, block: BlockKind, beta_rest: &[f64], beta0: f64, g: f64) -> f64;
    /// Whether `g` carries a hyper-prior and is sampled.
    fn samples_g(&self) -> bool {
        false
    }
    fn log_g_prior(&self, _g: f64) -> f64 {
        0.0
    }
    fn initial_g(&self) -> f64;
}

struct GPriorShared {
    xtx: DMatrix<f64>,
    logdet: f64,
    sign: ExpSign,
}

impl GPriorShared {
    fn logpdf(&self, beta_rest: &[f64], beta0: f64, g: f64) -> f64 {
        gprior_logpdf_unchecked(beta_rest, beta0, g, &self.xtx, self.logdet, self.sign)
    }
}

struct HyperGPrior {
    shared: GPriorShared,
    alpha: f64,
    variant: ShrinkageVariant,
    n: usize,
}

impl CoefficientPrior for HyperGPrior {
    fn name(&self) -> &'static str {
        match self.variant {
            ShrinkageVariant::HyperG => "hyper-g",
            ShrinkageVariant::HyperGOverN => "hyper-g-n",
        }
    }
    fn log_coeff_prior(&self, _block: BlockKind, beta_rest: &[f64], beta0: f64, g: f64) -> f64 {
        self.shared.logpdf(beta_rest, beta0, g)
    }
    fn samples_g(&self) -> bool {
        true
    }
    fn log_g_prior(&self, g: f64) -> f64 {
        shrinkage_logprior(g, self.alpha, self.variant, self.n).unwrap_or(f64::NEG_INFINITY)
    }
    fn initial_g(&self) -> f64 {
        match self.variant {
            ShrinkageVariant::HyperG => 1.0,
            ShrinkageVariant::HyperGOverN => self.n as f64,
        }
    }
}

struct FixedGPrior {
    shared: GPriorShared,
    g: f64,
    name: &'static str,
}

impl CoefficientPrior for FixedGPrior {
    fn name(&self) -> &'static str {
        self.name
    }
    fn log_coeff_prior(&self, _block: BlockKind, beta_rest: &[f64], beta0: f64, g: f64) -> f64 {
        self.shared.logpdf(beta_rest, beta0, g)
    }
    fn initial_g(&self) -> f64 {
        self.g
    }
}

struct EiuCoefficientPrior {
    rate: EiuPrior,
    zero: EiuPrior,
}

impl CoefficientPrior for EiuCoefficientPrior {
    fn name(&self) -> &'static str {
        "eiu"
    }
    fn log_coeff_prior(&self, block: BlockKind, beta_rest: &[f64], _beta0: f64, _g: f64) -> f64 {
        match block {
            BlockKind::Rate => self.rate.logpdf(beta_rest),
            BlockKind::Zero => self.zero.logpdf(beta_rest),
        }
    }
    fn initial_g(&self) -> f64 {
        1.0
    }
}

/// Build the configured prior strategy against a design.
///
/// The EIU family needs the per-block posterior sds of a completed flat-prior
/// full-model fit, passed as `eiu`.
pub fn build_coefficient_prior(
    config: &PriorConfig,
    design: &Design,
    sign: ExpSign,
    eiu: Option<(EiuPrior, EiuPrior)>,
) -> Result<Box<dyn CoefficientPrior>, ModelError> {
    config.validate()?;
    let shared = || GPriorShared {
        xtx: design.xtx.clone(),
        logdet: design.xtx_logdet,
        sign,
    };
    match config.family {
        PriorFamilyId::HyperG => Ok(Box::new(HyperGPrior {
            shared: shared(),
            alpha: config.alpha,
            variant: ShrinkageVariant::HyperG,
            n: design.n,
        })),
        PriorFamilyId::HyperGN => Ok(Box::new(HyperGPrior {
            shared: shared(),
            alpha: config.alpha,
            variant: ShrinkageVariant::HyperGOverN,
            n: design.n,
        })),
        PriorFamilyId::ZgN => Ok(Box::new(FixedGPrior {
            shared: shared(),
            g: fixed_g(FixedGVariant::ZgN, design.n, design.p()),
            name: "zg-n",
        })),
        PriorFamilyId::ZgP2 => Ok(Box::new(FixedGPrior {
            shared: shared(),
            g: fixed_g(FixedGVariant::ZgP2, design.n, design.p()),
            name: "zg-p2",
        })),
        PriorFamilyId::Eiu => {
            let (rate, zero) = eiu.ok_or(ModelError::MissingFullModelFit)?;
            if rate.variances.len() != design.p() || zero.variances.len() != design.p() {
                return Err(ModelError::InvalidArgument(
                    "EIU variance vectors must match the covariate count".into(),
                ));
            }
            Ok(Box::new(EiuCoefficientPrior { rate, zero }))
        }
    }
}

/// Draw `g` from the shrinkage hyper-prior by inverse transform (testing and
/// prior-predictive use).
pub fn sample_shrinkage_g<R: Rng>(
    alpha: f64,
    variant: ShrinkageVariant,
    n: usize,
    rng: &mut R,
) -> Result<f64, ModelError> {
    if !(alpha > 2.0 && alpha <= 4.0) {
        return Err(ModelError::AlphaOutOfRange(alpha));
    }
    let b = alpha / 2.0 - 1.0;
    let u: f64 = rng.random();
    // Beta(1, b) inverse CDF
    let shrink: f64 = 1.0 - (1.0 - u).powf(1.0 / b);
    let ratio = shrink / (1.0 - shrink);
    Ok(match variant {
        ShrinkageVariant::HyperG => ratio,
        ShrinkageVariant::HyperGOverN => ratio * n as f64,
    })
}
