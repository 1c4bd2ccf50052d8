//! Metropolis-within-Gibbs sampler over the full model state.
//!
//! Each sweep updates: the zero-inflation latents by exact Bernoulli Gibbs;
//! every scalar coefficient by adaptive random-walk Metropolis; the selection
//! indicators by exact two-point Gibbs flips (the coefficient prior covers
//! the full vector, so indicators gate the likelihood only); kernel
//! parameters, change points, the mean-reversion rate (on the log scale), and
//! the shrinkage scale `g` (hyper priors only, on the log scale); and the
//! latent log-rate path by single-site Metropolis with the conditional
//! OU-bridge proposal. Week 1 has no transition noise: its log-rate is pinned
//! to the week-1 predictor.
//!
//! Chains are deterministic under a fixed seed: all randomness flows through
//! a counter-based generator seeded per chain.

mod adapt;
pub mod summary;

pub use adapt::ScalarAdaptor;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{aggregate_all, ChangePoint, KernelError, KernelParams, KernelSpec};
use crate::latent::OUParams;
use crate::model::{
    build_coefficient_prior, model_space_logprior, BlockKernel, BlockKind, CoefficientPrior,
    Design, EiuPrior, ExpSign, ModelError, ModelState, PriorConfig, RegressionBlock,
};
use crate::num::{log1p_exp, logistic, normal_logpdf};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("sampler configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("posterior not finite at initialization: {0}")]
    NonFiniteInit(String),
    #[error("posterior diverged to -inf at iteration {iteration}; state dump: {dump}")]
    Divergence { iteration: u64, dump: String },
}

/// Which update blocks run each sweep. All on by default; fixing blocks is
/// used by the flat-prior full-model stage of the EIU prior and by
/// validation runs against low-dimensional oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockToggles {
    pub selection: bool,
    pub zero_block: bool,
    pub random_effects: bool,
    pub ar: bool,
    pub kernel_params: bool,
    pub phi: bool,
    pub g: bool,
    pub latent: bool,
}

impl Default for BlockToggles {
    fn default() -> Self {
        Self {
            selection: true,
            zero_block: true,
            random_effects: true,
            ar: true,
            kernel_params: true,
            phi: true,
            g: true,
            latent: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub total_iters: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub chains: u32,
    pub seed: u64,
    /// Target acceptance rate for scalar proposals (useful band 0.234-0.44).
    pub target_accept: f64,
    /// Iterations with active step-size adaptation; must not exceed burn-in.
    pub adapt_window: u64,
    pub blocks: BlockToggles,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            total_iters: 105_000,
            burn_in: 5_000,
            thin: 10,
            chains: 2,
            seed: 1,
            target_accept: 0.44,
            adapt_window: 5_000,
            blocks: BlockToggles::default(),
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.burn_in >= self.total_iters {
            return Err(SamplerError::Config(format!(
                "burn-in {} must be smaller than total iterations {}",
                self.burn_in, self.total_iters
            )));
        }
        if self.thin == 0 {
            return Err(SamplerError::Config("thin must be >= 1".into()));
        }
        if self.chains == 0 {
            return Err(SamplerError::Config("at least one chain required".into()));
        }
        if self.adapt_window > self.burn_in {
            return Err(SamplerError::Config(format!(
                "adaptation window {} extends past burn-in {}; adapted scales must freeze before sampling",
                self.adapt_window, self.burn_in
            )));
        }
        if !(0.05..0.95).contains(&self.target_accept) {
            return Err(SamplerError::Config(format!(
                "target acceptance {} outside (0.05, 0.95)",
                self.target_accept
            )));
        }
        Ok(())
    }

    pub fn stored_per_chain(&self) -> usize {
        ((self.total_iters - self.burn_in) / self.thin) as usize
    }
}

/// Prior for the random-effect scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SigmaBPrior {
    /// sigma_b ~ Uniform(0, upper).
    Uniform { upper: f64 },
    /// 1/sigma_b^2 ~ Gamma(shape, rate) (reference-code convention).
    GammaPrecision { shape: f64, rate: f64 },
}

impl Default for SigmaBPrior {
    fn default() -> Self {
        SigmaBPrior::Uniform { upper: 100.0 }
    }
}

/// Everything that defines one fit besides the dataset and chain settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSettings {
    pub prior: PriorConfig,
    pub kernel: Option<KernelSpec>,
    pub exp_sign: ExpSign,
    /// Prior variance of both intercepts.
    pub beta0_variance: f64,
    /// Prior variance of the previous-count and kernel coefficients.
    pub coef_variance: f64,
    /// Prior variance of kernel shape parameters (a truncated > 0, r >= 0).
    pub kernel_param_variance: f64,
    pub sigma_b_prior: SigmaBPrior,
    /// Change-point prior support; defaults to (3, n-1).
    pub t_change_bounds: Option<(f64, f64)>,
    /// Initial value of every selection indicator.
    pub gamma_init: bool,
    /// Per-block EIU variance inputs (required by the `eiu` family).
    pub eiu: Option<(EiuPrior, EiuPrior)>,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            prior: PriorConfig::default(),
            kernel: None,
            exp_sign: ExpSign::Text,
            beta0_variance: 1e4,
            coef_variance: 1e4,
            kernel_param_variance: 1e4,
            sigma_b_prior: SigmaBPrior::default(),
            t_change_bounds: None,
            gamma_init: false,
            eiu: None,
        }
    }
}

/// Acceptance bookkeeping for one scalar block of one chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockLedger {
    pub name: String,
    pub proposals: u64,
    pub accepts: u64,
    pub step_at_freeze: f64,
    pub final_step: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainLedger {
    pub chain: u32,
    pub blocks: Vec<BlockLedger>,
}

/// Thinned post-burn-in draws of all scalar parameters, with per-draw
/// deviance and the acceptance ledgers.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub covariate_names: Vec<String>,
    /// One row per stored draw, chains concatenated in chain order.
    pub draws: Vec<Vec<f64>>,
    /// -2 x observation log-likelihood (zero-inflation marginalized).
    pub deviance: Vec<f64>,
    pub chains: u32,
    pub per_chain: usize,
    pub ledgers: Vec<ChainLedger>,
}

impl PosteriorDraws {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.column_index(name)?;
        Some(self.draws.iter().map(|r| r[idx]).collect())
    }
}

/// Kernel scalar slots, per block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum KParam {
    APre,
    CPre,
    RPre,
    APost,
    CPost,
    RPost,
    TChange,
}

fn kernel_param_slots(spec: KernelSpec) -> Vec<KParam> {
    let fam = spec.family();
    let mut slots = vec![KParam::APre];
    if fam.uses_shape() {
        slots.push(KParam::CPre);
    }
    if fam.uses_offset() {
        slots.push(KParam::RPre);
    }
    slots.push(KParam::APost);
    if fam.uses_shape() {
        slots.push(KParam::CPost);
    }
    if fam.uses_offset() {
        slots.push(KParam::RPost);
    }
    slots.push(KParam::TChange);
    slots
}

fn kparam_name(block_prefix: &str, p: KParam) -> String {
    let suffix = match p {
        KParam::APre => "kernel_a_pre",
        KParam::CPre => "kernel_c_pre",
        KParam::RPre => "kernel_r_pre",
        KParam::APost => "kernel_a_post",
        KParam::CPost => "kernel_c_post",
        KParam::RPost => "kernel_r_post",
        KParam::TChange => "kernel_t_change",
    };
    format!("{block_prefix}{suffix}")
}

fn get_kparam(bk: &BlockKernel, p: KParam) -> f64 {
    match p {
        KParam::APre => bk.change.pre.a,
        KParam::CPre => bk.change.pre.c.unwrap(),
        KParam::RPre => bk.change.pre.r.unwrap(),
        KParam::APost => bk.change.post.a,
        KParam::CPost => bk.change.post.c.unwrap(),
        KParam::RPost => bk.change.post.r.unwrap(),
        KParam::TChange => bk.change.t_change,
    }
}

fn set_kparam(bk: &mut BlockKernel, p: KParam, v: f64) {
    match p {
        KParam::APre => bk.change.pre.a = v,
        KParam::CPre => bk.change.pre.c = Some(v),
        KParam::RPre => bk.change.pre.r = Some(v),
        KParam::APost => bk.change.post.a = v,
        KParam::CPost => bk.change.post.c = Some(v),
        KParam::RPost => bk.change.post.r = Some(v),
        KParam::TChange => bk.change.t_change = v,
    }
}

struct BlockAdaptors {
    beta: Vec<ScalarAdaptor>,
    ar: ScalarAdaptor,
    kcoef: ScalarAdaptor,
    kparams: Vec<ScalarAdaptor>,
    b: Vec<ScalarAdaptor>,
    sigma_b: ScalarAdaptor,
}

impl BlockAdaptors {
    fn new(p: usize, n_years: usize, n_kparams: usize, target: f64) -> Self {
        Self {
            beta: (0..=p).map(|_| ScalarAdaptor::new(0.1, target)).collect(),
            ar: ScalarAdaptor::new(0.1, target),
            kcoef: ScalarAdaptor::new(0.1, target),
            kparams: (0..n_kparams)
                .map(|i| {
                    // the change point lives on the week axis; start it wide
                    let init = if i + 1 == n_kparams { 10.0 } else { 0.25 };
                    ScalarAdaptor::new(init, target)
                })
                .collect(),
            b: (0..n_years).map(|_| ScalarAdaptor::new(0.1, target)).collect(),
            sigma_b: ScalarAdaptor::new(0.25, target),
        }
    }

    fn freeze(&mut self) {
        for a in self
            .beta
            .iter_mut()
            .chain(self.kparams.iter_mut())
            .chain(self.b.iter_mut())
        {
            a.freeze();
        }
        self.ar.freeze();
        self.kcoef.freeze();
        self.sigma_b.freeze();
    }
}

fn ledger_entry(name: String, a: &ScalarAdaptor) -> BlockLedger {
    BlockLedger {
        name,
        proposals: a.proposals,
        accepts: a.accepts,
        step_at_freeze: a.step_at_freeze(),
        final_step: a.step(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Rate,
    Zero,
}

struct Chain<'a> {
    design: &'a Design,
    settings: &'a FitSettings,
    prior: &'a dyn CoefficientPrior,
    cfg: &'a McmcConfig,
    state: ModelState,
    /// Rate predictors per week (the OU means).
    mu_rate: Vec<f64>,
    /// Zero-side predictors per week (logits).
    eta_zero: Vec<f64>,
    kern_rate: Vec<f64>,
    kern_zero: Vec<f64>,
    rate_adapt: BlockAdaptors,
    zero_adapt: BlockAdaptors,
    theta_adapt: ScalarAdaptor,
    log_g_adapt: ScalarAdaptor,
    kparam_slots: Vec<KParam>,
    t_bounds: (f64, f64),
    rng: ChaCha20Rng,
    adapting: bool,
}

impl<'a> Chain<'a> {
    fn new(
        design: &'a Design,
        settings: &'a FitSettings,
        prior: &'a dyn CoefficientPrior,
        cfg: &'a McmcConfig,
        seed: u64,
    ) -> Result<Self, SamplerError> {
        let p = design.p();
        let n = design.n;
        let kparam_slots = settings.kernel.map(kernel_param_slots).unwrap_or_default();
        let t_bounds = settings
            .t_change_bounds
            .unwrap_or((3.0, (n as f64) - 1.0));
        if settings.kernel.is_some() && !(t_bounds.0 > 1.0 && t_bounds.1 < n as f64 && t_bounds.0 < t_bounds.1) {
            return Err(SamplerError::Config(format!(
                "change-point bounds {t_bounds:?} invalid for n={n}"
            )));
        }

        let make_kernel = |spec: KernelSpec| -> BlockKernel {
            let fam = spec.family();
            let params = KernelParams {
                a: 1.0,
                c: fam.uses_shape().then_some(1.0),
                r: fam.uses_offset().then_some(0.0),
            };
            BlockKernel {
                spec,
                change: ChangePoint {
                    t_change: 0.5 * (t_bounds.0 + t_bounds.1),
                    pre: params,
                    post: params,
                },
            }
        };

        let mut rate = RegressionBlock::zeros(p, design.n_years);
        let mut zero = RegressionBlock::zeros(p, design.n_years);
        rate.gamma = vec![settings.gamma_init; p];
        zero.gamma = vec![settings.gamma_init; p];

        let state = ModelState {
            rate,
            zero,
            ou: OUParams::from_log(1.0),
            rate_kernel: settings.kernel.map(make_kernel),
            zero_kernel: settings.kernel.map(make_kernel),
            g: prior.initial_g(),
            latent_lograte: vec![0.0; n],
            zero_latents: design.counts.iter().map(|&y| y == 0).collect(),
        };

        let target = cfg.target_accept;
        let mut chain = Self {
            design,
            settings,
            prior,
            cfg,
            state,
            mu_rate: vec![0.0; n],
            eta_zero: vec![0.0; n],
            kern_rate: vec![0.0; n],
            kern_zero: vec![0.0; n],
            rate_adapt: BlockAdaptors::new(p, design.n_years, kparam_slots.len(), target),
            zero_adapt: BlockAdaptors::new(p, design.n_years, kparam_slots.len(), target),
            theta_adapt: ScalarAdaptor::new(0.25, target),
            log_g_adapt: ScalarAdaptor::new(0.5, target),
            kparam_slots,
            t_bounds,
            rng: ChaCha20Rng::seed_from_u64(seed),
            adapting: cfg.adapt_window > 0,
        };
        chain.refresh_kernels()?;
        chain.refresh_mu_rate();
        chain.refresh_eta_zero();
        chain.state.latent_lograte = chain.mu_rate.clone();
        let lp = chain.full_logposterior();
        if !lp.is_finite() {
            return Err(SamplerError::NonFiniteInit(format!(
                "log-posterior = {lp} at the initial state"
            )));
        }
        Ok(chain)
    }

    fn refresh_kernels(&mut self) -> Result<(), SamplerError> {
        if let Some(bk) = &self.state.rate_kernel {
            self.kern_rate = aggregate_all(&self.design.bundle, &self.design.counts, bk.spec, &bk.change)?;
        }
        if let Some(bk) = &self.state.zero_kernel {
            self.kern_zero = aggregate_all(&self.design.bundle, &self.design.counts, bk.spec, &bk.change)?;
        }
        Ok(())
    }

    fn block_mu(&self, side: Side, week: usize) -> f64 {
        let (block, kern) = match side {
            Side::Rate => (&self.state.rate, &self.kern_rate),
            Side::Zero => (&self.state.zero, &self.kern_zero),
        };
        let has_kernel = match side {
            Side::Rate => self.state.rate_kernel.is_some(),
            Side::Zero => self.state.zero_kernel.is_some(),
        };
        let i = week - 1;
        let d = self.design;
        let mut v = block.beta[0];
        for (j, &active) in block.gamma.iter().enumerate() {
            if active {
                v += block.beta[j + 1] * d.x[(i, j + 1)];
            }
        }
        v += block.random_effects[d.years[i] - 1];
        if week >= 2 {
            v += block.ar_coef * f64::from(d.counts[i - 1]);
            if has_kernel {
                v += block.kernel_coef * kern[i];
            }
        }
        v
    }

    fn refresh_mu_rate(&mut self) {
        for week in 1..=self.design.n {
            self.mu_rate[week - 1] = self.block_mu(Side::Rate, week);
        }
        // week 1 carries no transition noise
        self.state.latent_lograte[0] = self.mu_rate[0];
    }

    fn refresh_eta_zero(&mut self) {
        for week in 1..=self.design.n {
            self.eta_zero[week - 1] = self.block_mu(Side::Zero, week);
        }
    }

    fn pois_ln(&self, i: usize, lambda: f64) -> f64 {
        let y = self.design.counts[i];
        f64::from(y) * lambda - lambda.exp() - self.design.ln_fact[y as usize]
    }

    fn obs_at(&self, i: usize, lambda: f64) -> f64 {
        if self.state.zero_latents[i] {
            0.0
        } else {
            self.pois_ln(i, lambda)
        }
    }

    /// OU transition terms for weeks 2..=n given the current mean path.
    fn ou_loglik(&self) -> f64 {
        let phi = self.state.ou.phi;
        let decay = (-phi).exp();
        let var = -(-2.0 * phi).exp_m1() / (2.0 * phi);
        let log_norm = -0.5 * (2.0 * std::f64::consts::PI * var).ln();
        let lam = &self.state.latent_lograte;
        let mut total = 0.0;
        for i in 1..self.design.n {
            let mu = self.mu_rate[i];
            let mean = mu + (lam[i - 1] - mu) * decay;
            let z = lam[i] - mean;
            total += log_norm - z * z / (2.0 * var);
        }
        total
    }

    /// Likelihood terms touched by rate-side parameters: the OU transitions
    /// plus the week-1 observation (whose log-rate is the predictor itself).
    fn rate_likelihood(&self) -> f64 {
        self.ou_loglik() + self.obs_at(0, self.state.latent_lograte[0])
    }

    /// Bernoulli terms of the zero-inflation latents.
    fn bern_loglik(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.design.n {
            let eta = self.eta_zero[i];
            total += if self.state.zero_latents[i] { eta } else { 0.0 } - log1p_exp(eta);
        }
        total
    }

    fn coeff_prior(&self, side: Side) -> f64 {
        let block = match side {
            Side::Rate => &self.state.rate,
            Side::Zero => &self.state.zero,
        };
        let kind = match side {
            Side::Rate => BlockKind::Rate,
            Side::Zero => BlockKind::Zero,
        };
        self.prior
            .log_coeff_prior(kind, &block.beta[1..], block.beta[0], self.state.g)
    }

    fn sigma_b_logprior(&self, sigma: f64) -> f64 {
        match self.settings.sigma_b_prior {
            SigmaBPrior::Uniform { upper } => {
                if sigma > 0.0 && sigma < upper {
                    -(upper.ln())
                } else {
                    f64::NEG_INFINITY
                }
            }
            SigmaBPrior::GammaPrecision { shape, rate } => {
                if sigma <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let tau = sigma.powi(-2);
                // Gamma density in tau plus |d tau / d sigma| = 2 sigma^-3
                (shape - 1.0) * tau.ln() - rate * tau + (2.0 * sigma.powi(-3)).ln()
            }
        }
    }

    fn random_effects_logprior(&self, side: Side) -> f64 {
        let block = match side {
            Side::Rate => &self.state.rate,
            Side::Zero => &self.state.zero,
        };
        let var = block.sigma_b * block.sigma_b;
        block
            .random_effects
            .iter()
            .map(|&b| normal_logpdf(b, 0.0, var))
            .sum::<f64>()
            + self.sigma_b_logprior(block.sigma_b)
    }

    fn kernel_params_logprior(&self, side: Side) -> f64 {
        let bk = match side {
            Side::Rate => &self.state.rate_kernel,
            Side::Zero => &self.state.zero_kernel,
        };
        let Some(bk) = bk else { return 0.0 };
        let v = self.settings.kernel_param_variance;
        let mut total = 0.0;
        for &slot in &self.kparam_slots {
            let val = get_kparam(bk, slot);
            match slot {
                KParam::TChange => {
                    if val < self.t_bounds.0 || val > self.t_bounds.1 {
                        return f64::NEG_INFINITY;
                    }
                }
                KParam::APre | KParam::APost => {
                    if val <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    total += normal_logpdf(val, 0.0, v);
                }
                KParam::RPre | KParam::RPost => {
                    if val < 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    total += normal_logpdf(val, 0.0, v);
                }
                _ => total += normal_logpdf(val, 0.0, v),
            }
        }
        total
    }

    fn block_priors(&self, side: Side) -> f64 {
        let block = match side {
            Side::Rate => &self.state.rate,
            Side::Zero => &self.state.zero,
        };
        self.coeff_prior(side)
            + normal_logpdf(block.beta[0], 0.0, self.settings.beta0_variance)
            + normal_logpdf(block.ar_coef, 0.0, self.settings.coef_variance)
            + normal_logpdf(block.kernel_coef, 0.0, self.settings.coef_variance)
            + self.random_effects_logprior(side)
            + self.kernel_params_logprior(side)
            + model_space_logprior(&block.gamma, self.settings.prior.model_space)
    }

    fn full_logposterior(&self) -> f64 {
        let mut total = self.ou_loglik() + self.bern_loglik();
        for i in 0..self.design.n {
            total += self.obs_at(i, self.state.latent_lograte[i]);
        }
        total += self.block_priors(Side::Rate) + self.block_priors(Side::Zero);
        total += normal_logpdf(self.state.ou.log(), 0.0, 100.0);
        if self.prior.samples_g() {
            total += self.prior.log_g_prior(self.state.g);
        }
        total
    }

    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    fn uniform(&mut self) -> f64 {
        self.rng.random()
    }

    fn accept(&mut self, ln_alpha: f64) -> (f64, bool) {
        if ln_alpha.is_nan() {
            return (0.0, false);
        }
        let alpha = if ln_alpha >= 0.0 { 1.0 } else { ln_alpha.exp() };
        let accepted = alpha >= 1.0 || self.uniform() < alpha;
        (alpha, accepted)
    }

    // --- update blocks -----------------------------------------------------

    /// Exact Bernoulli Gibbs for the zero-inflation latents (weeks with a
    /// zero count only; positive counts force the latent off).
    fn update_zero_latents(&mut self) {
        for i in 0..self.design.n {
            if self.design.counts[i] > 0 {
                self.state.zero_latents[i] = false;
                continue;
            }
            let p = logistic(self.eta_zero[i]);
            let theta = self.state.latent_lograte[i].exp();
            let prob_on = p / (p + (1.0 - p) * (-theta).exp());
            self.state.zero_latents[i] = self.uniform() < prob_on;
        }
    }

    /// Random-walk Metropolis on one rate-block scalar. The likelihood piece
    /// is the OU path plus the week-1 observation.
    fn rw_rate_scalar<GS>(
        &mut self,
        mut access: GS,
        prior_of_state: impl Fn(&Self) -> f64,
        step: f64,
        lower_bound: Option<f64>,
    ) -> (f64, bool)
    where
        GS: FnMut(&mut ModelState) -> &mut f64,
    {
        let old = *access(&mut self.state);
        let proposal = old + step * self.normal();
        if let Some(lo) = lower_bound {
            if proposal <= lo {
                return (0.0, false);
            }
        }
        let lik_old = self.rate_likelihood();
        let prior_old = prior_of_state(self);
        *access(&mut self.state) = proposal;
        self.refresh_mu_rate();
        let lik_new = self.rate_likelihood();
        let prior_new = prior_of_state(self);
        let (alpha, accepted) = self.accept(lik_new + prior_new - lik_old - prior_old);
        if !accepted {
            *access(&mut self.state) = old;
            self.refresh_mu_rate();
        }
        (alpha, accepted)
    }

    /// Random-walk Metropolis on one zero-block scalar; the likelihood piece
    /// is the Bernoulli sum.
    fn rw_zero_scalar<GS>(
        &mut self,
        mut access: GS,
        prior_of_state: impl Fn(&Self) -> f64,
        step: f64,
        lower_bound: Option<f64>,
    ) -> (f64, bool)
    where
        GS: FnMut(&mut ModelState) -> &mut f64,
    {
        let old = *access(&mut self.state);
        let proposal = old + step * self.normal();
        if let Some(lo) = lower_bound {
            if proposal <= lo {
                return (0.0, false);
            }
        }
        let lik_old = self.bern_loglik();
        let prior_old = prior_of_state(self);
        *access(&mut self.state) = proposal;
        self.refresh_eta_zero();
        let lik_new = self.bern_loglik();
        let prior_new = prior_of_state(self);
        let (alpha, accepted) = self.accept(lik_new + prior_new - lik_old - prior_old);
        if !accepted {
            *access(&mut self.state) = old;
            self.refresh_eta_zero();
        }
        (alpha, accepted)
    }

    fn update_betas(&mut self, side: Side) {
        let p = self.design.p();
        for j in 0..=p {
            let step = match side {
                Side::Rate => self.rate_adapt.beta[j].step(),
                Side::Zero => self.zero_adapt.beta[j].step(),
            };
            let beta0_var = self.settings.beta0_variance;
            let prior = move |c: &Self| {
                let block = match side {
                    Side::Rate => &c.state.rate,
                    Side::Zero => &c.state.zero,
                };
                let mut lp = c.coeff_prior(side);
                if j == 0 {
                    lp += normal_logpdf(block.beta[0], 0.0, beta0_var);
                }
                lp
            };
            let (alpha, accepted) = match side {
                Side::Rate => {
                    self.rw_rate_scalar(move |s| &mut s.rate.beta[j], prior, step, None)
                }
                Side::Zero => {
                    self.rw_zero_scalar(move |s| &mut s.zero.beta[j], prior, step, None)
                }
            };
            let adapting = self.adapting;
            match side {
                Side::Rate => self.rate_adapt.beta[j].observe(alpha, accepted, adapting),
                Side::Zero => self.zero_adapt.beta[j].observe(alpha, accepted, adapting),
            }
        }
    }

    /// Exact two-point Gibbs flip of one selection indicator: the coefficient
    /// prior covers the full vector, so only the likelihood and the
    /// model-space prior differ between the two states.
    fn update_gammas(&mut self, side: Side) {
        let p = self.design.p();
        let ms = self.settings.prior.model_space;
        for j in 0..p {
            let mut log_weight = [0.0_f64; 2];
            for (idx, on) in [false, true].into_iter().enumerate() {
                match side {
                    Side::Rate => {
                        self.state.rate.gamma[j] = on;
                        self.refresh_mu_rate();
                        log_weight[idx] = self.rate_likelihood()
                            + model_space_logprior(&self.state.rate.gamma, ms);
                    }
                    Side::Zero => {
                        self.state.zero.gamma[j] = on;
                        self.refresh_eta_zero();
                        log_weight[idx] = self.bern_loglik()
                            + model_space_logprior(&self.state.zero.gamma, ms);
                    }
                }
            }
            let prob_on = logistic(log_weight[1] - log_weight[0]);
            let on = self.uniform() < prob_on;
            match side {
                Side::Rate => {
                    self.state.rate.gamma[j] = on;
                    self.refresh_mu_rate();
                }
                Side::Zero => {
                    self.state.zero.gamma[j] = on;
                    self.refresh_eta_zero();
                }
            }
        }
    }

    fn update_ar_and_kcoef(&mut self, side: Side) {
        if self.cfg.blocks.ar {
            let step = match side {
                Side::Rate => self.rate_adapt.ar.step(),
                Side::Zero => self.zero_adapt.ar.step(),
            };
            let coef_var = self.settings.coef_variance;
            let prior = move |c: &Self| {
                let block = match side {
                    Side::Rate => &c.state.rate,
                    Side::Zero => &c.state.zero,
                };
                normal_logpdf(block.ar_coef, 0.0, coef_var)
            };
            let (alpha, accepted) = match side {
                Side::Rate => self.rw_rate_scalar(|s| &mut s.rate.ar_coef, prior, step, None),
                Side::Zero => self.rw_zero_scalar(|s| &mut s.zero.ar_coef, prior, step, None),
            };
            let adapting = self.adapting;
            match side {
                Side::Rate => self.rate_adapt.ar.observe(alpha, accepted, adapting),
                Side::Zero => self.zero_adapt.ar.observe(alpha, accepted, adapting),
            }
        }
        let has_kernel = match side {
            Side::Rate => self.state.rate_kernel.is_some(),
            Side::Zero => self.state.zero_kernel.is_some(),
        };
        if has_kernel {
            let step = match side {
                Side::Rate => self.rate_adapt.kcoef.step(),
                Side::Zero => self.zero_adapt.kcoef.step(),
            };
            let coef_var = self.settings.coef_variance;
            let prior = move |c: &Self| {
                let block = match side {
                    Side::Rate => &c.state.rate,
                    Side::Zero => &c.state.zero,
                };
                normal_logpdf(block.kernel_coef, 0.0, coef_var)
            };
            let (alpha, accepted) = match side {
                Side::Rate => self.rw_rate_scalar(|s| &mut s.rate.kernel_coef, prior, step, None),
                Side::Zero => self.rw_zero_scalar(|s| &mut s.zero.kernel_coef, prior, step, None),
            };
            let adapting = self.adapting;
            match side {
                Side::Rate => self.rate_adapt.kcoef.observe(alpha, accepted, adapting),
                Side::Zero => self.zero_adapt.kcoef.observe(alpha, accepted, adapting),
            }
        }
    }

    fn update_random_effects(&mut self, side: Side) {
        for m in 0..self.design.n_years {
            let step = match side {
                Side::Rate => self.rate_adapt.b[m].step(),
                Side::Zero => self.zero_adapt.b[m].step(),
            };
            let prior = move |c: &Self| {
                let block = match side {
                    Side::Rate => &c.state.rate,
                    Side::Zero => &c.state.zero,
                };
                normal_logpdf(
                    block.random_effects[m],
                    0.0,
                    block.sigma_b * block.sigma_b,
                )
            };
            let (alpha, accepted) = match side {
                Side::Rate => {
                    self.rw_rate_scalar(move |s| &mut s.rate.random_effects[m], prior, step, None)
                }
                Side::Zero => {
                    self.rw_zero_scalar(move |s| &mut s.zero.random_effects[m], prior, step, None)
                }
            };
            let adapting = self.adapting;
            match side {
                Side::Rate => self.rate_adapt.b[m].observe(alpha, accepted, adapting),
                Side::Zero => self.zero_adapt.b[m].observe(alpha, accepted, adapting),
            }
        }
        // scale update: conditional on the effects only
        let step = match side {
            Side::Rate => self.rate_adapt.sigma_b.step(),
            Side::Zero => self.zero_adapt.sigma_b.step(),
        };
        let (old, proposal) = {
            let block = match side {
                Side::Rate => &self.state.rate,
                Side::Zero => &self.state.zero,
            };
            let old = block.sigma_b;
            (old, old + step * self.normal())
        };
        let (alpha, accepted) = if proposal <= 0.0 {
            (0.0, false)
        } else {
            let target = |c: &Self, sigma: f64| {
                let block = match side {
                    Side::Rate => &c.state.rate,
                    Side::Zero => &c.state.zero,
                };
                block
                    .random_effects
                    .iter()
                    .map(|&b| normal_logpdf(b, 0.0, sigma * sigma))
                    .sum::<f64>()
                    + c.sigma_b_logprior(sigma)
            };
            let ln_alpha = target(self, proposal) - target(self, old);
            self.accept(ln_alpha)
        };
        if accepted {
            match side {
                Side::Rate => self.state.rate.sigma_b = proposal,
                Side::Zero => self.state.zero.sigma_b = proposal,
            }
        }
        let adapting = self.adapting;
        match side {
            Side::Rate => self.rate_adapt.sigma_b.observe(alpha, accepted, adapting),
            Side::Zero => self.zero_adapt.sigma_b.observe(alpha, accepted, adapting),
        }
    }

    fn update_kernel_params(&mut self, side: Side) -> Result<(), SamplerError> {
        let has_kernel = match side {
            Side::Rate => self.state.rate_kernel.is_some(),
            Side::Zero => self.state.zero_kernel.is_some(),
        };
        if !has_kernel {
            return Ok(());
        }
        for (slot_idx, &slot) in self.kparam_slots.clone().iter().enumerate() {
            let step = match side {
                Side::Rate => self.rate_adapt.kparams[slot_idx].step(),
                Side::Zero => self.zero_adapt.kparams[slot_idx].step(),
            };
            let old = {
                let bk = match side {
                    Side::Rate => self.state.rate_kernel.as_ref().unwrap(),
                    Side::Zero => self.state.zero_kernel.as_ref().unwrap(),
                };
                get_kparam(bk, slot)
            };
            let proposal = old + step * self.normal();
            let in_domain = match slot {
                KParam::APre | KParam::APost => proposal > 0.0,
                KParam::RPre | KParam::RPost => proposal >= 0.0,
                KParam::TChange => proposal >= self.t_bounds.0 && proposal <= self.t_bounds.1,
                _ => proposal.is_finite(),
            };
            let (alpha, accepted) = if !in_domain {
                (0.0, false)
            } else {
                let (lik_old, prior_old) = match side {
                    Side::Rate => (self.rate_likelihood(), self.kernel_params_logprior(side)),
                    Side::Zero => (self.bern_loglik(), self.kernel_params_logprior(side)),
                };
                {
                    let bk = match side {
                        Side::Rate => self.state.rate_kernel.as_mut().unwrap(),
                        Side::Zero => self.state.zero_kernel.as_mut().unwrap(),
                    };
                    set_kparam(bk, slot, proposal);
                }
                self.refresh_kernel_side(side)?;
                let (lik_new, prior_new) = match side {
                    Side::Rate => (self.rate_likelihood(), self.kernel_params_logprior(side)),
                    Side::Zero => (self.bern_loglik(), self.kernel_params_logprior(side)),
                };
                let (alpha, accepted) =
                    self.accept(lik_new + prior_new - lik_old - prior_old);
                if !accepted {
                    let bk = match side {
                        Side::Rate => self.state.rate_kernel.as_mut().unwrap(),
                        Side::Zero => self.state.zero_kernel.as_mut().unwrap(),
                    };
                    set_kparam(bk, slot, old);
                    self.refresh_kernel_side(side)?;
                }
                (alpha, accepted)
            };
            let adapting = self.adapting;
            match side {
                Side::Rate => self.rate_adapt.kparams[slot_idx].observe(alpha, accepted, adapting),
                Side::Zero => self.zero_adapt.kparams[slot_idx].observe(alpha, accepted, adapting),
            }
        }
        Ok(())
    }

    fn refresh_kernel_side(&mut self, side: Side) -> Result<(), SamplerError> {
        match side {
            Side::Rate => {
                if let Some(bk) = &self.state.rate_kernel {
                    self.kern_rate =
                        aggregate_all(&self.design.bundle, &self.design.counts, bk.spec, &bk.change)?;
                }
                self.refresh_mu_rate();
            }
            Side::Zero => {
                if let Some(bk) = &self.state.zero_kernel {
                    self.kern_zero =
                        aggregate_all(&self.design.bundle, &self.design.counts, bk.spec, &bk.change)?;
                }
                self.refresh_eta_zero();
            }
        }
        Ok(())
    }

    /// Mean-reversion rate, random walk on theta = ln(phi).
    fn update_phi(&mut self) {
        let step = self.theta_adapt.step();
        let old_theta = self.state.ou.log();
        let proposal = old_theta + step * self.normal();
        let lik_old = self.ou_loglik();
        self.state.ou = OUParams::from_log(proposal);
        let lik_new = self.ou_loglik();
        let ln_alpha = lik_new - lik_old + normal_logpdf(proposal, 0.0, 100.0)
            - normal_logpdf(old_theta, 0.0, 100.0);
        let (alpha, accepted) = self.accept(ln_alpha);
        if !accepted {
            self.state.ou = OUParams::from_log(old_theta);
        }
        let adapting = self.adapting;
        self.theta_adapt.observe(alpha, accepted, adapting);
    }

    /// Shrinkage scale, random walk on ln(g) with the log-scale Jacobian.
    fn update_g(&mut self) {
        if !self.prior.samples_g() {
            return;
        }
        let step = self.log_g_adapt.step();
        let old = self.state.g;
        let proposal = (old.ln() + step * self.normal()).exp();
        let target = |c: &Self, g: f64| {
            let rate = c
                .prior
                .log_coeff_prior(BlockKind::Rate, &c.state.rate.beta[1..], c.state.rate.beta[0], g);
            let zero = c
                .prior
                .log_coeff_prior(BlockKind::Zero, &c.state.zero.beta[1..], c.state.zero.beta[0], g);
            rate + zero + c.prior.log_g_prior(g) + g.ln()
        };
        let ln_alpha = target(self, proposal) - target(self, old);
        let (alpha, accepted) = self.accept(ln_alpha);
        if accepted {
            self.state.g = proposal;
        }
        let adapting = self.adapting;
        self.log_g_adapt.observe(alpha, accepted, adapting);
    }

    /// Single-site latent path update with the conditional OU-bridge
    /// proposal: the Gaussian part of each site's full conditional is drawn
    /// exactly, so the acceptance ratio reduces to the observation term.
    fn update_latent_path(&mut self) {
        let n = self.design.n;
        let phi = self.state.ou.phi;
        let decay = (-phi).exp();
        let var = -(-2.0 * phi).exp_m1() / (2.0 * phi);
        for i in 1..n {
            let mu_i = self.mu_rate[i];
            let lam_prev = self.state.latent_lograte[i - 1];
            let m_fwd = mu_i + (lam_prev - mu_i) * decay;
            let (mean, var_c) = if i + 1 < n {
                let mu_next = self.mu_rate[i + 1];
                let lam_next = self.state.latent_lograte[i + 1];
                let mean = (m_fwd + decay * decay * mu_next + decay * (lam_next - mu_next))
                    / (1.0 + decay * decay);
                (mean, var / (1.0 + decay * decay))
            } else {
                (m_fwd, var)
            };
            let proposal = mean + var_c.sqrt() * self.normal();
            let old = self.state.latent_lograte[i];
            let ln_alpha = self.obs_at(i, proposal) - self.obs_at(i, old);
            let (_, accepted) = self.accept(ln_alpha);
            if accepted {
                self.state.latent_lograte[i] = proposal;
            }
        }
    }

    fn sweep(&mut self) -> Result<(), SamplerError> {
        self.update_zero_latents();
        self.update_betas(Side::Rate);
        if self.cfg.blocks.selection {
            self.update_gammas(Side::Rate);
        }
        self.update_ar_and_kcoef(Side::Rate);
        if self.cfg.blocks.random_effects {
            self.update_random_effects(Side::Rate);
        }
        if self.cfg.blocks.kernel_params {
            self.update_kernel_params(Side::Rate)?;
        }
        if self.cfg.blocks.zero_block {
            self.update_betas(Side::Zero);
            if self.cfg.blocks.selection {
                self.update_gammas(Side::Zero);
            }
            self.update_ar_and_kcoef(Side::Zero);
            if self.cfg.blocks.random_effects {
                self.update_random_effects(Side::Zero);
            }
            if self.cfg.blocks.kernel_params {
                self.update_kernel_params(Side::Zero)?;
            }
        }
        if self.cfg.blocks.phi {
            self.update_phi();
        }
        if self.cfg.blocks.g {
            self.update_g();
        }
        if self.cfg.blocks.latent {
            self.update_latent_path();
        }
        Ok(())
    }

    fn freeze_adaptation(&mut self) {
        self.rate_adapt.freeze();
        self.zero_adapt.freeze();
        self.theta_adapt.freeze();
        self.log_g_adapt.freeze();
        self.adapting = false;
    }

    /// Marginal (zero-inflation integrated out) deviance of the current state.
    fn deviance(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.design.n {
            let theta = self.state.latent_lograte[i].exp().max(f64::MIN_POSITIVE);
            let p = logistic(self.eta_zero[i]);
            total += crate::model::zip_loglik_raw(
                self.design.counts[i],
                theta,
                p,
                self.design.ln_fact[self.design.counts[i] as usize],
            );
        }
        -2.0 * total
    }

    fn snapshot(&self, out: &mut Vec<f64>) {
        let push_block = |out: &mut Vec<f64>, block: &RegressionBlock, bk: &Option<BlockKernel>| {
            out.extend_from_slice(&block.beta);
            out.extend(block.gamma.iter().map(|&on| f64::from(u8::from(on))));
            out.push(block.ar_coef);
            if let Some(bk) = bk {
                out.push(block.kernel_coef);
                for &slot in &self.kparam_slots {
                    out.push(get_kparam(bk, slot));
                }
            }
            out.extend_from_slice(&block.random_effects);
            out.push(block.sigma_b);
        };
        push_block(out, &self.state.rate, &self.state.rate_kernel);
        push_block(out, &self.state.zero, &self.state.zero_kernel);
        out.push(self.state.ou.phi);
        out.push(self.state.g);
    }

    fn ledger(&self, chain: u32) -> ChainLedger {
        let mut blocks = Vec::new();
        let mut push_side = |prefix: &str, set: &BlockAdaptors| {
            for (j, a) in set.beta.iter().enumerate() {
                blocks.push(ledger_entry(format!("{prefix}beta_{j}"), a));
            }
            blocks.push(ledger_entry(format!("{prefix}ar_coef"), &set.ar));
            if !self.kparam_slots.is_empty() {
                blocks.push(ledger_entry(format!("{prefix}kernel_coef"), &set.kcoef));
                for (idx, &slot) in self.kparam_slots.iter().enumerate() {
                    blocks.push(ledger_entry(kparam_name(prefix, slot), &set.kparams[idx]));
                }
            }
            for (m, a) in set.b.iter().enumerate() {
                blocks.push(ledger_entry(format!("{prefix}b_{}", m + 1), a));
            }
            blocks.push(ledger_entry(format!("{prefix}sigma_b"), &set.sigma_b));
        };
        push_side("", &self.rate_adapt);
        push_side("z_", &self.zero_adapt);
        blocks.push(ledger_entry("theta".into(), &self.theta_adapt));
        blocks.push(ledger_entry("log_g".into(), &self.log_g_adapt));
        ChainLedger { chain, blocks }
    }
}

fn parameter_names(design: &Design, settings: &FitSettings) -> Vec<String> {
    let slots = settings.kernel.map(kernel_param_slots).unwrap_or_default();
    let mut names = Vec::new();
    let mut push_block = |prefix: &str| {
        for j in 0..=design.p() {
            names.push(format!("{prefix}beta_{j}"));
        }
        for j in 1..=design.p() {
            names.push(format!("{prefix}gamma_{j}"));
        }
        names.push(format!("{prefix}ar_coef"));
        if settings.kernel.is_some() {
            names.push(format!("{prefix}kernel_coef"));
            for &slot in &slots {
                names.push(kparam_name(prefix, slot));
            }
        }
        for m in 1..=design.n_years {
            names.push(format!("{prefix}b_{m}"));
        }
        names.push(format!("{prefix}sigma_b"));
    };
    push_block("");
    push_block("z_");
    names.push("phi".into());
    names.push("g".into());
    names
}

const CHAIN_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Run the sampler and collect thinned post-burn-in draws.
pub fn run_mcmc(
    design: &Design,
    settings: &FitSettings,
    config: &McmcConfig,
) -> Result<PosteriorDraws, SamplerError> {
    config.validate()?;
    settings.prior.validate().map_err(SamplerError::Model)?;
    if design.n < 2 {
        return Err(SamplerError::Config(
            "sampler requires at least two weeks of data".into(),
        ));
    }
    let prior = build_coefficient_prior(
        &settings.prior,
        design,
        settings.exp_sign,
        settings.eiu.clone(),
    )?;

    let names = parameter_names(design, settings);
    let per_chain = config.stored_per_chain();
    let mut draws = Vec::with_capacity(per_chain * config.chains as usize);
    let mut deviance = Vec::with_capacity(per_chain * config.chains as usize);
    let mut ledgers = Vec::with_capacity(config.chains as usize);

    for chain_idx in 0..config.chains {
        let seed = config
            .seed
            .wrapping_add(CHAIN_SEED_STRIDE.wrapping_mul(u64::from(chain_idx)));
        let mut chain = Chain::new(design, settings, prior.as_ref(), config, seed)?;
        for t in 1..=config.total_iters {
            chain.sweep()?;
            if t == config.burn_in {
                chain.freeze_adaptation();
            } else if t == config.adapt_window {
                chain.adapting = false;
            }
            if t > config.burn_in && (t - config.burn_in) % config.thin == 0 {
                let lp = chain.full_logposterior();
                if lp == f64::NEG_INFINITY || lp.is_nan() {
                    return Err(SamplerError::Divergence {
                        iteration: t,
                        dump: format!("{:?}", chain.state),
                    });
                }
                let mut row = Vec::with_capacity(names.len());
                chain.snapshot(&mut row);
                debug_assert_eq!(row.len(), names.len());
                draws.push(row);
                deviance.push(chain.deviance());
            }
        }
        ledgers.push(chain.ledger(chain_idx));
    }

    Ok(PosteriorDraws {
        names,
        covariate_names: design.covariate_names.clone(),
        draws,
        deviance,
        chains: config.chains,
        per_chain,
        ledgers,
    })
}

/// Posterior sds of the non-intercept coefficients of both blocks from a
/// flat-prior full-model fit (all indicators fixed on). Feeds the EIU prior.
pub fn eiu_stage_sds(
    design: &Design,
    base: &FitSettings,
    config: &McmcConfig,
) -> Result<(Vec<f64>, Vec<f64>), SamplerError> {
    let flat_var = 1e4;
    let mut settings = base.clone();
    settings.prior = PriorConfig {
        family: crate::model::PriorFamilyId::Eiu,
        alpha: base.prior.alpha,
        model_space: base.prior.model_space,
    };
    settings.gamma_init = true;
    settings.eiu = Some((
        EiuPrior {
            variances: vec![flat_var; design.p()],
        },
        EiuPrior {
            variances: vec![flat_var; design.p()],
        },
    ));
    let mut cfg = *config;
    cfg.blocks.selection = false;
    let draws = run_mcmc(design, &settings, &cfg)?;
    let sd_of = |name: &str| -> f64 {
        let col = draws.column(name).expect("column exists");
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (col.len() as f64 - 1.0))
            .sqrt()
    };
    let rate: Vec<f64> = (1..=design.p()).map(|j| sd_of(&format!("beta_{j}"))).collect();
    let zero: Vec<f64> = (1..=design.p()).map(|j| sd_of(&format!("z_beta_{j}"))).collect();
    Ok((rate, zero))
}
