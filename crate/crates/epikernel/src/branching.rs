//! Branching-process disease-control analytics on top of posterior draws:
//! extinction probabilities, occupation times, covariate scenarios, and the
//! endemic/epidemic decomposition of the weekly mean.
//!
//! Offspring distributions come from the power-series family
//! `P(Z = r) = a_r lambda^r / A(lambda)`; the extinction probability is the
//! smallest root of `A(q lambda) = q A(lambda)`, solved by bracketing
//! bisection with a Newton polish. For Poisson offspring this is the smallest
//! root of `exp(q lambda) = q exp(lambda)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{kernel_value, ChangePoint, KernelParams, KernelSpec};
use crate::model::{logistic, Design};
use crate::num::quantile_type7;
use crate::tables::DrawsTable;

#[derive(Debug, Error)]
pub enum BranchingError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("power series diverges at lambda = {lambda}")]
    SeriesDivergence { lambda: f64 },
    #[error("scenario covariate {0:?} not in the fitted model")]
    ScenarioCovariate(String),
    #[error("draws table missing column {0:?}")]
    MissingColumn(String),
    #[error("mu term left unassigned in the component map: {0}")]
    UnassignedTerm(String),
    #[error(transparent)]
    Kernel(#[from] crate::kernels::KernelError),
}

const ROOT_TOL: f64 = 1e-12;

/// Offspring law of the branching approximation.
pub trait OffspringDistribution: Send + Sync {
    fn name(&self) -> &'static str;
    /// Offspring mean at the canonical parameter.
    fn mean(&self, lambda: f64) -> Result<f64, BranchingError>;
    /// Smallest extinction root in [0, 1].
    fn extinction(&self, lambda: f64) -> Result<f64, BranchingError>;
}

/// Poisson offspring (power-series coefficients `1/r!`).
pub struct PoissonOffspring;

impl OffspringDistribution for PoissonOffspring {
    fn name(&self) -> &'static str {
        "poisson"
    }
    fn mean(&self, lambda: f64) -> Result<f64, BranchingError> {
        check_lambda(lambda)?;
        Ok(lambda)
    }
    fn extinction(&self, lambda: f64) -> Result<f64, BranchingError> {
        extinction_poisson(lambda)
    }
}

/// Truncated power-series offspring with explicit nonnegative coefficients.
pub struct PowerSeriesOffspring {
    coeffs: Vec<f64>,
}

impl PowerSeriesOffspring {
    pub fn new(coeffs: Vec<f64>) -> Result<Self, BranchingError> {
        if coeffs.is_empty() {
            return Err(BranchingError::InvalidArgument(
                "power series needs at least one coefficient".into(),
            ));
        }
        if coeffs.iter().any(|&a| !(a.is_finite() && a >= 0.0)) {
            return Err(BranchingError::InvalidArgument(
                "power-series coefficients must be finite and >= 0".into(),
            ));
        }
        if coeffs.iter().all(|&a| a == 0.0) {
            return Err(BranchingError::InvalidArgument(
                "power series must have a positive coefficient".into(),
            ));
        }
        Ok(Self { coeffs })
    }

    fn series(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &a| acc * x + a)
    }

    fn series_derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (r, &a)| acc * x + r as f64 * a)
    }
}

impl OffspringDistribution for PowerSeriesOffspring {
    fn name(&self) -> &'static str {
        "power-series"
    }

    fn mean(&self, lambda: f64) -> Result<f64, BranchingError> {
        check_lambda(lambda)?;
        let a = self.series(lambda);
        if !a.is_finite() || a <= 0.0 {
            return Err(BranchingError::SeriesDivergence { lambda });
        }
        let da = self.series_derivative(lambda);
        if !da.is_finite() {
            return Err(BranchingError::SeriesDivergence { lambda });
        }
        Ok(lambda * da / a)
    }

    fn extinction(&self, lambda: f64) -> Result<f64, BranchingError> {
        let mean = self.mean(lambda)?;
        if self.coeffs[0] == 0.0 {
            // no mass at zero offspring: extinction is impossible
            return Ok(0.0);
        }
        if mean <= 1.0 {
            return Ok(1.0);
        }
        let a_lambda = self.series(lambda);
        let pgf = |s: f64| self.series(s * lambda) / a_lambda;
        let dpgf = |s: f64| lambda * self.series_derivative(s * lambda) / a_lambda;
        Ok(smallest_fixed_point(pgf, dpgf))
    }
}

fn check_lambda(lambda: f64) -> Result<(), BranchingError> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(BranchingError::InvalidArgument(format!(
            "lambda must be finite and > 0, got {lambda}"
        )));
    }
    Ok(())
}

/// Smallest root of `pgf(s) = s` on [0, 1) for a supercritical pgf, by
/// bracketing bisection followed by a Newton polish.
fn smallest_fixed_point(pgf: impl Fn(f64) -> f64, dpgf: impl Fn(f64) -> f64) -> f64 {
    let f = |s: f64| pgf(s) - s;
    let mut lo = 0.0_f64;
    let mut hi = 1.0 - 1e-15;
    if f(lo) <= 0.0 {
        return 0.0;
    }
    // f(lo) > 0 and f(hi) < 0 for a supercritical process
    while hi - lo > ROOT_TOL / 8.0 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut q = 0.5 * (lo + hi);
    for _ in 0..4 {
        let deriv = dpgf(q) - 1.0;
        if deriv.abs() < 1e-300 {
            break;
        }
        let next = q - f(q) / deriv;
        if next.is_finite() && (0.0..1.0).contains(&next) {
            q = next;
        } else {
            break;
        }
    }
    q
}

/// Extinction probability of a Poisson(lambda) branching process: the
/// smallest root of `exp(q lambda) = q exp(lambda)`, exactly 1 when
/// `lambda <= 1`.
pub fn extinction_poisson(lambda: f64) -> Result<f64, BranchingError> {
    check_lambda(lambda)?;
    if lambda <= 1.0 {
        return Ok(1.0);
    }
    Ok(smallest_fixed_point(
        |s| (lambda * (s - 1.0)).exp(),
        |s| lambda * (lambda * (s - 1.0)).exp(),
    ))
}

/// Extinction probability for a general power-series offspring law.
pub fn extinction_power_series(
    spec: &PowerSeriesOffspring,
    lambda: f64,
) -> Result<f64, BranchingError> {
    spec.extinction(lambda)
}

/// Zero-inflation adjustment: `min(1, q + p)`.
pub fn zip_extinction(q: f64, p: f64) -> Result<f64, BranchingError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(BranchingError::InvalidArgument(format!(
            "extinction probability must lie in [0, 1], got {q}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(BranchingError::InvalidArgument(format!(
            "zero-inflation probability must lie in [0, 1], got {p}"
        )));
    }
    Ok((q + p).min(1.0))
}

/// Expected time the outbreak has exactly `q_count` infected farms:
/// `lambda^(Q-1) / (Q (1 v lambda)^Q)`.
pub fn occupation_time(lambda: f64, q_count: u32) -> Result<f64, BranchingError> {
    check_lambda(lambda)?;
    if q_count == 0 {
        return Err(BranchingError::InvalidArgument(
            "occupation count Q must be >= 1".into(),
        ));
    }
    let q = i32::try_from(q_count).map_err(|_| {
        BranchingError::InvalidArgument(format!("occupation count {q_count} too large"))
    })?;
    Ok(lambda.powi(q - 1) / (f64::from(q) * lambda.max(1.0).powi(q)))
}

// --- covariate scenarios ----------------------------------------------------

/// How one covariate is set in a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovariateSetting {
    Min,
    Median,
    Max,
    Fixed(f64),
}

/// Reference values (min/median/max) for one scenario axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioValues {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl ScenarioValues {
    pub fn validate(&self) -> Result<(), BranchingError> {
        if !(self.min <= self.median && self.median <= self.max) {
            return Err(BranchingError::InvalidArgument(format!(
                "scenario values must satisfy min <= median <= max, got {self:?}"
            )));
        }
        Ok(())
    }

    fn pick(&self, setting: CovariateSetting) -> f64 {
        match setting {
            CovariateSetting::Min => self.min,
            CovariateSetting::Median => self.median,
            CovariateSetting::Max => self.max,
            CovariateSetting::Fixed(v) => v,
        }
    }
}

/// Key under which the kernel-distance axis appears in scenario tables.
pub const DISTANCE_KEY: &str = "distance";

/// Per-covariate reference values used by scenarios; covariates not listed in
/// a scenario sit at their median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTable {
    pub entries: BTreeMap<String, ScenarioValues>,
}

impl ScenarioTable {
    pub fn validate(&self) -> Result<(), BranchingError> {
        for v in self.entries.values() {
            v.validate()?;
        }
        Ok(())
    }
}

/// Reference table built from the dataset: per-covariate min/median/max of
/// the raw (uncentered) columns. Callers overlay external values (for
/// instance current-year figures) on top.
pub fn scenario_table_from_design(design: &Design) -> ScenarioTable {
    let mut entries = BTreeMap::new();
    for (j, name) in design.covariate_names.iter().enumerate() {
        let raw: Vec<f64> = (0..design.n)
            .map(|i| design.x[(i, j + 1)] + design.col_means[j])
            .collect();
        let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        entries.insert(
            name.clone(),
            ScenarioValues {
                min,
                median: quantile_type7(&raw, 0.5),
                max,
            },
        );
    }
    ScenarioTable { entries }
}

/// One scenario: named, with explicit settings for a subset of axes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub settings: BTreeMap<String, CovariateSetting>,
}

/// Posterior draws and interval of the extinction probability for a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtinctionResult {
    pub scenario: String,
    pub q_draws: Vec<f64>,
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Posterior summary of the occupation time for one Q.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationSummary {
    pub scenario: String,
    pub q_count: u32,
    pub mean: f64,
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

struct BlockColumns {
    beta: Vec<usize>,
    gamma: Vec<usize>,
    kernel_coef: Option<usize>,
    kernel_post: Option<(usize, Option<usize>, Option<usize>)>,
}

impl BlockColumns {
    fn resolve(
        table: &DrawsTable,
        prefix: &str,
        p: usize,
        kernel: Option<KernelSpec>,
    ) -> Result<Self, BranchingError> {
        let col = |name: String| -> Result<usize, BranchingError> {
            table
                .column_index(&name)
                .map_err(|_| BranchingError::MissingColumn(name))
        };
        let beta = (0..=p)
            .map(|j| col(format!("{prefix}beta_{j}")))
            .collect::<Result<_, _>>()?;
        let gamma = (1..=p)
            .map(|j| col(format!("{prefix}gamma_{j}")))
            .collect::<Result<_, _>>()?;
        let (kernel_coef, kernel_post) = if let Some(spec) = kernel {
            let fam = spec.family();
            let a = col(format!("{prefix}kernel_a_post"))?;
            let c = fam
                .uses_shape()
                .then(|| col(format!("{prefix}kernel_c_post")))
                .transpose()?;
            let r = fam
                .uses_offset()
                .then(|| col(format!("{prefix}kernel_r_post")))
                .transpose()?;
            (Some(col(format!("{prefix}kernel_coef"))?), Some((a, c, r)))
        } else {
            (None, None)
        };
        Ok(Self {
            beta,
            gamma,
            kernel_coef,
            kernel_post,
        })
    }

    /// Linear predictor at scenario covariates: intercept + gated covariate
    /// terms + kernel term at the scenario distance. Random effects, latent
    /// noise, and the previous-count term are deliberately absent (plug-in at
    /// the process mean for a hypothetical outbreak).
    fn predictor(
        &self,
        row: &[f64],
        centered: &[f64],
        kernel: Option<KernelSpec>,
        distance: Option<f64>,
    ) -> Result<f64, BranchingError> {
        let mut v = row[self.beta[0]];
        for (j, &x) in centered.iter().enumerate() {
            if row[self.gamma[j]] >= 0.5 {
                v += row[self.beta[j + 1]] * x;
            }
        }
        if let (Some(spec), Some(d)) = (kernel, distance) {
            let (a_idx, c_idx, r_idx) = self.kernel_post.expect("kernel columns resolved");
            let params = KernelParams {
                a: row[a_idx],
                c: c_idx.map(|i| row[i]),
                r: r_idx.map(|i| row[i]),
            };
            v += row[self.kernel_coef.expect("kernel coef resolved")]
                * kernel_value(spec, &params, d)?;
        }
        Ok(v)
    }
}

fn scenario_inputs(
    scenario: &ScenarioSpec,
    table: &ScenarioTable,
    design: &Design,
    kernel: Option<KernelSpec>,
) -> Result<(Vec<f64>, Option<f64>), BranchingError> {
    table.validate()?;
    for key in scenario.settings.keys() {
        let known = key == DISTANCE_KEY || design.covariate_names.iter().any(|n| n == key);
        if !known {
            return Err(BranchingError::ScenarioCovariate(key.clone()));
        }
        if key == DISTANCE_KEY && kernel.is_none() {
            return Err(BranchingError::ScenarioCovariate(key.clone()));
        }
    }
    let mut centered = Vec::with_capacity(design.p());
    for (j, name) in design.covariate_names.iter().enumerate() {
        let setting = scenario
            .settings
            .get(name)
            .copied()
            .unwrap_or(CovariateSetting::Median);
        let values = table
            .entries
            .get(name)
            .ok_or_else(|| BranchingError::ScenarioCovariate(name.clone()))?;
        centered.push(values.pick(setting) - design.col_means[j]);
    }
    let distance = if kernel.is_some() {
        let setting = scenario
            .settings
            .get(DISTANCE_KEY)
            .copied()
            .unwrap_or(CovariateSetting::Median);
        let values = table
            .entries
            .get(DISTANCE_KEY)
            .ok_or_else(|| BranchingError::ScenarioCovariate(DISTANCE_KEY.into()))?;
        Some(values.pick(setting))
    } else {
        None
    };
    Ok((centered, distance))
}

fn per_draw_lambda_p(
    draws: &DrawsTable,
    scenario: &ScenarioSpec,
    table: &ScenarioTable,
    design: &Design,
    kernel: Option<KernelSpec>,
) -> Result<Vec<(f64, f64)>, BranchingError> {
    if draws.rows.is_empty() {
        return Err(BranchingError::InvalidArgument("no draws".into()));
    }
    let (centered, distance) = scenario_inputs(scenario, table, design, kernel)?;
    let rate_cols = BlockColumns::resolve(draws, "", design.p(), kernel)?;
    let zero_cols = BlockColumns::resolve(draws, "z_", design.p(), kernel)?;
    let mut out = Vec::with_capacity(draws.rows.len());
    for row in &draws.rows {
        let mu = rate_cols.predictor(row, &centered, kernel, distance)?;
        let eta = zero_cols.predictor(row, &centered, kernel, distance)?;
        // cap the log-rate so the root-finder sees a finite parameter
        let lambda = mu.min(700.0).exp();
        out.push((lambda, logistic(eta)));
    }
    Ok(out)
}

fn equal_tail(values: &[f64], level: f64) -> (f64, f64, f64) {
    let tail = (1.0 - level) / 2.0;
    (
        quantile_type7(values, 0.5),
        quantile_type7(values, tail),
        quantile_type7(values, 1.0 - tail),
    )
}

/// Posterior extinction probability under a covariate scenario, one value
/// per stored draw (whole-draw parameter vectors preserve posterior
/// correlation).
pub fn scenario_extinction(
    draws: &DrawsTable,
    scenario: &ScenarioSpec,
    table: &ScenarioTable,
    design: &Design,
    kernel: Option<KernelSpec>,
) -> Result<ExtinctionResult, BranchingError> {
    let pairs = per_draw_lambda_p(draws, scenario, table, design, kernel)?;
    let mut q_draws = Vec::with_capacity(pairs.len());
    for (lambda, p) in pairs {
        let q = extinction_poisson(lambda)?;
        q_draws.push(zip_extinction(q, p)?);
    }
    let (median, lo, hi) = equal_tail(&q_draws, 0.95);
    Ok(ExtinctionResult {
        scenario: scenario.name.clone(),
        q_draws,
        median,
        lo,
        hi,
    })
}

/// Posterior occupation-time summaries for each requested Q.
pub fn scenario_occupation(
    draws: &DrawsTable,
    scenario: &ScenarioSpec,
    table: &ScenarioTable,
    design: &Design,
    kernel: Option<KernelSpec>,
    q_list: &[u32],
) -> Result<Vec<OccupationSummary>, BranchingError> {
    let pairs = per_draw_lambda_p(draws, scenario, table, design, kernel)?;
    let mut out = Vec::with_capacity(q_list.len());
    for &q_count in q_list {
        let values: Result<Vec<f64>, BranchingError> = pairs
            .iter()
            .map(|&(lambda, _)| occupation_time(lambda, q_count))
            .collect();
        let values = values?;
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let (median, lo, hi) = equal_tail(&values, 0.95);
        out.push(OccupationSummary {
            scenario: scenario.name.clone(),
            q_count,
            mean,
            median,
            lo,
            hi,
        });
    }
    Ok(out)
}

// --- endemic/epidemic decomposition ------------------------------------------

/// Terms of the weekly mean predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MuTerm {
    Intercept,
    /// 1-based covariate index.
    Covariate(usize),
    RandomEffects,
    PrevCount,
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Endemic,
    Epidemic,
}

/// Assignment of every mu term to the endemic or epidemic component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMap {
    pub assignments: BTreeMap<MuTerm, Component>,
}

impl ComponentMap {
    pub fn validate(&self, design: &Design) -> Result<(), BranchingError> {
        let mut required = vec![
            MuTerm::Intercept,
            MuTerm::RandomEffects,
            MuTerm::PrevCount,
            MuTerm::Kernel,
        ];
        required.extend((1..=design.p()).map(MuTerm::Covariate));
        for term in required {
            if !self.assignments.contains_key(&term) {
                return Err(BranchingError::UnassignedTerm(format!("{term:?}")));
            }
        }
        Ok(())
    }

    fn component(&self, term: MuTerm) -> Component {
        self.assignments[&term]
    }
}

/// Default split: intercept, environmental covariates, and yearly effects are
/// endemic; the kernel, previous-count, and previous-week-villages terms are
/// epidemic.
pub fn default_component_map(design: &Design) -> ComponentMap {
    let mut assignments = BTreeMap::new();
    assignments.insert(MuTerm::Intercept, Component::Endemic);
    assignments.insert(MuTerm::RandomEffects, Component::Endemic);
    assignments.insert(MuTerm::PrevCount, Component::Epidemic);
    assignments.insert(MuTerm::Kernel, Component::Epidemic);
    for (j, name) in design.covariate_names.iter().enumerate() {
        let comp = if name == "villages_prev_week" {
            Component::Epidemic
        } else {
            Component::Endemic
        };
        assignments.insert(MuTerm::Covariate(j + 1), comp);
    }
    ComponentMap { assignments }
}

/// Column indices of the rate-block parameters inside a draws table.
pub struct RateDrawColumns {
    beta: Vec<usize>,
    gamma: Vec<usize>,
    ar: usize,
    b: Vec<usize>,
    kernel: Option<KernelDrawColumns>,
}

pub(crate) struct KernelDrawColumns {
    coef: usize,
    a_pre: usize,
    c_pre: Option<usize>,
    r_pre: Option<usize>,
    a_post: usize,
    c_post: Option<usize>,
    r_post: Option<usize>,
    t_change: usize,
}

impl RateDrawColumns {
    fn resolve(
        table: &DrawsTable,
        design: &Design,
        kernel: Option<KernelSpec>,
    ) -> Result<Self, BranchingError> {
        let col = |name: String| -> Result<usize, BranchingError> {
            table
                .column_index(&name)
                .map_err(|_| BranchingError::MissingColumn(name))
        };
        let beta = (0..=design.p())
            .map(|j| col(format!("beta_{j}")))
            .collect::<Result<_, _>>()?;
        let gamma = (1..=design.p())
            .map(|j| col(format!("gamma_{j}")))
            .collect::<Result<_, _>>()?;
        let b = (1..=design.n_years)
            .map(|m| col(format!("b_{m}")))
            .collect::<Result<_, _>>()?;
        let kernel = if let Some(spec) = kernel {
            let fam = spec.family();
            Some(KernelDrawColumns {
                coef: col("kernel_coef".into())?,
                a_pre: col("kernel_a_pre".into())?,
                c_pre: fam
                    .uses_shape()
                    .then(|| col("kernel_c_pre".into()))
                    .transpose()?,
                r_pre: fam
                    .uses_offset()
                    .then(|| col("kernel_r_pre".into()))
                    .transpose()?,
                a_post: col("kernel_a_post".into())?,
                c_post: fam
                    .uses_shape()
                    .then(|| col("kernel_c_post".into()))
                    .transpose()?,
                r_post: fam
                    .uses_offset()
                    .then(|| col("kernel_r_post".into()))
                    .transpose()?,
                t_change: col("kernel_t_change".into())?,
            })
        } else {
            None
        };
        Ok(Self {
            beta,
            gamma,
            ar: col("ar_coef".into())?,
            b,
            kernel,
        })
    }
}

/// Per-week endemic and epidemic parts of the mean for one draw.
pub fn decompose_draw(
    row: &[f64],
    cols: &RateDrawColumns,
    design: &Design,
    map: &ComponentMap,
    kernel: Option<KernelSpec>,
) -> Result<(Vec<f64>, Vec<f64>), BranchingError> {
    let n = design.n;
    let kern_values = match (&cols.kernel, kernel) {
        (Some(kc), Some(spec)) => {
            let change = ChangePoint {
                t_change: row[kc.t_change],
                pre: KernelParams {
                    a: row[kc.a_pre],
                    c: kc.c_pre.map(|i| row[i]),
                    r: kc.r_pre.map(|i| row[i]),
                },
                post: KernelParams {
                    a: row[kc.a_post],
                    c: kc.c_post.map(|i| row[i]),
                    r: kc.r_post.map(|i| row[i]),
                },
            };
            Some(crate::kernels::aggregate_all(
                &design.bundle,
                &design.counts,
                spec,
                &change,
            )?)
        }
        _ => None,
    };
    let mut endemic = vec![0.0; n];
    let mut epidemic = vec![0.0; n];
    for week in 1..=n {
        let i = week - 1;
        let mut parts = [0.0_f64; 2];
        let mut add = |component: Component, value: f64| {
            match component {
                Component::Endemic => parts[0] += value,
                Component::Epidemic => parts[1] += value,
            }
        };
        add(map.component(MuTerm::Intercept), row[cols.beta[0]]);
        for j in 1..=design.p() {
            if row[cols.gamma[j - 1]] >= 0.5 {
                add(
                    map.component(MuTerm::Covariate(j)),
                    row[cols.beta[j]] * design.x[(i, j)],
                );
            }
        }
        add(
            map.component(MuTerm::RandomEffects),
            row[cols.b[design.years[i] - 1]],
        );
        if week >= 2 {
            add(
                map.component(MuTerm::PrevCount),
                row[cols.ar] * f64::from(design.counts[i - 1]),
            );
            if let (Some(kv), Some(kc)) = (&kern_values, &cols.kernel) {
                add(map.component(MuTerm::Kernel), row[kc.coef] * kv[i]);
            }
        }
        endemic[i] = parts[0];
        epidemic[i] = parts[1];
    }
    Ok((endemic, epidemic))
}

/// Resolve the rate-block draw columns needed by [`decompose_draw`].
pub fn rate_draw_columns(
    table: &DrawsTable,
    design: &Design,
    kernel: Option<KernelSpec>,
) -> Result<RateDrawColumns, BranchingError> {
    RateDrawColumns::resolve(table, design, kernel)
}

/// Weekly posterior band of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct WeeklyBand {
    pub median: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionStat {
    pub component: &'static str,
    pub stat: &'static str,
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub endemic: WeeklyBand,
    pub epidemic: WeeklyBand,
    pub mu: WeeklyBand,
    /// Per-component min/median/max across weeks, summarized over draws.
    pub summary: Vec<DecompositionStat>,
}

fn band(per_week_draws: &[Vec<f64>]) -> WeeklyBand {
    let mut median = Vec::with_capacity(per_week_draws.len());
    let mut lo = Vec::with_capacity(per_week_draws.len());
    let mut hi = Vec::with_capacity(per_week_draws.len());
    for values in per_week_draws {
        let (m, l, h) = equal_tail(values, 0.95);
        median.push(m);
        lo.push(l);
        hi.push(h);
    }
    WeeklyBand { median, lo, hi }
}

/// Endemic/epidemic decomposition of the weekly mean over posterior draws.
/// The two components add to the full predictor week by week, draw by draw.
pub fn decompose_mu(
    draws: &DrawsTable,
    design: &Design,
    map: &ComponentMap,
    kernel: Option<KernelSpec>,
) -> Result<Decomposition, BranchingError> {
    if draws.rows.is_empty() {
        return Err(BranchingError::InvalidArgument("no draws".into()));
    }
    map.validate(design)?;
    let cols = RateDrawColumns::resolve(draws, design, kernel)?;
    let n = design.n;
    let m = draws.rows.len();
    let mut endemic_weeks = vec![Vec::with_capacity(m); n];
    let mut epidemic_weeks = vec![Vec::with_capacity(m); n];
    let mut mu_weeks = vec![Vec::with_capacity(m); n];
    let mut stats: [Vec<f64>; 6] = std::array::from_fn(|_| Vec::with_capacity(m));
    for row in &draws.rows {
        let (endemic, epidemic) = decompose_draw(row, &cols, design, map, kernel)?;
        let traj_stats = |v: &[f64]| {
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (min, quantile_type7(v, 0.5), max)
        };
        let (e_min, e_med, e_max) = traj_stats(&endemic);
        let (p_min, p_med, p_max) = traj_stats(&epidemic);
        stats[0].push(e_min);
        stats[1].push(e_med);
        stats[2].push(e_max);
        stats[3].push(p_min);
        stats[4].push(p_med);
        stats[5].push(p_max);
        for i in 0..n {
            endemic_weeks[i].push(endemic[i]);
            epidemic_weeks[i].push(epidemic[i]);
            mu_weeks[i].push(endemic[i] + epidemic[i]);
        }
    }
    let labels: [(&'static str, &'static str); 6] = [
        ("endemic", "min"),
        ("endemic", "median"),
        ("endemic", "max"),
        ("epidemic", "min"),
        ("epidemic", "median"),
        ("epidemic", "max"),
    ];
    let summary = labels
        .iter()
        .zip(&stats)
        .map(|(&(component, stat), values)| {
            let (median, lo, hi) = equal_tail(values, 0.95);
            DecompositionStat {
                component,
                stat,
                median,
                lo,
                hi,
            }
        })
        .collect();
    Ok(Decomposition {
        endemic: band(&endemic_weeks),
        epidemic: band(&epidemic_weeks),
        mu: band(&mu_weeks),
        summary,
    })
}
