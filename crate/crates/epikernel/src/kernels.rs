//! Transmission kernel families and the piecewise weekly aggregation.
//!
//! Each family maps an inter-farm distance (km) to a transmission influence.
//! Families are interchangeable strategies behind [`KernelFamily`], registered
//! by the single-letter names used on the command line. A two-regime change
//! point switches kernel parameters at a sampled week.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DistanceBundle;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid kernel parameters for family {family}: {detail}")]
    InvalidParams { family: char, detail: String },
    #[error("distance must be finite and >= 0, got {0}")]
    InvalidDistance(f64),
    #[error("no distance range stored for week {week}")]
    MissingRange { week: usize },
    #[error("change point {t_change} outside (1, {n})")]
    InvalidChangePoint { t_change: f64, n: usize },
    #[error("unknown kernel family {0:?}")]
    UnknownFamily(String),
}

/// Kernel parameters: `a` is the scale (always required, > 0), `c` the decay
/// shape (families A-C), `r` the long-range offset (family C only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
}

impl KernelParams {
    pub fn scale_only(a: f64) -> Self {
        Self { a, c: None, r: None }
    }

    pub fn with_shape(a: f64, c: f64) -> Self {
        Self {
            a,
            c: Some(c),
            r: None,
        }
    }

    pub fn with_offset(a: f64, c: f64, r: f64) -> Self {
        Self {
            a,
            c: Some(c),
            r: Some(r),
        }
    }
}

/// One of the six kernel families of the transmission model.
pub trait KernelFamily: Send + Sync {
    /// Single-letter registry name.
    fn name(&self) -> &'static str;
    /// Whether the family uses the decay shape `c`.
    fn uses_shape(&self) -> bool;
    /// Whether the family uses the additive offset `r`.
    fn uses_offset(&self) -> bool;
    /// Kernel value at distance `d`; params must already be validated.
    fn evaluate(&self, params: &KernelParams, d: f64) -> f64;

    fn validate(&self, params: &KernelParams) -> Result<(), KernelError> {
        let fam = self.name().chars().next().unwrap_or('?');
        let err = |detail: String| KernelError::InvalidParams {
            family: fam,
            detail,
        };
        if !(params.a.is_finite() && params.a > 0.0) {
            return Err(err(format!("a must be finite and > 0, got {}", params.a)));
        }
        match (self.uses_shape(), params.c) {
            (true, None) => return Err(err("missing decay shape c".into())),
            (false, Some(_)) => return Err(err("decay shape c not used by this family".into())),
            (true, Some(c)) if !c.is_finite() => {
                return Err(err(format!("c must be finite, got {c}")))
            }
            _ => {}
        }
        match (self.uses_offset(), params.r) {
            (true, None) => return Err(err("missing long-range offset r".into())),
            (false, Some(_)) => return Err(err("offset r only valid for family C".into())),
            (true, Some(r)) if !(r.is_finite() && r >= 0.0) => {
                return Err(err(format!("r must be finite and >= 0, got {r}")))
            }
            _ => {}
        }
        Ok(())
    }
}

/// Fat-tailed power-law decay `(1 + d/a)^{-c}`.
struct PowerLaw;
/// Stretched-exponential decay `exp{-(d/a)^c}`.
struct StretchedExp;
/// Stretched-exponential decay plus a constant long-range offset `r`.
struct StretchedExpOffset;
/// Exponential-density form `a exp(-a d)`.
struct ExpDensity;
/// Gaussian form `a/sqrt(pi) exp(-a^2 d^2)`.
struct GaussianDensity;
/// Square-root exponential form `a/4 exp(-sqrt(a d))`.
struct RootExp;

impl KernelFamily for PowerLaw {
    fn name(&self) -> &'static str {
        "A"
    }
    fn uses_shape(&self) -> bool {
        true
    }
    fn uses_offset(&self) -> bool {
        false
    }
    fn evaluate(&self, p: &KernelParams, d: f64) -> f64 {
        (1.0 + d / p.a).powf(-p.c.unwrap())
    }
}

impl KernelFamily for StretchedExp {
    fn name(&self) -> &'static str {
        "B"
    }
    fn uses_shape(&self) -> bool {
        true
    }
    fn uses_offset(&self) -> bool {
        false
    }
    fn evaluate(&self, p: &KernelParams, d: f64) -> f64 {
        (-(d / p.a).powf(p.c.unwrap())).exp()
    }
}

impl KernelFamily for StretchedExpOffset {
    fn name(&self) -> &'static str {
        "C"
    }
    fn uses_shape(&self) -> bool {
        true
    }
    fn uses_offset(&self) -> bool {
        true
    }
    fn evaluate(&self, p: &KernelParams, d: f64) -> f64 {
        (-(d / p.a).powf(p.c.unwrap())).exp() + p.r.unwrap()
    }
}

impl KernelFamily for ExpDensity {
    fn name(&self) -> &'static str {
        "D"
    }
    fn uses_shape(&self) -> bool {
        false
    }
    fn uses_offset(&self) -> bool {
        false
    }
    fn evaluate(&self, p: &KernelParams, d: f64) -> f64 {
        p.a * (-p.a * d).exp()
    }
}

impl KernelFamily for GaussianDensity {
    fn name(&self) -> &'static str {
        "E"
    }
    fn uses_shape(&self) -> bool {
        false
    }
    fn uses_offset(&self) -> bool {
        false
    }
    fn evaluate(&self, p: &KernelParams, d: f64) -> f64 {
        p.a / std::f64::consts::PI.sqrt() * (-(p.a * p.a) * (d * d)).exp()
    }
}

impl KernelFamily for RootExp {
    fn name(&self) -> &'static str {
        "F"
    }
    fn uses_shape(&self) -> bool {
        false
    }
    fn uses_offset(&self) -> bool {
        false
    }
    fn evaluate(&self, p: &KernelParams, d: f64) -> f64 {
        p.a / 4.0 * (-(p.a * d).sqrt()).exp()
    }
}

static POWER_LAW: PowerLaw = PowerLaw;
static STRETCHED_EXP: StretchedExp = StretchedExp;
static STRETCHED_EXP_OFFSET: StretchedExpOffset = StretchedExpOffset;
static EXP_DENSITY: ExpDensity = ExpDensity;
static GAUSSIAN_DENSITY: GaussianDensity = GaussianDensity;
static ROOT_EXP: RootExp = RootExp;

/// All registered kernel families, in registry-name order.
pub static KERNEL_REGISTRY: [&dyn KernelFamily; 6] = [
    &POWER_LAW,
    &STRETCHED_EXP,
    &STRETCHED_EXP_OFFSET,
    &EXP_DENSITY,
    &GAUSSIAN_DENSITY,
    &ROOT_EXP,
];

/// Look a kernel family up by its registry name.
pub fn kernel_by_name(name: &str) -> Option<&'static dyn KernelFamily> {
    KERNEL_REGISTRY
        .iter()
        .copied()
        .find(|k| k.name().eq_ignore_ascii_case(name))
}

/// Serializable handle for one kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelSpec {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl KernelSpec {
    pub fn family(self) -> &'static dyn KernelFamily {
        match self {
            KernelSpec::A => &POWER_LAW,
            KernelSpec::B => &STRETCHED_EXP,
            KernelSpec::C => &STRETCHED_EXP_OFFSET,
            KernelSpec::D => &EXP_DENSITY,
            KernelSpec::E => &GAUSSIAN_DENSITY,
            KernelSpec::F => &ROOT_EXP,
        }
    }

    pub fn parse(name: &str) -> Result<Self, KernelError> {
        match name.to_ascii_uppercase().as_str() {
            "A" => Ok(KernelSpec::A),
            "B" => Ok(KernelSpec::B),
            "C" => Ok(KernelSpec::C),
            "D" => Ok(KernelSpec::D),
            "E" => Ok(KernelSpec::E),
            "F" => Ok(KernelSpec::F),
            other => Err(KernelError::UnknownFamily(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        self.family().name()
    }
}

/// Evaluate one kernel family at a single distance, validating inputs.
pub fn kernel_value(spec: KernelSpec, params: &KernelParams, d: f64) -> Result<f64, KernelError> {
    let family = spec.family();
    family.validate(params)?;
    if !(d.is_finite() && d >= 0.0) {
        return Err(KernelError::InvalidDistance(d));
    }
    Ok(family.evaluate(params, d))
}

/// Two-regime kernel parameterization with a change point on the week axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangePoint {
    pub t_change: f64,
    pub pre: KernelParams,
    pub post: KernelParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Pre,
    Post,
}

impl ChangePoint {
    pub fn validate(&self, n: usize) -> Result<(), KernelError> {
        if !(self.t_change.is_finite() && self.t_change > 1.0 && self.t_change < n as f64) {
            return Err(KernelError::InvalidChangePoint {
                t_change: self.t_change,
                n,
            });
        }
        Ok(())
    }

    pub fn params_for(&self, week: usize) -> &KernelParams {
        match regime_index(week, self) {
            Regime::Pre => &self.pre,
            Regime::Post => &self.post,
        }
    }
}

/// Regime of a week: weeks at or after the change point are `Post`
/// (the step-function convention, step(0) = 1).
pub fn regime_index(week: usize, cp: &ChangePoint) -> Regime {
    if (week as f64) < cp.t_change {
        Regime::Pre
    } else {
        Regime::Post
    }
}

/// Weekly kernel aggregation.
///
/// With cases in both the current and previous week, the arithmetic mean of
/// the kernel over the stored cross-distances; with cases after a case-free
/// week, the kernel at 1 km; with a case-free current week, the kernel at
/// `d_min`. The regime is the current week's.
pub fn aggregate_kernel(
    bundle: &DistanceBundle,
    week: usize,
    spec: KernelSpec,
    cp: &ChangePoint,
    y_curr: u32,
    y_prev: u32,
) -> Result<f64, KernelError> {
    let family = spec.family();
    family.validate(&cp.pre)?;
    family.validate(&cp.post)?;
    let params = cp.params_for(week);
    if y_curr == 0 {
        return Ok(family.evaluate(params, bundle.d_min));
    }
    if y_prev == 0 {
        return Ok(family.evaluate(params, 1.0));
    }
    let range = bundle
        .week_distances(week)
        .map_err(|_| KernelError::MissingRange { week })?;
    let sum: f64 = range.iter().map(|&d| family.evaluate(params, d)).sum();
    Ok(sum / range.len() as f64)
}

/// Aggregate kernel values for every week 2..=n (index 0 of the result is
/// unused and set to 0).
pub fn aggregate_all(
    bundle: &DistanceBundle,
    counts: &[u32],
    spec: KernelSpec,
    cp: &ChangePoint,
) -> Result<Vec<f64>, KernelError> {
    let n = counts.len();
    let mut out = vec![0.0; n];
    for week in 2..=n {
        out[week - 1] = aggregate_kernel(bundle, week, spec, cp, counts[week - 1], counts[week - 2])?;
    }
    Ok(out)
}
