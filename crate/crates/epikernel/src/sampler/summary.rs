//! Posterior summarization: medians, equal-tail intervals (type-7 quantiles),
//! inclusion probabilities, mean deviance, and split-chain scale reduction.

use super::PosteriorDraws;
use crate::num::{quantile_type7, quantile_type7_sorted};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
    /// Split-chain potential scale reduction; NaN when undefined.
    pub rhat: f64,
}

/// Per-parameter medians and equal-tail credible intervals at `level`.
pub fn summarize(draws: &PosteriorDraws, level: f64) -> Vec<ParamSummary> {
    assert!((0.0..1.0).contains(&level) && level > 0.0, "level in (0,1)");
    let tail = (1.0 - level) / 2.0;
    let mut out = Vec::with_capacity(draws.names.len());
    for (idx, name) in draws.names.iter().enumerate() {
        let mut col: Vec<f64> = draws.draws.iter().map(|r| r[idx]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let sd = if col.len() > 1 {
            (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (col.len() as f64 - 1.0))
                .sqrt()
        } else {
            0.0
        };
        let rhat = split_rhat_column(draws, idx);
        col.sort_by(|a, b| a.partial_cmp(b).expect("NaN draw"));
        out.push(ParamSummary {
            name: name.clone(),
            mean,
            sd,
            median: quantile_type7_sorted(&col, 0.5),
            lo: quantile_type7_sorted(&col, tail),
            hi: quantile_type7_sorted(&col, 1.0 - tail),
            rhat,
        });
    }
    out
}

/// Posterior inclusion probabilities of the selectable coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionRow {
    pub covariate: String,
    pub rate: f64,
    pub zero: f64,
}

pub fn inclusion_probabilities(draws: &PosteriorDraws) -> Vec<InclusionRow> {
    assert!(!draws.draws.is_empty(), "no draws");
    let mean_of = |name: &str| -> f64 {
        let col = draws
            .column(name)
            .unwrap_or_else(|| panic!("missing column {name}"));
        col.iter().sum::<f64>() / col.len() as f64
    };
    draws
        .covariate_names
        .iter()
        .enumerate()
        .map(|(j, cov)| InclusionRow {
            covariate: cov.clone(),
            rate: mean_of(&format!("gamma_{}", j + 1)),
            zero: mean_of(&format!("z_gamma_{}", j + 1)),
        })
        .collect()
}

/// Mean deviance and its naive Monte-Carlo standard error.
pub fn mean_deviance(draws: &PosteriorDraws) -> (f64, f64) {
    assert!(!draws.deviance.is_empty(), "no draws");
    let m = draws.deviance.len() as f64;
    let mean = draws.deviance.iter().sum::<f64>() / m;
    let var = draws
        .deviance
        .iter()
        .map(|d| (d - mean) * (d - mean))
        .sum::<f64>()
        / (m - 1.0).max(1.0);
    (mean, (var / m).sqrt())
}

/// Split-chain potential scale reduction of one stored column.
fn split_rhat_column(draws: &PosteriorDraws, idx: usize) -> f64 {
    let per_chain = draws.per_chain;
    if per_chain < 4 {
        return f64::NAN;
    }
    let half = per_chain / 2;
    let mut halves: Vec<(usize, usize)> = Vec::new();
    for c in 0..draws.chains as usize {
        let start = c * per_chain;
        halves.push((start, half));
        halves.push((start + half, half));
    }
    let m = halves.len() as f64;
    let n = half as f64;
    let means: Vec<f64> = halves
        .iter()
        .map(|&(s, len)| {
            draws.draws[s..s + len].iter().map(|r| r[idx]).sum::<f64>() / len as f64
        })
        .collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(&(s, len), &mu)| {
            draws.draws[s..s + len]
                .iter()
                .map(|r| (r[idx] - mu) * (r[idx] - mu))
                .sum::<f64>()
                / (n - 1.0)
        })
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Posterior quantile of an arbitrary vector (type-7 rule).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    quantile_type7(values, p)
}
