use thiserror::Error;

use super::ChainOutput;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticError {
    #[error("need at least {needed} draws, got {got}")]
    TooFewDraws { needed: usize, got: usize },
    #[error("need at least two chains")]
    TooFewChains,
    #[error("chains have different lengths")]
    RaggedChains,
    #[error("within-chain variance is zero")]
    ZeroWithinVariance,
    #[error("no draws")]
    Empty,
    #[error("draws are constant")]
    Constant,
    #[error("`{0}` is not monitored")]
    Unmonitored(String),
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Potential scale reduction factor over equal-length chains.
pub fn gelman_rubin(chains: &[&[f64]]) -> Result<f64, DiagnosticError> {
    if chains.len() < 2 {
        return Err(DiagnosticError::TooFewChains);
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(DiagnosticError::RaggedChains);
    }
    if n < 2 {
        return Err(DiagnosticError::TooFewDraws { needed: 2, got: n });
    }
    let w = chains.iter().map(|c| variance(c)).sum::<f64>() / chains.len() as f64;
    if w <= 0.0 {
        return Err(DiagnosticError::ZeroWithinVariance);
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b = n as f64 * variance(&means);
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Ok((var_plus / w).sqrt())
}

/// Effective sample size from Geyer's initial positive sequence of
/// paired autocorrelations, clipped to `[1, n]`.
pub fn effective_sample_size(x: &[f64]) -> Result<f64, DiagnosticError> {
    let n = x.len();
    if n < 10 {
        return Err(DiagnosticError::TooFewDraws { needed: 10, got: n });
    }
    let m = mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    let gamma0 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if gamma0 <= 0.0 {
        return Err(DiagnosticError::Constant);
    }
    let rho = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
            / gamma0
    };
    let mut sum = 0.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        k += 1;
    }
    let tau = -1.0 + 2.0 * sum;
    let nf = n as f64;
    Ok(if tau > 0.0 {
        (nf / tau).clamp(1.0, nf)
    } else {
        nf
    })
}

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n − 1)p`). `sorted` must be ascending.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub quantity: String,
    pub median: f64,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    /// `None` with a single chain or no within-chain spread.
    pub rhat: Option<f64>,
    /// Sum of per-chain effective sizes.
    pub ess: f64,
}

/// Pooled summaries of every monitored quantity.
pub fn summarize(chains: &[ChainOutput]) -> Result<Vec<PosteriorSummary>, DiagnosticError> {
    let first = chains.first().ok_or(DiagnosticError::Empty)?;
    first
        .monitors
        .iter()
        .enumerate()
        .map(|(j, label)| summarize_column(chains, j, label))
        .collect()
}

/// Pooled summary of one monitored quantity.
pub fn summarize_quantity(
    chains: &[ChainOutput],
    quantity: &str,
) -> Result<PosteriorSummary, DiagnosticError> {
    let first = chains.first().ok_or(DiagnosticError::Empty)?;
    let j = first
        .monitors
        .iter()
        .position(|m| m == quantity)
        .ok_or_else(|| DiagnosticError::Unmonitored(quantity.to_string()))?;
    summarize_column(chains, j, quantity)
}

fn summarize_column(
    chains: &[ChainOutput],
    j: usize,
    label: &str,
) -> Result<PosteriorSummary, DiagnosticError> {
    let columns: Vec<Vec<f64>> = chains.iter().map(|c| c.column(j)).collect();
    let mut pooled: Vec<f64> = columns.concat();
    if pooled.is_empty() {
        return Err(DiagnosticError::Empty);
    }
    pooled.sort_by(f64::total_cmp);
    let m = mean(&pooled);
    let sd = if pooled.len() > 1 {
        variance(&pooled).sqrt()
    } else {
        0.0
    };
    let refs: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
    let rhat = gelman_rubin(&refs).ok();
    let mut ess = 0.0;
    for c in &columns {
        ess += effective_sample_size(c).unwrap_or(c.len() as f64);
    }
    Ok(PosteriorSummary {
        quantity: label.to_string(),
        median: quantile(&pooled, 0.5),
        mean: m,
        sd,
        q025: quantile(&pooled, 0.025),
        q975: quantile(&pooled, 0.975),
        rhat,
        ess,
    })
}

/// Normalized histogram of draws with a median marker.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityStrip {
    pub lower: f64,
    pub width: f64,
    pub midpoints: Vec<f64>,
    pub heights: Vec<f64>,
    pub median: f64,
}

impl DensityStrip {
    /// `Σ heights × width`, which is one up to rounding.
    pub fn mass(&self) -> f64 {
        self.heights.iter().sum::<f64>() * self.width
    }
}

/// Histogram over the range of the draws; a point mass at `v` uses the
/// range `[v − 0.5, v + 0.5]`.
pub fn density_strip(draws: &[f64], bins: usize) -> Result<DensityStrip, DiagnosticError> {
    if draws.is_empty() {
        return Err(DiagnosticError::Empty);
    }
    let bins = bins.max(10);
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut lo, mut hi) = (sorted[0], sorted[sorted.len() - 1]);
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in &sorted {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = sorted.len() as f64;
    Ok(DensityStrip {
        lower: lo,
        width,
        midpoints: (0..bins).map(|b| lo + (b as f64 + 0.5) * width).collect(),
        heights: counts.iter().map(|c| *c as f64 / (n * width)).collect(),
        median: quantile(&sorted, 0.5),
    })
}
