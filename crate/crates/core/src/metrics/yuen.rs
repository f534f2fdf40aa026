use serde::{Deserialize, Serialize};

use super::tdist::two_sided_p;
use super::{aggregate, MetricError};

/// Default trim proportion per tail.
pub const DEFAULT_TRIM_GAMMA: f64 = 0.2;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub group_a: String,
    pub group_b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub std_a: f64,
    pub std_b: f64,
    pub trimmed_mean_a: f64,
    pub trimmed_mean_b: f64,
    pub trim_gamma: f64,
    pub t_stat: f64,
    pub deg_freedom: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
    /// Zero pooled winsorized variance; t and p were set by convention.
    pub degenerate: bool,
}

impl StatResult {
    pub fn with_labels(mut self, a: impl Into<String>, b: impl Into<String>) -> Self {
        self.group_a = a.into();
        self.group_b = b.into();
        self
    }
}

struct Trimmed {
    mean: f64,
    /// Squared standard error term (n-1)·s_w² / (h·(h-1)).
    d: f64,
    h: usize,
}

fn trimmed(sample: &[f64], gamma: f64) -> Result<Trimmed, MetricError> {
    let n = sample.len();
    let g = ((gamma * n as f64) + 1e-9).floor() as usize;
    if n < 5 || n < 2 * g + 2 {
        return Err(MetricError::InsufficientSample { n, trimmed: g });
    }
    let h = n - 2 * g;
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mean = sorted[g..n - g].iter().sum::<f64>() / h as f64;
    let (lo, hi) = (sorted[g], sorted[n - g - 1]);
    let wins: Vec<f64> = sorted.iter().map(|v| v.clamp(lo, hi)).collect();
    let wmean = wins.iter().sum::<f64>() / n as f64;
    let wvar = wins.iter().map(|v| (v - wmean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let d = (n - 1) as f64 * wvar / (h * (h - 1)) as f64;
    Ok(Trimmed { mean, d, h })
}

/// Yuen's two-sample test on trimmed means with Welch degrees of freedom.
///
/// With `gamma = 0` this is Welch's unequal-variance t-test.
pub fn yuen_welch(x: &[f64], y: &[f64], gamma: f64, alpha: f64) -> Result<StatResult, MetricError> {
    if !(0.0..=0.25).contains(&gamma) {
        return Err(MetricError::InvalidTrim(gamma));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let tx = trimmed(x, gamma)?;
    let ty = trimmed(y, gamma)?;
    let ax = aggregate(x)?;
    let ay = aggregate(y)?;

    let pooled = tx.d + ty.d;
    let diff = tx.mean - ty.mean;
    let (t_stat, deg_freedom, p_value, degenerate) = if pooled > 0.0 {
        let t = diff / pooled.sqrt();
        let df = pooled * pooled / (tx.d * tx.d / (tx.h - 1) as f64 + ty.d * ty.d / (ty.h - 1) as f64);
        (t, df, two_sided_p(t, df), false)
    } else {
        let df = (tx.h + ty.h - 2) as f64;
        if diff == 0.0 {
            (0.0, df, 1.0, true)
        } else {
            (f64::MAX.copysign(diff), df, 0.0, true)
        }
    };

    Ok(StatResult {
        group_a: String::new(),
        group_b: String::new(),
        mean_a: ax.mean,
        mean_b: ay.mean,
        std_a: ax.std,
        std_b: ay.std,
        trimmed_mean_a: tx.mean,
        trimmed_mean_b: ty.mean,
        trim_gamma: gamma,
        t_stat,
        deg_freedom,
        p_value,
        alpha,
        significant: p_value < alpha,
        degenerate,
    })
}
