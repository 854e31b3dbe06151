//! Summary statistics over timing series.
//!
//! Variance is the sample variance (divisor n - 1) and is 0 for fewer than
//! two values. The median of an even-length series is the mean of the two
//! middle values.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub mean: f64,
    pub variance: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Geometric mean of positive values; `None` when empty or any value is not
/// positive.
pub fn geomean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() || xs.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
        return None;
    }
    Some((xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp())
}

pub fn summarize(xs: &[f64]) -> Summary {
    Summary {
        median: median(xs),
        mean: mean(xs),
        variance: variance(xs),
    }
}

/// Mean of the last ⌈n/2⌉ values.
pub fn peak(series: &[u64]) -> f64 {
    let n = series.len();
    let window = &series[n - n.div_ceil(2)..];
    window.iter().map(|&x| x as f64).sum::<f64>() / window.len().max(1) as f64
}
