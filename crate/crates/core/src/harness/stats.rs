use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::NUMERICS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub n: usize,
    pub mean: f64,
    pub std_err: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    /// Set for single-sample input, where no spread can be estimated.
    pub degenerate: bool,
}

impl StatSummary {
    pub fn overlaps(&self, other: &StatSummary) -> bool {
        self.ci95_low <= other.ci95_high && other.ci95_low <= self.ci95_high
    }
}

/// Sample mean, standard error and normal-approximation 95% interval.
pub fn summarize_stats(values: &[f64]) -> Result<StatSummary> {
    if values.is_empty() {
        return Err(Error::domain("cannot summarize an empty sample"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_err = if n > 1 {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
    } else {
        0.0
    };
    let half = NUMERICS.ci95_z * std_err;
    Ok(StatSummary {
        n,
        mean,
        std_err,
        ci95_low: mean - half,
        ci95_high: mean + half,
        degenerate: n == 1,
    })
}

/// Average ranks (1-based), ties sharing their mean rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation of two equal-length samples.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::domain("spearman needs two samples of equal length >= 2"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(Error::domain("spearman undefined for a constant sample"));
    }
    Ok(cov / (va * vb).sqrt())
}
