//! Continuous-time Poisson arrivals and an empirical collision estimator.
//!
//! Arrivals are generated by inverse-CDF exponential gaps drawn from a seeded
//! ChaCha8 stream. The estimator tiles `[0, horizon)` into disjoint windows of
//! length `delta`, so per-window counts are i.i.d. Poisson(`lambda * delta`).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::numerics::NUMERICS;
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalLog {
    /// Strictly increasing timestamps in `[0, horizon)`.
    pub times: Vec<f64>,
    pub horizon: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl ArrivalLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapEstimate {
    pub windows: u64,
    pub collision_windows: u64,
    pub fraction: f64,
    pub std_err: f64,
}

impl OverlapEstimate {
    pub(crate) fn from_counts(counts: &[u32]) -> Self {
        let windows = counts.len() as u64;
        let collision_windows = counts.iter().filter(|&&c| c >= 2).count() as u64;
        let (fraction, std_err) = if windows > 0 {
            let f = collision_windows as f64 / windows as f64;
            (f, (f * (1.0 - f) / windows as f64).sqrt())
        } else {
            (0.0, 0.0)
        };
        OverlapEstimate { windows, collision_windows, fraction, std_err }
    }
}

/// Poisson arrivals of intensity `lambda` on `[0, horizon)`.
pub fn generate_arrivals(lambda: f64, horizon: f64, seed: u64) -> Result<ArrivalLog> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::domain(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::domain(format!("horizon must be finite and > 0, got {horizon}")));
    }
    let mut times = Vec::new();
    if lambda > 0.0 {
        times.reserve((lambda * horizon * 1.01) as usize + 16);
        let mut rng = stream_rng(seed, 0);
        let mut t = 0.0f64;
        loop {
            let u: f64 = rng.random();
            let next = t - (1.0 - u).ln() / lambda;
            // a gap below one ulp of t would repeat the timestamp
            t = if next > t { next } else { t.next_up() };
            if t >= horizon {
                break;
            }
            times.push(t);
        }
    }
    Ok(ArrivalLog { times, horizon, lambda, seed })
}

/// Arrival counts for each of the `floor(horizon / delta)` disjoint windows.
pub fn window_counts(log: &ArrivalLog, delta: f64) -> Result<Vec<u32>> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::domain(format!("delta must be finite and > 0, got {delta}")));
    }
    if delta > log.horizon {
        return Err(Error::domain(format!("delta {delta} exceeds horizon {}", log.horizon)));
    }
    // relative slack so that horizon = k * delta yields k windows despite rounding
    let windows = (log.horizon / delta * (1.0 + 4.0 * f64::EPSILON)).floor() as usize;
    let mut counts = vec![0u32; windows];
    for &t in &log.times {
        let idx = (t / delta).floor() as usize;
        if let Some(c) = counts.get_mut(idx) {
            *c += 1;
        }
    }
    Ok(counts)
}

/// Fraction of windows holding two or more arrivals.
pub fn measure_overlap(log: &ArrivalLog, delta: f64) -> Result<OverlapEstimate> {
    Ok(OverlapEstimate::from_counts(&window_counts(log, delta)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub fraction: f64,
    pub std_err: f64,
    pub windows: u64,
}

/// One overlap estimate per `delta`, each from an independent arrival log
/// seeded by `derive_seed(seed, index)`.
pub fn empirical_collision_curve(
    lambda: f64,
    deltas: &[f64],
    horizon: f64,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if deltas.is_empty() {
        return Err(Error::domain("delta list must be nonempty"));
    }
    deltas
        .par_iter()
        .enumerate()
        .map(|(i, &delta)| {
            let log = generate_arrivals(lambda, horizon, derive_seed(seed, i as u64))?;
            let est = measure_overlap(&log, delta)?;
            Ok(CurvePoint { x: lambda * delta, fraction: est.fraction, std_err: est.std_err, windows: est.windows })
        })
        .collect()
}

/// Chi-squared goodness of fit of window counts against Poisson(`mean`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonFit {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub observed: Vec<u64>,
    pub expected: Vec<f64>,
}

/// Bins are counts 0, 1, 2, 3 and >= 4. Tail bins with expected count below
/// the configured minimum are folded into their left neighbour.
pub fn poisson_goodness_of_fit(counts: &[u32], mean: f64) -> Result<PoissonFit> {
    if counts.is_empty() {
        return Err(Error::domain("no windows to test"));
    }
    if !(mean.is_finite() && mean >= 0.0) {
        return Err(Error::domain(format!("Poisson mean must be finite and >= 0, got {mean}")));
    }
    const BINS: usize = 5;
    let total = counts.len() as f64;
    let mut observed = vec![0u64; BINS];
    for &c in counts {
        observed[(c as usize).min(BINS - 1)] += 1;
    }
    let mut pmf = Vec::with_capacity(BINS);
    let mut term = (-mean).exp();
    for k in 0..BINS - 1 {
        pmf.push(term);
        term *= mean / (k + 1) as f64;
    }
    pmf.push((1.0 - pmf.iter().sum::<f64>()).max(0.0));
    let mut expected: Vec<f64> = pmf.iter().map(|p| p * total).collect();

    while expected.len() > 1 && *expected.last().unwrap() < NUMERICS.chi_min_expected {
        let (e, o) = (expected.pop().unwrap(), observed.pop().unwrap());
        *expected.last_mut().unwrap() += e;
        *observed.last_mut().unwrap() += o;
    }

    let dof = expected.len() - 1;
    if dof == 0 {
        return Ok(PoissonFit { statistic: 0.0, dof, p_value: 1.0, observed, expected });
    }
    let statistic: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(&o, &e)| {
            let d = o as f64 - e;
            d * d / e
        })
        .sum();
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::domain(e.to_string()))?;
    let p_value = 1.0 - dist.cdf(statistic);
    Ok(PoissonFit { statistic, dof, p_value, observed, expected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::collision_probability;

    #[test]
    fn zero_rate_gives_empty_log() {
        let log = generate_arrivals(0.0, 100.0, 1).unwrap();
        assert!(log.is_empty());
        let est = measure_overlap(&log, 1.0).unwrap();
        assert_eq!((est.windows, est.fraction, est.std_err), (100, 0.0, 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(generate_arrivals(-1.0, 10.0, 0).is_err());
        assert!(generate_arrivals(1.0, 0.0, 0).is_err());
        let log = generate_arrivals(1.0, 10.0, 0).unwrap();
        assert!(measure_overlap(&log, 0.0).is_err());
        assert!(measure_overlap(&log, -1.0).is_err());
        assert!(measure_overlap(&log, 11.0).is_err());
        assert!(empirical_collision_curve(1.0, &[], 10.0, 0).is_err());
    }

    #[test]
    fn arrivals_are_ordered_and_in_range() {
        let log = generate_arrivals(3.0, 1000.0, 9).unwrap();
        assert!(log.times.windows(2).all(|w| w[0] < w[1]));
        assert!(log.times.iter().all(|&t| (0.0..1000.0).contains(&t)));
    }

    #[test]
    fn count_matches_poisson_mean() {
        let log = generate_arrivals(1.0, 1e5, 17).unwrap();
        let n = log.len() as f64;
        assert!((n - 1e5).abs() <= 3.0 * 1e5f64.sqrt(), "{n}");
    }

    #[test]
    fn same_seed_same_log() {
        assert_eq!(generate_arrivals(2.0, 500.0, 5).unwrap(), generate_arrivals(2.0, 500.0, 5).unwrap());
        assert_ne!(generate_arrivals(2.0, 500.0, 5).unwrap().times, generate_arrivals(2.0, 500.0, 6).unwrap().times);
    }

    #[test]
    fn window_tiling_counts_exact_multiples() {
        let log = ArrivalLog { times: vec![0.1, 0.2, 0.35, 0.9], horizon: 1.0, lambda: 4.0, seed: 0 };
        assert_eq!(window_counts(&log, 0.1).unwrap().len(), 10);
        assert_eq!(window_counts(&log, 0.25).unwrap(), vec![2, 1, 0, 1]);
        let est = measure_overlap(&log, 0.25).unwrap();
        assert_eq!((est.windows, est.collision_windows, est.fraction), (4, 1, 0.25));
        assert!((est.std_err - (0.25f64 * 0.75 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn overlap_matches_closed_form() {
        // x = 1: 1 - 2/e = 0.26424111765711536
        let log = generate_arrivals(1.0, 1e5, 3).unwrap();
        let est = measure_overlap(&log, 1.0).unwrap();
        assert_eq!(est.windows, 100_000);
        assert!((est.fraction - 0.264_241_117_657_115_4).abs() <= 3.0 * est.std_err);

        // x = 0.1: 0.0046788401604444695
        let log = generate_arrivals(0.1, 1e6, 4).unwrap();
        let est = measure_overlap(&log, 1.0).unwrap();
        assert!((est.fraction - 0.004_678_840_160_444_469).abs() <= 3.0 * est.std_err);
    }

    #[test]
    fn curve_single_entry_matches_direct_measurement() {
        let pts = empirical_collision_curve(1.0, &[0.5], 1e4, 11).unwrap();
        let log = generate_arrivals(1.0, 1e4, derive_seed(11, 0)).unwrap();
        let est = measure_overlap(&log, 0.5).unwrap();
        assert_eq!(pts[0].fraction, est.fraction);
        assert_eq!(pts[0].std_err, est.std_err);
    }

    #[test]
    fn curve_tracks_closed_form() {
        let deltas = [0.1, 0.5, 1.0];
        let pts = empirical_collision_curve(1.0, &deltas, 2e5, 21).unwrap();
        for p in &pts {
            let exact = collision_probability(p.x, 1.0).unwrap();
            assert!((p.fraction - exact).abs() <= 3.0 * p.std_err, "x={} {} vs {exact}", p.x, p.fraction);
        }
        let overlay: Vec<f64> = pts.iter().map(|p| collision_probability(p.x, 1.0).unwrap()).collect();
        assert!(overlay.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn chi_squared_accepts_poisson_counts() {
        let log = generate_arrivals(1.678, 1e5, 8).unwrap();
        let counts = window_counts(&log, 1.0).unwrap();
        let fit = poisson_goodness_of_fit(&counts, 1.678).unwrap();
        assert_eq!(fit.dof, 4);
        assert!(fit.p_value > 1e-3, "{fit:?}");
    }

    #[test]
    fn chi_squared_rejects_wrong_mean() {
        let log = generate_arrivals(1.0, 1e5, 8).unwrap();
        let counts = window_counts(&log, 1.0).unwrap();
        assert!(poisson_goodness_of_fit(&counts, 1.2).unwrap().p_value < 1e-3);
    }

    #[test]
    fn chi_squared_merges_sparse_tail() {
        let fit = poisson_goodness_of_fit(&[0; 100], 0.0).unwrap();
        assert_eq!((fit.dof, fit.p_value), (0, 1.0));
        let log = generate_arrivals(0.1, 1e5, 2).unwrap();
        let fit = poisson_goodness_of_fit(&window_counts(&log, 1.0).unwrap(), 0.1).unwrap();
        assert!(fit.expected.iter().all(|&e| e >= NUMERICS.chi_min_expected));
        assert_eq!(fit.observed.iter().sum::<u64>(), 100_000);
    }
}
