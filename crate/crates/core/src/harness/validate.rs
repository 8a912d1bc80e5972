use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::collision_probability;
use crate::error::{Error, Result};
use crate::event_sim::{generate_arrivals, poisson_goodness_of_fit, window_counts, OverlapEstimate};
use crate::numerics::NUMERICS;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonCheckRow {
    pub x: f64,
    pub windows: u64,
    pub empirical: f64,
    pub analytic: f64,
    pub std_err: f64,
    pub z: f64,
    pub chi_squared: f64,
    pub chi_dof: usize,
    pub chi_p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonReport {
    pub rows: Vec<PoissonCheckRow>,
    /// All |z| within the configured limit.
    pub pass: bool,
}

/// Simulate `windows` unit-length windows at intensity `x` for each grid
/// point and compare the collision fraction with the closed form.
pub fn validate_poisson(xs: &[f64], windows: u64, seed: u64) -> Result<PoissonReport> {
    if xs.is_empty() {
        return Err(Error::domain("x grid must be nonempty"));
    }
    if windows == 0 {
        return Err(Error::domain("windows must be at least 1"));
    }
    let rows: Vec<PoissonCheckRow> = xs
        .par_iter()
        .enumerate()
        .map(|(i, &x)| check_point(x, windows, derive_seed(seed, i as u64)))
        .collect::<Result<_>>()?;
    let pass = rows.iter().all(|r| r.z.abs() <= NUMERICS.overlap_z_limit);
    Ok(PoissonReport { rows, pass })
}

fn check_point(x: f64, windows: u64, seed: u64) -> Result<PoissonCheckRow> {
    let analytic = collision_probability(x, 1.0)?;
    let log = generate_arrivals(x, windows as f64, seed)?;
    let counts = window_counts(&log, 1.0)?;
    let fit = poisson_goodness_of_fit(&counts, x)?;
    let est = OverlapEstimate::from_counts(&counts);
    let diff = est.fraction - analytic;
    let z = if est.std_err > 0.0 {
        diff / est.std_err
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    };
    Ok(PoissonCheckRow {
        x,
        windows: est.windows,
        empirical: est.fraction,
        analytic,
        std_err: est.std_err,
        z,
        chi_squared: fit.statistic,
        chi_dof: fit.dof,
        chi_p_value: fit.p_value,
    })
}
