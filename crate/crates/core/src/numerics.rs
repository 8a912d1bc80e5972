//! Numeric tolerances and fixed protocol constants shared across modules.

/// Every tolerance used by the library lives here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Numerics {
    /// Absolute tolerance on the bracket width when solving for the stability threshold.
    pub threshold_tol: f64,
    /// Maximum number of bracket doublings before the threshold search gives up.
    pub threshold_max_doublings: u32,
    /// Below this density-delay product the collision probability is evaluated by series.
    pub series_cutoff: f64,
    /// Decimal places of the density-delay product used as the row merge key.
    pub merge_decimals: i32,
    /// Fraction of epochs discarded before time-averaging fork depth.
    pub burn_in_fraction: f64,
    /// A run is flagged divergent when mean final depth exceeds this fraction of epochs.
    pub divergence_fraction: f64,
    /// Two-sided normal quantile for 95% confidence intervals.
    pub ci95_z: f64,
    /// Largest |z| accepted by the Poisson validation report.
    pub overlap_z_limit: f64,
    /// Minimum expected count per chi-squared bin; sparser tail bins are merged.
    pub chi_min_expected: f64,
    /// Floor on the observed rate seen by the difficulty controller.
    pub observed_rate_floor: f64,
}

pub const NUMERICS: Numerics = Numerics {
    threshold_tol: 1e-12,
    threshold_max_doublings: 64,
    series_cutoff: 0.5,
    merge_decimals: 9,
    burn_in_fraction: 0.1,
    divergence_fraction: 0.1,
    ci95_z: 1.96,
    overlap_z_limit: 4.0,
    chi_min_expected: 5.0,
    observed_rate_floor: 1e-300,
};

impl Default for Numerics {
    fn default() -> Self {
        NUMERICS
    }
}

/// Default master seed when none is supplied.
pub const DEFAULT_SEED: u64 = 42;
