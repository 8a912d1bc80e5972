//! Fixtures shared by the criterion benchmarks.

/// Density-delay products spanning the stable, near-threshold and saturated regimes.
pub const X_GRID: [f64; 6] = [0.01, 0.1, 0.5, 1.0, 1.678, 5.0];

/// Resolution probabilities used for threshold solves.
pub const Q_GRID: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];
