use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{
    aggregate_intensity, collision_probability, stationary_bound, GatingRule, StationaryBound,
};
use crate::bd_sim::{is_diverged, run_trial_stats, SystemConfig, TrialStat};
use crate::error::{Error, Result};
use crate::harness::stats::{summarize_stats, StatSummary};
use crate::numerics::{DEFAULT_SEED, NUMERICS};
use crate::rng::derive_seed;

pub const PROTOCOL_N: [u64; 11] = [20, 30, 40, 50, 75, 100, 150, 200, 300, 400, 500];
pub const PROTOCOL_DELTA: [f64; 8] = [0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0];

/// A full `n x delta` grid experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub n_values: Vec<u64>,
    pub delta_values: Vec<f64>,
    pub q: f64,
    pub gating: GatingRule,
    pub epochs: usize,
    pub trials: usize,
    pub master_seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            n_values: PROTOCOL_N.to_vec(),
            delta_values: PROTOCOL_DELTA.to_vec(),
            q: 0.5,
            gating: GatingRule::Inverse { c: 1.0 },
            epochs: 6000,
            trials: 100,
            master_seed: DEFAULT_SEED,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.delta_values.is_empty() {
            return Err(Error::config("n_values and delta_values must be nonempty"));
        }
        for cell in self.cells() {
            cell.validate()?;
        }
        Ok(())
    }

    /// Cell configurations in row-major `(n, delta)` order, each with its own seed.
    pub fn cells(&self) -> Vec<SystemConfig> {
        let mut out = Vec::with_capacity(self.n_values.len() * self.delta_values.len());
        for &n in &self.n_values {
            for &delta in &self.delta_values {
                out.push(SystemConfig {
                    n,
                    delta,
                    q: self.q,
                    gating: self.gating,
                    epochs: self.epochs,
                    trials: self.trials,
                    master_seed: derive_seed(self.master_seed, out.len() as u64),
                });
            }
        }
        out
    }
}

/// One simulated grid cell with its per-trial statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub config: SystemConfig,
    pub lambda: f64,
    pub x: f64,
    pub stats: Vec<TrialStat>,
    pub summary: StatSummary,
}

pub fn run_cell(config: SystemConfig) -> Result<CellResult> {
    let lambda = config.intensity()?;
    let stats = run_trial_stats(&config)?;
    let means: Vec<f64> = stats.iter().map(|s| s.mean_depth).collect();
    let summary = summarize_stats(&means)?;
    Ok(CellResult { x: lambda * config.delta, lambda, config, stats, summary })
}

/// Every grid cell, unmerged, in grid order.
pub fn run_sweep_cells(spec: &SweepSpec) -> Result<Vec<CellResult>> {
    spec.validate()?;
    spec.cells().into_par_iter().map(run_cell).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Smallest node count among the merged cells.
    pub n: u64,
    pub delta: f64,
    pub lambda: f64,
    pub x: f64,
    pub mean_depth: f64,
    pub std_err: f64,
    pub theory_bound: StationaryBound,
    pub stable: bool,
    /// Number of grid cells pooled into this row.
    pub trials_merged: usize,
    pub final_depth_mean: f64,
    pub diverged: bool,
}

impl SweepRow {
    pub fn ci95(&self) -> (f64, f64) {
        let half = NUMERICS.ci95_z * self.std_err;
        (self.mean_depth - half, self.mean_depth + half)
    }

    fn from_cells(cells: &[&CellResult], q: f64) -> Result<Self> {
        let head = cells[0];
        let pooled: Vec<TrialStat> = cells.iter().flat_map(|c| c.stats.iter().copied()).collect();
        let means: Vec<f64> = pooled.iter().map(|s| s.mean_depth).collect();
        let summary = summarize_stats(&means)?;
        let final_depth_mean = pooled.iter().map(|s| s.final_depth).sum::<f64>() / pooled.len() as f64;
        let p_coll = collision_probability(head.lambda, head.config.delta)?;
        Ok(SweepRow {
            n: cells.iter().map(|c| c.config.n).min().unwrap_or(head.config.n),
            delta: head.config.delta,
            lambda: head.lambda,
            x: head.x,
            mean_depth: summary.mean,
            std_err: summary.std_err,
            theory_bound: stationary_bound(p_coll, q)?,
            stable: p_coll < q,
            trials_merged: cells.len(),
            final_depth_mean,
            diverged: is_diverged(final_depth_mean, head.config.epochs),
        })
    }
}

fn merge_key(x: f64) -> i64 {
    (x * 10f64.powi(NUMERICS.merge_decimals)).round() as i64
}

/// Collapse cells into rows sorted by `x`. Under inverse gating, cells whose
/// `x` agree to the merge precision are pooled into one row.
pub fn merge_cells(cells: &[CellResult], gating: GatingRule, q: f64) -> Result<Vec<SweepRow>> {
    let mut order: Vec<&CellResult> = cells.iter().collect();
    order.sort_by(|a, b| {
        a.x.total_cmp(&b.x)
            .then(a.config.n.cmp(&b.config.n))
            .then(a.config.delta.total_cmp(&b.config.delta))
    });
    let mut rows = Vec::new();
    match gating {
        GatingRule::Inverse { .. } => {
            let mut i = 0;
            while i < order.len() {
                let key = merge_key(order[i].x);
                let j = order[i..].iter().take_while(|c| merge_key(c.x) == key).count();
                rows.push(SweepRow::from_cells(&order[i..i + j], q)?);
                i += j;
            }
        }
        GatingRule::Constant { .. } => {
            for c in order {
                rows.push(SweepRow::from_cells(&[c], q)?);
            }
        }
    }
    Ok(rows)
}

pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    let cells = run_sweep_cells(spec)?;
    merge_cells(&cells, spec.gating, spec.q)
}

/// Parameters of the constant-versus-inverse gating comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatingComparisonSpec {
    pub n_values: Vec<u64>,
    pub delta: f64,
    pub g0: f64,
    pub c: f64,
    pub q: f64,
    pub epochs: usize,
    pub trials: usize,
    pub master_seed: u64,
}

impl Default for GatingComparisonSpec {
    fn default() -> Self {
        GatingComparisonSpec {
            n_values: PROTOCOL_N.to_vec(),
            delta: 1.0,
            g0: 0.05,
            c: 1.0,
            q: 0.5,
            epochs: 6000,
            trials: 100,
            master_seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingPair {
    pub n: u64,
    pub constant: SweepRow,
    pub inverse: SweepRow,
}

/// For each `n`, one row under `Constant(g0)` and one under `Inverse(c)`,
/// both at the same `delta`. Every simulated cell has an independent seed.
pub fn gating_comparison(spec: &GatingComparisonSpec) -> Result<Vec<GatingPair>> {
    if spec.n_values.is_empty() {
        return Err(Error::config("n_values must be nonempty"));
    }
    let rules = [GatingRule::constant(spec.g0)?, GatingRule::inverse(spec.c)?];
    let configs: Vec<SystemConfig> = spec
        .n_values
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| {
            rules.iter().enumerate().map(move |(r, &gating)| SystemConfig {
                n,
                delta: spec.delta,
                q: spec.q,
                gating,
                epochs: spec.epochs,
                trials: spec.trials,
                master_seed: derive_seed(spec.master_seed, (2 * i + r) as u64),
            })
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let cells: Vec<CellResult> = configs.into_par_iter().map(run_cell).collect::<Result<_>>()?;
    cells
        .chunks(2)
        .map(|pair| {
            Ok(GatingPair {
                n: pair[0].config.n,
                constant: SweepRow::from_cells(&[&pair[0]], spec.q)?,
                inverse: SweepRow::from_cells(&[&pair[1]], spec.q)?,
            })
        })
        .collect()
}

/// Analytic density-delay product for a gating rule at `n` and `delta`.
pub fn density_delay(n: u64, rule: GatingRule, delta: f64) -> Result<f64> {
    Ok(aggregate_intensity(n, rule)? * delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bd_sim::run_trials;

    fn small(gating: GatingRule, n_values: Vec<u64>, delta_values: Vec<f64>) -> SweepSpec {
        SweepSpec { n_values, delta_values, gating, epochs: 1000, trials: 10, ..SweepSpec::default() }
    }

    #[test]
    fn defaults_are_protocol_grid() {
        let s = SweepSpec::default();
        assert_eq!(s.n_values.len() * s.delta_values.len(), 88);
        assert_eq!((s.epochs, s.trials, s.q), (6000, 100, 0.5));
    }

    #[test]
    fn rejects_empty_grids() {
        assert!(run_sweep(&small(GatingRule::Inverse { c: 1.0 }, vec![], vec![1.0])).is_err());
        assert!(run_sweep(&small(GatingRule::Inverse { c: 1.0 }, vec![10], vec![])).is_err());
        assert!(run_sweep(&small(GatingRule::Inverse { c: 1.0 }, vec![10], vec![-1.0])).is_err());
    }

    #[test]
    fn single_cell_matches_run_trials() {
        let spec = small(GatingRule::Inverse { c: 1.0 }, vec![50], vec![0.75]);
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 1);
        let summary = run_trials(&spec.cells()[0]).unwrap();
        let row = &rows[0];
        assert_eq!(row.mean_depth, summary.mean_depth);
        assert_eq!(row.std_err, summary.std_err);
        assert_eq!(row.final_depth_mean, summary.final_depth_mean);
        assert_eq!((row.n, row.delta, row.lambda, row.x, row.trials_merged), (50, 0.75, 1.0, 0.75, 1));
        assert!(row.stable);
    }

    #[test]
    fn inverse_rows_merge_by_density_delay() {
        let spec = small(GatingRule::Inverse { c: 1.0 }, vec![100, 200], vec![0.5, 1.0]);
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].x, rows[0].trials_merged), (0.5, 2));
        assert_eq!((rows[1].x, rows[1].trials_merged), (1.0, 2));
        assert_eq!(rows[0].n, 100);
    }

    #[test]
    fn constant_rows_are_not_merged() {
        // 20 * 0.05 * 1.0 == 40 * 0.05 * 0.5 == 1.0
        let spec = small(GatingRule::Constant { g0: 0.05 }, vec![20, 40], vec![0.5, 1.0]);
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.windows(2).all(|w| w[0].x <= w[1].x));
        assert!(rows.iter().all(|r| r.trials_merged == 1));
    }

    #[test]
    fn merge_key_absorbs_rounding() {
        assert_eq!(merge_key(0.1 * 3.0), merge_key(0.3));
        assert_ne!(merge_key(0.3), merge_key(0.300_000_002));
    }

    #[test]
    fn stability_flags_follow_threshold() {
        let spec = SweepSpec { epochs: 200, trials: 2, ..SweepSpec::default() };
        let x_star = crate::analytics::stability_threshold(spec.q).unwrap();
        for row in run_sweep(&spec).unwrap() {
            assert_eq!(row.stable, row.x < x_star, "x = {}", row.x);
            assert_eq!(row.theory_bound.is_finite(), row.stable);
        }
    }

    #[test]
    fn comparison_pairs_rules() {
        let spec = GatingComparisonSpec {
            n_values: vec![20, 100],
            epochs: 2000,
            trials: 20,
            ..GatingComparisonSpec::default()
        };
        let pairs = gating_comparison(&spec).unwrap();
        assert_eq!(pairs.len(), 2);
        assert!((pairs[0].constant.x - 1.0).abs() < 1e-12);
        assert!(pairs[0].constant.stable);
        assert_eq!(pairs[1].constant.x, 5.0);
        assert!(!pairs[1].constant.stable && pairs[1].constant.diverged);
        assert!(pairs.iter().all(|p| p.inverse.x == 1.0 && p.inverse.stable));
    }

    #[test]
    fn constant_gating_saturates() {
        let x = density_delay(500, GatingRule::Constant { g0: 0.05 }, 1.0).unwrap();
        assert!(collision_probability(x, 1.0).unwrap() > 0.999);
    }
}
