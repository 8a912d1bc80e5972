//! Difficulty-adjustment feedback on the per-node proposal rate.
//!
//! After each fixed-length window the controller compares the observed event
//! rate with its target and rescales the per-node gate by the clamped ratio
//! `target / observed`. It only ever sees event counts; the node count stays
//! hidden, yet the fixed point is `gate = target / n`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::analytics::collision_probability;
use crate::bd_sim::{burn_in, is_diverged, ForkProcess, TrialSummary};
use crate::error::{Error, Result};
use crate::harness::stats::summarize_stats;
use crate::numerics::NUMERICS;
use crate::rng::stream_rng;

pub const DEFAULT_CLAMP_FACTOR: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    /// Current per-node proposal rate.
    pub gate: f64,
    pub target_rate: f64,
    /// Length of one adjustment window in time units.
    pub window: f64,
    /// Largest multiplicative change per adjustment; must exceed 1.
    pub clamp_factor: f64,
}

impl ControllerState {
    pub fn new(gate: f64, target_rate: f64, window: f64, clamp_factor: f64) -> Result<Self> {
        let state = ControllerState { gate, target_rate, window, clamp_factor };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} must be finite and > 0, got {v}")))
            }
        };
        positive("gate", self.gate)?;
        positive("target_rate", self.target_rate)?;
        positive("window", self.window)?;
        if !(self.clamp_factor.is_finite() && self.clamp_factor > 1.0) {
            return Err(Error::domain(format!("clamp_factor must exceed 1, got {}", self.clamp_factor)));
        }
        Ok(())
    }

    /// Gate after observing events at `observed_rate`.
    pub fn retarget(&self, observed_rate: f64) -> f64 {
        let ratio = self.target_rate / observed_rate.max(NUMERICS.observed_rate_floor);
        self.gate * ratio.clamp(1.0 / self.clamp_factor, self.clamp_factor)
    }
}

/// New gate from `observed_events` counted over `window_span` time units.
///
/// An empty window applies the full upward clamp.
pub fn adjust_gate(state: &ControllerState, observed_events: u64, window_span: f64) -> Result<f64> {
    state.validate()?;
    if !(window_span.is_finite() && window_span > 0.0) {
        return Err(Error::domain(format!("window_span must be finite and > 0, got {window_span}")));
    }
    Ok(state.retarget(observed_events as f64 / window_span))
}

/// Participation change: from `window` on, `n` nodes are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub window: usize,
    pub n: u64,
}

/// How the per-window event count is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountModel {
    #[default]
    Poisson,
    /// Substitute the expected count; removes sampling noise from the loop.
    Expected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSpec {
    pub n_schedule: Vec<ScheduleStep>,
    pub delta: f64,
    pub target_rate: f64,
    pub q: f64,
    pub windows: usize,
    pub window_span: f64,
    pub clamp_factor: f64,
    /// Starting gate; defaults to `target_rate`, the single-node guess.
    pub initial_gate: Option<f64>,
    /// Birth-death epochs simulated under each window's collision probability.
    pub epochs_per_window: usize,
    pub count_model: CountModel,
    pub seed: u64,
}

impl Default for ControlSpec {
    fn default() -> Self {
        ControlSpec {
            n_schedule: vec![ScheduleStep { window: 0, n: 100 }],
            delta: 1.0,
            target_rate: 1.0,
            q: 0.5,
            windows: 200,
            window_span: 2016.0,
            clamp_factor: DEFAULT_CLAMP_FACTOR,
            initial_gate: None,
            epochs_per_window: 100,
            count_model: CountModel::Poisson,
            seed: crate::numerics::DEFAULT_SEED,
        }
    }
}

impl ControlSpec {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .n_schedule
            .first()
            .ok_or_else(|| Error::config("participation schedule is empty"))?;
        if first.window != 0 {
            return Err(Error::config("participation schedule must start at window 0"));
        }
        if self.n_schedule.iter().any(|s| s.n == 0) {
            return Err(Error::config("every scheduled node count must be at least 1"));
        }
        if self.n_schedule.windows(2).any(|w| w[0].window >= w[1].window) {
            return Err(Error::config("schedule windows must be strictly increasing"));
        }
        if self.windows == 0 {
            return Err(Error::config("windows must be at least 1"));
        }
        if self.epochs_per_window == 0 {
            return Err(Error::config("epochs_per_window must be at least 1"));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::config(format!("delta must be finite and > 0, got {}", self.delta)));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::config(format!("q must lie in (0, 1], got {}", self.q)));
        }
        ControllerState::new(self.initial_gate(), self.target_rate, self.window_span, self.clamp_factor)?;
        Ok(())
    }

    pub fn initial_gate(&self) -> f64 {
        self.initial_gate.unwrap_or(self.target_rate)
    }

    /// Node count in effect during `window`.
    pub fn n_at(&self, window: usize) -> u64 {
        self.n_schedule
            .iter()
            .take_while(|s| s.window <= window)
            .last()
            .map_or(self.n_schedule[0].n, |s| s.n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlledRun {
    /// Gate in effect during each window.
    pub gate_series: Vec<f64>,
    /// Aggregate intensity `n * gate` during each window.
    pub intensity_series: Vec<f64>,
    pub observed_events: Vec<f64>,
    /// Mean fork depth over each window's epochs.
    pub window_mean_depth: Vec<f64>,
    pub n_schedule: Vec<u64>,
    /// Time average after burn-in; the standard error is taken over per-window means.
    pub fork_summary: TrialSummary,
}

impl ControlledRun {
    pub fn windows(&self) -> usize {
        self.gate_series.len()
    }

    /// Mean gate over windows `range`.
    pub fn mean_gate(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.gate_series[range];
        slice.iter().sum::<f64>() / slice.len() as f64
    }
}

pub fn run_controlled(spec: &ControlSpec) -> Result<ControlledRun> {
    spec.validate()?;
    let mut state =
        ControllerState::new(spec.initial_gate(), spec.target_rate, spec.window_span, spec.clamp_factor)?;
    let mut count_rng = stream_rng(spec.seed, 0);
    let mut fork_rng = stream_rng(spec.seed, 1);

    let mut run = ControlledRun {
        gate_series: Vec::with_capacity(spec.windows),
        intensity_series: Vec::with_capacity(spec.windows),
        observed_events: Vec::with_capacity(spec.windows),
        window_mean_depth: Vec::with_capacity(spec.windows),
        n_schedule: Vec::with_capacity(spec.windows),
        fork_summary: TrialSummary {
            trials: 1,
            epochs: 0,
            mean_depth: 0.0,
            std_err: 0.0,
            ci95_low: 0.0,
            ci95_high: 0.0,
            final_depth_mean: 0.0,
            diverged: false,
        },
    };

    let total_epochs = spec.windows * spec.epochs_per_window;
    let start = burn_in(total_epochs);
    let mut depth = 0u32;
    let mut epoch = 0usize;
    let (mut tail_sum, mut tail_len) = (0.0, 0usize);

    for w in 0..spec.windows {
        let n = spec.n_at(w);
        let intensity = n as f64 * state.gate;
        let expected = intensity * spec.window_span;
        let observed = match spec.count_model {
            CountModel::Expected => expected,
            CountModel::Poisson => sample_poisson(expected, &mut count_rng)?,
        };

        let process = ForkProcess::new(collision_probability(intensity, spec.delta)?, spec.q)?;
        let mut window_sum = 0.0;
        for _ in 0..spec.epochs_per_window {
            depth = process.step(depth, &mut fork_rng);
            epoch += 1;
            window_sum += f64::from(depth);
            if epoch >= start {
                tail_sum += f64::from(depth);
                tail_len += 1;
            }
        }

        run.gate_series.push(state.gate);
        run.intensity_series.push(intensity);
        run.observed_events.push(observed);
        run.window_mean_depth.push(window_sum / spec.epochs_per_window as f64);
        run.n_schedule.push(n);

        state.gate = state.retarget(observed / spec.window_span);
    }

    let first_window = (start - 1) / spec.epochs_per_window;
    let batch = summarize_stats(&run.window_mean_depth[first_window..])?;
    let final_depth = f64::from(depth);
    run.fork_summary = TrialSummary {
        trials: 1,
        epochs: total_epochs,
        mean_depth: tail_sum / tail_len as f64,
        std_err: batch.std_err,
        ci95_low: batch.ci95_low,
        ci95_high: batch.ci95_high,
        final_depth_mean: final_depth,
        diverged: is_diverged(final_depth, total_epochs),
    };
    Ok(run)
}

fn sample_poisson(mean: f64, rng: &mut impl Rng) -> Result<f64> {
    if mean <= 0.0 {
        return Ok(0.0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::domain(format!("Poisson mean {mean}: {e}")))?;
    Ok(dist.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn state() -> ControllerState {
        ControllerState::new(0.01, 1.0, 100.0, 4.0).unwrap()
    }

    #[test]
    fn on_target_keeps_gate() {
        assert_eq!(adjust_gate(&state(), 100, 100.0).unwrap(), 0.01);
    }

    #[test]
    fn double_rate_halves_gate() {
        assert_abs_diff_eq!(adjust_gate(&state(), 200, 100.0).unwrap(), 0.005, epsilon = 1e-18);
    }

    #[test]
    fn empty_window_applies_full_upward_clamp() {
        assert_eq!(adjust_gate(&state(), 0, 100.0).unwrap(), 0.04);
    }

    #[test]
    fn large_excess_applies_downward_clamp() {
        assert_eq!(adjust_gate(&state(), 100_000, 100.0).unwrap(), 0.0025);
    }

    #[test]
    fn rejects_bad_state() {
        assert!(ControllerState::new(0.0, 1.0, 1.0, 4.0).is_err());
        assert!(ControllerState::new(1.0, 1.0, 1.0, 1.0).is_err());
        assert!(adjust_gate(&state(), 5, 0.0).is_err());
    }

    #[test]
    fn schedule_lookup() {
        let spec = ControlSpec {
            n_schedule: vec![ScheduleStep { window: 0, n: 10 }, ScheduleStep { window: 5, n: 20 }],
            ..ControlSpec::default()
        };
        assert_eq!(spec.n_at(0), 10);
        assert_eq!(spec.n_at(4), 10);
        assert_eq!(spec.n_at(5), 20);
        assert_eq!(spec.n_at(500), 20);
    }

    #[test]
    fn rejects_bad_schedules() {
        let bad = |s: Vec<ScheduleStep>| ControlSpec { n_schedule: s, ..ControlSpec::default() }.validate().is_err();
        assert!(bad(vec![]));
        assert!(bad(vec![ScheduleStep { window: 1, n: 10 }]));
        assert!(bad(vec![ScheduleStep { window: 0, n: 0 }]));
        assert!(bad(vec![ScheduleStep { window: 0, n: 5 }, ScheduleStep { window: 0, n: 6 }]));
    }

    #[test]
    fn fixed_point_holds_without_noise() {
        let n = 25;
        let spec = ControlSpec {
            n_schedule: vec![ScheduleStep { window: 0, n }],
            initial_gate: Some(1.0 / n as f64),
            count_model: CountModel::Expected,
            windows: 50,
            ..ControlSpec::default()
        };
        let run = run_controlled(&spec).unwrap();
        assert!(run.gate_series.iter().all(|&g| (g - 0.04).abs() < 1e-15));
    }

    #[test]
    fn noiseless_convergence_is_monotone() {
        for (n, init) in [(80u64, 1.0), (10, 1e-4)] {
            let spec = ControlSpec {
                n_schedule: vec![ScheduleStep { window: 0, n }],
                initial_gate: Some(init),
                count_model: CountModel::Expected,
                windows: 30,
                ..ControlSpec::default()
            };
            let run = run_controlled(&spec).unwrap();
            let target = 1.0 / n as f64;
            let dist: Vec<f64> = run.gate_series.iter().map(|g| (g - target).abs()).collect();
            assert!(dist.windows(2).all(|w| w[1] <= w[0]));
            assert!(dist.last().unwrap() / target < 1e-12);
        }
    }

    #[test]
    fn fixed_point_with_noise_stays_close() {
        let spec = ControlSpec {
            n_schedule: vec![ScheduleStep { window: 0, n: 40 }],
            initial_gate: Some(1.0 / 40.0),
            windows: 100,
            ..ControlSpec::default()
        };
        let run = run_controlled(&spec).unwrap();
        // per-window relative noise is about 1/sqrt(2016), roughly 2.2%
        assert!(run.gate_series.iter().all(|&g| (g * 40.0 - 1.0).abs() < 0.15));
    }

    #[test]
    fn realized_density_stays_within_clamp_band() {
        let spec = ControlSpec {
            n_schedule: vec![
                ScheduleStep { window: 0, n: 50 },
                ScheduleStep { window: 40, n: 100 },
                ScheduleStep { window: 80, n: 60 },
            ],
            initial_gate: Some(1.0 / 50.0),
            delta: 0.5,
            windows: 120,
            ..ControlSpec::default()
        };
        let run = run_controlled(&spec).unwrap();
        let (lo, hi) = (spec.target_rate * spec.delta / 4.0, spec.target_rate * spec.delta * 4.0);
        for &lam in &run.intensity_series[1..] {
            let x = lam * spec.delta;
            assert!(lo <= x && x <= hi, "{x}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = ControlSpec { windows: 20, ..ControlSpec::default() };
        assert_eq!(run_controlled(&spec).unwrap(), run_controlled(&spec).unwrap());
    }

    #[test]
    fn low_density_regime_has_negligible_forks() {
        // target * delta = 0.01: P_coll = 4.9668e-5, bound = 9.935e-5
        let spec = ControlSpec {
            n_schedule: vec![ScheduleStep { window: 0, n: 1000 }],
            initial_gate: Some(1.0 / 600.0 / 1000.0),
            target_rate: 1.0 / 600.0,
            delta: 6.0,
            window_span: 2016.0 * 600.0,
            windows: 100,
            epochs_per_window: 1000,
            ..ControlSpec::default()
        };
        let run = run_controlled(&spec).unwrap();
        assert!(run.fork_summary.mean_depth < 0.01, "{}", run.fork_summary.mean_depth);
        assert!(!run.fork_summary.diverged);
    }
}
