//! Monte Carlo simulation of the birth-death fork-depth walk.
//!
//! Each decision epoch draws an extension `X ~ Bernoulli(p_coll)` and a
//! resolution `Y ~ Bernoulli(q)` independently and updates
//! `F' = max(0, F + X - Y)`, starting from `F = 0`.

use rand::distr::{Bernoulli, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{aggregate_intensity, collision_probability, GatingRule};
use crate::error::{Error, Result};
use crate::harness::stats::summarize_stats;
use crate::numerics::{DEFAULT_SEED, NUMERICS};
use crate::rng::{stream_rng, SimRng};

/// One experiment point: system size, delay, resolution, gating and protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub n: u64,
    pub delta: f64,
    pub q: f64,
    pub gating: GatingRule,
    pub epochs: usize,
    pub trials: usize,
    pub master_seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            n: 100,
            delta: 1.0,
            q: 0.5,
            gating: GatingRule::Inverse { c: 1.0 },
            epochs: 6000,
            trials: 100,
            master_seed: DEFAULT_SEED,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n must be at least 1"));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::config(format!("delta must be finite and > 0, got {}", self.delta)));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::config(format!("q must lie in (0, 1], got {}", self.q)));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        self.gating.validate()
    }

    pub fn intensity(&self) -> Result<f64> {
        aggregate_intensity(self.n, self.gating)
    }

    pub fn collision_probability(&self) -> Result<f64> {
        collision_probability(self.intensity()?, self.delta)
    }

    pub fn process(&self) -> Result<ForkProcess> {
        self.validate()?;
        ForkProcess::new(self.collision_probability()?, self.q)
    }
}

/// The per-epoch birth and resolution probabilities of the walk.
#[derive(Debug, Clone, Copy)]
pub struct ForkProcess {
    extend: Bernoulli,
    resolve: Bernoulli,
    p_extend: f64,
    p_resolve: f64,
}

impl ForkProcess {
    /// Both probabilities may take any value in `[0, 1]`.
    pub fn new(p_extend: f64, p_resolve: f64) -> Result<Self> {
        let extend = Bernoulli::new(p_extend)
            .map_err(|_| Error::domain(format!("extension probability {p_extend} outside [0, 1]")))?;
        let resolve = Bernoulli::new(p_resolve)
            .map_err(|_| Error::domain(format!("resolution probability {p_resolve} outside [0, 1]")))?;
        Ok(ForkProcess { extend, resolve, p_extend, p_resolve })
    }

    pub fn p_extend(&self) -> f64 {
        self.p_extend
    }

    pub fn p_resolve(&self) -> f64 {
        self.p_resolve
    }

    /// One epoch from `depth`.
    #[inline]
    pub fn step(&self, depth: u32, rng: &mut SimRng) -> u32 {
        let x = self.extend.sample(rng);
        let y = self.resolve.sample(rng);
        match (x, y) {
            (true, false) => depth + 1,
            (false, true) => depth.saturating_sub(1),
            _ => depth,
        }
    }

    /// Depths `F_0 = 0, F_1, ..., F_epochs`.
    pub fn trajectory(&self, epochs: usize, rng: &mut SimRng) -> Vec<u32> {
        let mut depths = Vec::with_capacity(epochs + 1);
        let mut depth = 0;
        depths.push(depth);
        for _ in 0..epochs {
            depth = self.step(depth, rng);
            depths.push(depth);
        }
        depths
    }
}

/// Identifies the random stream a trajectory was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSeed {
    pub master: u64,
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForkTrajectory {
    pub depths: Vec<u32>,
    pub seed: TrialSeed,
}

impl ForkTrajectory {
    pub fn epochs(&self) -> usize {
        self.depths.len() - 1
    }

    pub fn final_depth(&self) -> u32 {
        *self.depths.last().expect("trajectory includes F_0")
    }

    /// Time-averaged depth after the burn-in window.
    pub fn time_average(&self) -> f64 {
        let start = burn_in(self.epochs());
        let tail = &self.depths[start..];
        tail.iter().map(|&d| f64::from(d)).sum::<f64>() / tail.len() as f64
    }

    pub fn stat(&self) -> TrialStat {
        TrialStat { mean_depth: self.time_average(), final_depth: f64::from(self.final_depth()) }
    }
}

/// First epoch index included in time averages.
pub fn burn_in(epochs: usize) -> usize {
    ((epochs as f64 * NUMERICS.burn_in_fraction).floor() as usize).clamp(1, epochs.max(1))
}

/// Per-trial reduction of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialStat {
    pub mean_depth: f64,
    pub final_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub epochs: usize,
    /// Time-averaged depth after burn-in, averaged over trials.
    pub mean_depth: f64,
    pub std_err: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub final_depth_mean: f64,
    pub diverged: bool,
}

impl TrialSummary {
    pub fn from_stats(stats: &[TrialStat], epochs: usize) -> Result<Self> {
        let means: Vec<f64> = stats.iter().map(|s| s.mean_depth).collect();
        let summary = summarize_stats(&means)?;
        let final_depth_mean = stats.iter().map(|s| s.final_depth).sum::<f64>() / stats.len() as f64;
        Ok(TrialSummary {
            trials: stats.len(),
            epochs,
            mean_depth: summary.mean,
            std_err: summary.std_err,
            ci95_low: summary.ci95_low,
            ci95_high: summary.ci95_high,
            final_depth_mean,
            diverged: is_diverged(final_depth_mean, epochs),
        })
    }
}

pub fn is_diverged(final_depth_mean: f64, epochs: usize) -> bool {
    final_depth_mean > NUMERICS.divergence_fraction * epochs as f64
}

/// Trajectory for trial `trial_index`, drawn from ChaCha stream `trial_index`
/// under `config.master_seed`.
pub fn run_trial(config: &SystemConfig, trial_index: usize) -> Result<ForkTrajectory> {
    if trial_index >= config.trials {
        return Err(Error::domain(format!(
            "trial index {trial_index} out of range for {} trials",
            config.trials
        )));
    }
    let process = config.process()?;
    Ok(trial_with(&process, config.epochs, config.master_seed, trial_index as u64))
}

fn trial_with(process: &ForkProcess, epochs: usize, master: u64, stream: u64) -> ForkTrajectory {
    let mut rng = stream_rng(master, stream);
    ForkTrajectory { depths: process.trajectory(epochs, &mut rng), seed: TrialSeed { master, stream } }
}

/// Per-trial statistics in trial order. Trials run on the rayon pool; the
/// result does not depend on the number of workers.
pub fn run_trial_stats(config: &SystemConfig) -> Result<Vec<TrialStat>> {
    let process = config.process()?;
    Ok((0..config.trials as u64)
        .into_par_iter()
        .map(|t| trial_with(&process, config.epochs, config.master_seed, t).stat())
        .collect())
}

pub fn run_trials(config: &SystemConfig) -> Result<TrialSummary> {
    let stats = run_trial_stats(config)?;
    TrialSummary::from_stats(&stats, config.epochs)
}
