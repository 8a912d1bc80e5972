//! Fork stability under propagation delay.
//!
//! Closed-form collision and fork-depth relations for exclusive state
//! adoption under Poisson proposal arrivals, a birth-death fork-depth
//! simulator, a continuous-time arrival validator, a difficulty-adjustment
//! controller, and the sweep harness that ties them together.
//!
//! ```
//! use forkscale::analytics::{collision_probability, stability_threshold};
//!
//! let x_star = stability_threshold(0.5).unwrap();
//! assert!((x_star - 1.678).abs() < 1e-3);
//! assert!((collision_probability(x_star, 1.0).unwrap() - 0.5).abs() < 1e-9);
//! ```

pub mod analytics;
pub mod bd_sim;
pub mod controller;
pub mod error;
pub mod event_sim;
pub mod harness;
pub mod numerics;
pub mod rng;

pub use analytics::{
    aggregate_intensity, collision_probability, collision_probability_approx, expected_drift,
    stability_threshold, stationary_bound, CollisionStats, GatingRule, StationaryBound,
};
pub use bd_sim::{run_trial, run_trials, ForkProcess, ForkTrajectory, SystemConfig, TrialSummary};
pub use controller::{adjust_gate, run_controlled, ControlSpec, ControlledRun, ControllerState};
pub use error::{Error, Result};
pub use event_sim::{empirical_collision_curve, generate_arrivals, measure_overlap, ArrivalLog, OverlapEstimate};
pub use numerics::{Numerics, DEFAULT_SEED, NUMERICS};
