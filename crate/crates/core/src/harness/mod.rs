//! Experiment orchestration: grid sweeps, the gating comparison, Poisson
//! validation, summary statistics, configuration files and table output.

pub mod config;
pub mod emit;
pub mod stats;
pub mod sweep;
pub mod validate;

pub use config::{load_json, load_schedule};
pub use emit::{emit, emit_gnuplot, Destination, Format, Record};
pub use stats::{spearman, summarize_stats, StatSummary};
pub use sweep::{
    gating_comparison, run_sweep, run_sweep_cells, CellResult, GatingComparisonSpec, GatingPair, SweepRow,
    SweepSpec, PROTOCOL_DELTA, PROTOCOL_N,
};
pub use validate::{validate_poisson, PoissonCheckRow, PoissonReport};
