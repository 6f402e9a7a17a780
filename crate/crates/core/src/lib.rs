//! Semi-supervised pseudo-label selection.
//!
//! Three selection policies share one training loop: a fixed confidence
//! cutoff, per-class flexible cutoffs, and flexible cutoffs combined with a
//! per-example smoothed margin (area under the margin, AUM) gate calibrated
//! on examples moved to an extra "virtual" class.
//!
//! The pieces can be used independently: [`aum`] for margins and smoothing,
//! [`thresholds`] for per-class cutoffs, [`policy`] for mask decisions,
//! [`trace`] for recording and replaying logit traces.

pub mod aum;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod policy;
pub mod seeds;
pub mod selection;
pub mod thresholds;
pub mod trace;
pub mod trainer;

pub use aum::{calibrate_gamma, margin_vector, threshold_margin, AumGate, AumTracker, LogitRecord, MarginVector};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use policy::{decide, decide_batch, MaskDecision, PolicyKind};
pub use selection::{SelectionConfig, SelectionEngine};
pub use thresholds::{flexible_thresholds, learning_status, LearningStatus, ThresholdState};
pub use trace::{replay, TraceFile, TraceRecord};
pub use trainer::{run, PassMetrics, RunOutcome};
