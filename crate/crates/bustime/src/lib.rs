//! Bus travel time prediction from raw, irregularly sampled GPS traces.
//!
//! The pipeline maps GPS points onto route distance, normalizes rides into
//! cumulative space-time trajectories per bus stop, and fits penalized-spline
//! additive travel-time models (with an optional per-ride random intercept)
//! for every stop. A kernel-regression baseline and a statistical evaluation
//! harness round out the toolkit; the `bustime` binary drives the whole flow.

// Negated float comparisons are NaN guards (`!(a < b)` also catches NaN,
// `a >= b` does not); index loops here touch several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod basis;
pub mod cli;
pub mod csvio;
pub mod eval;
pub mod fit;
pub mod geometry;
pub mod kernel;
pub mod mixed;
pub mod model;
pub mod rng;
pub mod synth;
pub mod time;
pub mod trajectory;

pub use geometry::{build_route, filter_points, infer_direction, project_to_route, RouteGeometry};
pub use time::Timestamp;
pub use trajectory::{build_history, interpolate_time_at, normalize_at_stop, HistorySet};
