//! Per-stop travel-time model bank.
//!
//! For every stop k = 0..K-1 of a route, a model of cumulative travel time
//! beyond that stop is trained on the stop's normalized trajectory history.
//! Three model kinds are supported: the basic additive model (distance and
//! departure-time smooths plus their tensor interaction), the extended model
//! (adds a weekend effect with separate weekday/weekend distance smooths and
//! the previous bus's travel time as a linear feature), and the mixed model
//! (extended model plus a per-ride random intercept). Stops with scarce data
//! fall back to a plain linear model.

mod bank;
mod design;
mod io;

pub use bank::{
    build_histories, last_bus_feature, predict_travel_time, train_bank, weekend_feature,
    AdditiveModel, BusState, FallbackModel, MixedInfo, ModelBank, StopDiagnostics, StopModel,
    StopModelVariant,
};
pub use design::{assemble_training, build_row, Assembled, FeatureValues, ImputeTable, SmoothRole, TermLayout};
pub use io::{load_bank, save_bank};

use thiserror::Error;

use crate::basis::{BasisError, BasisKind};
use crate::csvio::CsvError;
use crate::fit::FitError;
use crate::mixed::MixedError;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Bam,
    Eam,
    Amm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Bam => "BAM",
            ModelKind::Eam => "EAM",
            ModelKind::Amm => "AMM",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        match s.to_ascii_uppercase().as_str() {
            "BAM" => Some(ModelKind::Bam),
            "EAM" => Some(ModelKind::Eam),
            "AMM" => Some(ModelKind::Amm),
            _ => None,
        }
    }

    /// Whether the model uses the weekend and previous-bus features.
    pub fn extended(self) -> bool {
        !matches!(self, ModelKind::Bam)
    }
}

/// Declarative description of how stop models are built.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub basis: BasisKind,
    /// Number of equally spaced knots in departure-time space.
    pub time_knots: usize,
    /// Grid points per smoothness parameter.
    pub lambda_grid_points: usize,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// Minimum trajectories for a full spline model.
    pub n_min: usize,
    /// Minimum observation rows for a full spline model.
    pub r_min: usize,
    /// Use every observation of the test bus for the random-intercept
    /// prediction; false restores first-observation-only behavior.
    pub blup_all_observations: bool,
    /// Optional isotonic post-pass on predicted cumulative times.
    pub isotonic: bool,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            basis: BasisKind::Cubic,
            time_knots: 5,
            lambda_grid_points: 7,
            lambda_lo: 1e-4,
            lambda_hi: 1e4,
            n_min: 8,
            r_min: 60,
            blup_all_observations: true,
            isotonic: false,
        }
    }
}

/// Raw feature tuple for one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRow {
    /// Meters beyond the anchoring stop.
    pub dist: f64,
    /// Departure time of day in hours [0, 24).
    pub time_h: f64,
    pub weekend: bool,
    /// Cumulative travel time of the previous bus at `dist`, minutes.
    pub t_last: Option<f64>,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("stop {k} is untrainable: {reason}")]
    UntrainableStop { k: usize, reason: String },
    #[error("stop index {0} out of range: bank has models for stops 0..{1}")]
    StopIndex(usize, usize),
    #[error("model needs at least one observed travel time for the random intercept")]
    NoObservations,
    #[error("history is empty")]
    EmptyHistory,
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Mixed(#[from] MixedError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error("{path}:{line}: bad model file: {reason}")]
    BadModelFile { path: std::path::PathBuf, line: usize, reason: String },
}
