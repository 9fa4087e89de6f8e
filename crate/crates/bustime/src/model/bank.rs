//! Training the per-stop model bank and serving predictions from it.

use rayon::prelude::*;

use crate::fit::{self, DesignMatrix, LambdaGrid, PenalizedFit, TermBlock};
use crate::mixed;
use crate::model::design::{
    assemble_training, build_row, FeatureValues, ImputeTable, TermLayout,
};
use crate::model::{ModelError, ModelKind, ModelSpec, MODEL_FORMAT_VERSION};
use crate::time::Timestamp;
use crate::trajectory::{build_history, interpolate_time_at, HistorySet, ProjectedRide};
use crate::RouteGeometry;

/// 1 on Saturday or Sunday by the local calendar, else 0.
pub fn weekend_feature(instant: Timestamp) -> u8 {
    u8::from(instant.is_weekend())
}

/// Cumulative travel time of the last bus that passed the stop strictly
/// before `instant`, interpolated at `dist`. Absent when there is no earlier
/// bus or its trajectory ends before `dist`.
pub fn last_bus_feature(history: &HistorySet, instant: Timestamp, dist: f64) -> Option<f64> {
    let prev = history.last_before(instant)?;
    interpolate_time_at(prev, dist).ok()
}

#[derive(Debug, Clone)]
pub struct MixedInfo {
    pub sigma2_b: f64,
    pub sigma2_eps: f64,
    pub boundary: bool,
    /// Adjusted R^2 with training random intercepts in the fitted values.
    pub adj_r2: f64,
}

#[derive(Debug, Clone)]
pub struct AdditiveModel {
    pub layout: TermLayout,
    pub fit: PenalizedFit,
    /// Present for the mixed kind.
    pub mixed: Option<MixedInfo>,
    pub tlast_impute: ImputeTable,
}

/// Plain linear model used when a stop's training data are scarce:
/// intercept + a1 dist + a2 dist*weekend + a3 time + a4 dist*time.
#[derive(Debug, Clone, PartialEq)]
pub struct FallbackModel {
    pub intercept: f64,
    pub alpha: [f64; 4],
}

impl FallbackModel {
    pub fn predict(&self, dist: f64, weekend: f64, time_h: f64) -> f64 {
        self.intercept
            + self.alpha[0] * dist
            + self.alpha[1] * dist * weekend
            + self.alpha[2] * time_h
            + self.alpha[3] * dist * time_h
    }
}

#[derive(Debug, Clone)]
pub enum StopModelVariant {
    Additive(Box<AdditiveModel>),
    Fallback(FallbackModel),
    Untrainable { reason: String },
}

#[derive(Debug, Clone, Default)]
pub struct StopDiagnostics {
    pub skips: Vec<(String, usize)>,
    pub dropped_missing_tlast: usize,
    pub weekend_dropped: bool,
    pub tlast_imputed_predictions: usize,
}

#[derive(Debug, Clone)]
pub struct StopModel {
    pub k: usize,
    pub stop_distance_m: f64,
    pub n_traj: usize,
    pub n_rows: usize,
    pub variant: StopModelVariant,
    pub diagnostics: StopDiagnostics,
}

impl StopModel {
    /// Reported fit quality: the mixed-model value when present.
    pub fn adj_r2(&self) -> Option<f64> {
        match &self.variant {
            StopModelVariant::Additive(m) => {
                Some(m.mixed.as_ref().map(|x| x.adj_r2).unwrap_or(m.fit.adj_r2))
            }
            _ => None,
        }
    }
}

/// Trained models for every stop k = 0..K-1 of one route.
#[derive(Debug, Clone)]
pub struct ModelBank {
    pub format_version: u32,
    pub route_id: String,
    pub spec: ModelSpec,
    pub window_days: usize,
    /// Absolute stop distances p_0..p_K.
    pub stop_distances: Vec<f64>,
    pub stops: Vec<StopModel>,
}

impl ModelBank {
    pub fn stop(&self, k: usize) -> Result<&StopModel, ModelError> {
        self.stops.get(k).ok_or(ModelError::StopIndex(k, self.stops.len()))
    }
}

/// Normalize the rides at every stop k = 0..K-1.
pub fn build_histories(
    rides: &[ProjectedRide],
    route: &RouteGeometry,
    window: (Timestamp, Timestamp),
) -> Result<Vec<HistorySet>, ModelError> {
    (0..route.k_max())
        .map(|k| {
            build_history(rides, route, k, window)
                .map_err(|e| ModelError::UntrainableStop { k, reason: e.to_string() })
        })
        .collect()
}

/// Train one stop model from its history.
fn train_stop(
    history: &HistorySet,
    route: &RouteGeometry,
    spec: &ModelSpec,
) -> Result<StopModel, ModelError> {
    let k = history.stop_index;
    let mut diagnostics = StopDiagnostics {
        skips: history.skips.iter().map(|(r, c)| (r.to_string(), *c)).collect(),
        ..Default::default()
    };
    let n_traj = history.len();
    if n_traj == 0 {
        return Ok(StopModel {
            k,
            stop_distance_m: history.stop_distance,
            n_traj: 0,
            n_rows: 0,
            variant: StopModelVariant::Untrainable { reason: "no usable trajectories".into() },
            diagnostics,
        });
    }

    let assembled = match assemble_training(history, route, spec) {
        Ok(a) => a,
        Err(ModelError::EmptyHistory) => {
            return Ok(StopModel {
                k,
                stop_distance_m: history.stop_distance,
                n_traj,
                n_rows: 0,
                variant: StopModelVariant::Untrainable {
                    reason: "no rows after feature construction".into(),
                },
                diagnostics,
            })
        }
        Err(e) => return Err(e),
    };
    let n_rows = assembled.design.n_rows();
    diagnostics.dropped_missing_tlast = assembled.dropped_missing_tlast;
    diagnostics.weekend_dropped = assembled.weekend_dropped;

    if assembled.n_traj_used < spec.n_min || n_rows < spec.r_min {
        let variant = match train_fallback(history) {
            Some(fb) => StopModelVariant::Fallback(fb),
            None => StopModelVariant::Untrainable { reason: "too few rows for the fallback".into() },
        };
        return Ok(StopModel {
            k,
            stop_distance_m: history.stop_distance,
            n_traj: assembled.n_traj_used,
            n_rows,
            variant,
            diagnostics,
        });
    }

    let grid = LambdaGrid::log_spaced(
        assembled.layout.n_lambdas(),
        spec.lambda_grid_points,
        spec.lambda_lo,
        spec.lambda_hi,
    );
    let fit = fit::optimize_lambdas(&assembled.design, &assembled.penalties, &grid)?;
    let (fit, mixed_info) = if spec.kind == ModelKind::Amm {
        let m = mixed::fit_mixed_with_fixed(
            &assembled.design,
            &assembled.groups,
            &assembled.penalties,
            fit,
        )?;
        let info = MixedInfo {
            sigma2_b: m.sigma2_b,
            sigma2_eps: m.sigma2_eps,
            boundary: m.boundary,
            adj_r2: m.adj_r2,
        };
        (m.base, Some(info))
    } else {
        (fit, None)
    };

    Ok(StopModel {
        k,
        stop_distance_m: history.stop_distance,
        n_traj: assembled.n_traj_used,
        n_rows,
        variant: StopModelVariant::Additive(Box::new(AdditiveModel {
            layout: assembled.layout,
            fit,
            mixed: mixed_info,
            tlast_impute: assembled.tlast_impute,
        })),
        diagnostics,
    })
}

fn train_fallback(history: &HistorySet) -> Option<FallbackModel> {
    let (rows, _) = super::design::training_features(history, false);
    if rows.len() < 5 {
        return None;
    }
    let n = rows.len();
    let x = nalgebra::DMatrix::from_fn(n, 5, |i, j| {
        let f = &rows[i].0;
        let we = f64::from(u8::from(f.weekend));
        match j {
            0 => 1.0,
            1 => f.dist,
            2 => f.dist * we,
            3 => f.time_h,
            _ => f.dist * f.time_h,
        }
    });
    let y = nalgebra::DVector::from_fn(n, |i, _| rows[i].1);
    let design = DesignMatrix::new(
        x,
        y,
        vec![TermBlock { name: "fallback".into(), cols: 0..5, centered: false }],
    )
    .ok()?;
    let sol = fit::solve_penalized(&design, &[], &[]).ok()?;
    Some(FallbackModel {
        intercept: sol.beta[0],
        alpha: [sol.beta[1], sol.beta[2], sol.beta[3], sol.beta[4]],
    })
}

/// Train the full bank: one stop model per k, fitted independently in
/// parallel. Stops that cannot be trained stay in the bank as explicit gaps.
pub fn train_bank(
    route: &RouteGeometry,
    histories: &[HistorySet],
    spec: &ModelSpec,
    window_days: usize,
) -> Result<ModelBank, ModelError> {
    let stops: Result<Vec<StopModel>, ModelError> =
        histories.par_iter().map(|h| train_stop(h, route, spec)).collect();
    Ok(ModelBank {
        format_version: MODEL_FORMAT_VERSION,
        route_id: route.route_id.clone(),
        spec: spec.clone(),
        window_days,
        stop_distances: route.stops.clone(),
        stops: stops?,
    })
}

/// The current bus as seen from stop k: its interpolated passage instant and
/// the (dist, T) observations made beyond the stop so far.
#[derive(Debug, Clone)]
pub struct BusState {
    pub departure: Timestamp,
    pub observed: Vec<(f64, f64)>,
}

/// Predict cumulative travel times (minutes from stop k) at the target
/// distances beyond stop k.
///
/// The previous-bus feature is interpolated from `tlast_history` when
/// available and imputed from the training table otherwise. For the mixed
/// kind the bus's own observations provide the random-intercept correction;
/// at least one observation is required.
pub fn predict_travel_time(
    bank: &ModelBank,
    k: usize,
    state: &BusState,
    targets: &[f64],
    tlast_history: Option<&HistorySet>,
) -> Result<Vec<f64>, ModelError> {
    let stop = bank.stop(k)?;
    let weekend = f64::from(weekend_feature(state.departure));
    let time_h = state.departure.hour_of_day();

    let mut predictions = match &stop.variant {
        StopModelVariant::Untrainable { reason } => {
            return Err(ModelError::UntrainableStop { k, reason: reason.clone() })
        }
        StopModelVariant::Fallback(fb) => {
            targets.iter().map(|&d| fb.predict(d, weekend, time_h)).collect::<Vec<f64>>()
        }
        StopModelVariant::Additive(model) => {
            let resolve_tlast = |dist: f64| -> f64 {
                if !model.layout.kind.extended() {
                    return 0.0;
                }
                tlast_history
                    .and_then(|h| last_bus_feature(h, state.departure, dist))
                    .unwrap_or_else(|| model.tlast_impute.lookup(dist))
            };
            let b0 = if model.layout.kind == ModelKind::Amm {
                let info = model.mixed.as_ref().expect("mixed info present for AMM");
                if state.observed.is_empty() {
                    return Err(ModelError::NoObservations);
                }
                let used: &[(f64, f64)] = if bank.spec.blup_all_observations {
                    &state.observed
                } else {
                    &state.observed[..1]
                };
                let m = used.len() as f64;
                let mut resid_sum = 0.0;
                for &(d, t) in used {
                    let row = build_row(
                        &model.layout,
                        &FeatureValues { dist: d, time_h, weekend, t_last: resolve_tlast(d) },
                    )?;
                    resid_sum += t - fit::predict_linear(&model.fit, &row)?;
                }
                let rbar = resid_sum / m;
                m * info.sigma2_b * rbar / (m * info.sigma2_b + info.sigma2_eps)
            } else {
                0.0
            };
            let mut out = Vec::with_capacity(targets.len());
            for &d in targets {
                let row = build_row(
                    &model.layout,
                    &FeatureValues { dist: d, time_h, weekend, t_last: resolve_tlast(d) },
                )?;
                out.push(fit::predict_linear(&model.fit, &row)? + b0);
            }
            out
        }
    };

    if bank.spec.isotonic {
        isotonic_by_distance(targets, &mut predictions);
    }
    Ok(predictions)
}

/// Pool-adjacent-violators over the targets ordered by distance, so predicted
/// cumulative time never decreases with distance.
fn isotonic_by_distance(targets: &[f64], predictions: &mut [f64]) {
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| targets[a].partial_cmp(&targets[b]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| predictions[i]).collect();
    // Blocks of (sum, count) merged while decreasing.
    let mut blocks: Vec<(f64, f64)> = Vec::with_capacity(values.len());
    for v in values {
        let mut sum = v;
        let mut count = 1.0;
        while let Some(&(ps, pc)) = blocks.last() {
            if ps / pc > sum / count {
                sum += ps;
                count += pc;
                blocks.pop();
            } else {
                break;
            }
        }
        blocks.push((sum, count));
    }
    let mut fitted = Vec::with_capacity(targets.len());
    for (sum, count) in blocks {
        for _ in 0..count as usize {
            fitted.push(sum / count);
        }
    }
    for (pos, &i) in order.iter().enumerate() {
        predictions[i] = fitted[pos];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_route, filter_points, ArcMetric};
    use crate::model::ModelSpec;
    use crate::synth::{generate, Scenario};

    #[test]
    fn weekend_feature_examples() {
        assert_eq!(weekend_feature(Timestamp::from_ymd_hms(2013, 9, 28, 10, 0, 0)), 1);
        assert_eq!(weekend_feature(Timestamp::from_ymd_hms(2013, 10, 2, 10, 0, 0)), 0);
        assert_eq!(weekend_feature(Timestamp::from_ymd_hms(2013, 9, 27, 23, 59, 0)), 0);
        assert_eq!(weekend_feature(Timestamp::from_ymd_hms(2013, 9, 28, 0, 0, 0)), 1);
    }

    #[test]
    fn last_bus_feature_examples() {
        use crate::trajectory::NormalizedTrajectory;
        use std::collections::BTreeMap;
        let t0 = Timestamp::parse("2013-10-01T10:00:00").unwrap();
        let history = HistorySet {
            stop_index: 0,
            stop_distance: 0.0,
            trajectories: vec![NormalizedTrajectory {
                bus_id: "prev".into(),
                departure_instant: t0,
                points: vec![(1000.0, 5.0), (2000.0, 9.0)],
            }],
            window: (Timestamp(0), Timestamp(i64::MAX)),
            skips: BTreeMap::new(),
        };
        // No earlier bus.
        assert_eq!(last_bus_feature(&history, t0, 1500.0), None);
        // Midpoint interpolation of the earlier bus.
        let later = Timestamp(t0.0 + 600);
        assert_eq!(last_bus_feature(&history, later, 1500.0), Some(7.0));
        // Beyond its last observation.
        assert_eq!(last_bus_feature(&history, later, 2500.0), None);
    }

    #[test]
    fn fallback_prediction_matches_hand_formula() {
        let fb = FallbackModel { intercept: 1.5, alpha: [0.002, 0.0005, 0.3, 0.0001] };
        for (d, we, h) in [(1000.0, 0.0, 9.0), (2500.0, 1.0, 17.5), (0.0, 1.0, 6.0)] {
            let hand = 1.5 + 0.002 * d + 0.0005 * d * we + 0.3 * h + 0.0001 * d * h;
            assert!((fb.predict(d, we, h) - hand).abs() < 1e-12);
        }
    }

    #[test]
    fn isotonic_pass_is_monotone_and_mean_preserving() {
        let targets = [100.0, 200.0, 300.0, 400.0, 500.0];
        let mut preds = [3.0, 2.0, 5.0, 4.5, 4.0];
        let before: f64 = preds.iter().sum();
        isotonic_by_distance(&targets, &mut preds);
        let after: f64 = preds.iter().sum();
        assert!((before - after).abs() < 1e-9);
        for w in preds.windows(2) {
            assert!(w[0] <= w[1] + 1e-12);
        }
        assert_eq!(preds[0], 2.5);
        assert_eq!(preds[1], 2.5);
    }

    /// Shared small fixture: 12-day rush-hour scenario, trained banks.
    fn small_fixture() -> (crate::RouteGeometry, Vec<HistorySet>, Vec<ProjectedRide>) {
        let mut s = Scenario::rush_hour("r1", 12, 404);
        s.n_stops = 6;
        s.route_length_m = 5_000.0;
        s.rides_per_day = 16.0;
        s.outlier_rate = 0.0;
        let data = generate(&s);
        let route = build_route(
            &s.route_id,
            &data.shape_points,
            &data.stop_points,
            ArcMetric::Equirectangular,
            100.0,
        )
        .unwrap();
        let rides: Vec<ProjectedRide> = data
            .rides
            .iter()
            .map(|r| ProjectedRide {
                bus_id: r.bus_id.clone(),
                points: filter_points(&r.points, &route, 100.0),
            })
            .collect();
        let histories = build_histories(
            &rides,
            &route,
            (Timestamp(i64::MIN), Timestamp(i64::MAX)),
        )
        .unwrap();
        (route, histories, rides)
    }

    #[test]
    fn trains_full_bank_and_predicts() {
        let (route, histories, _) = small_fixture();
        for kind in [ModelKind::Bam, ModelKind::Eam, ModelKind::Amm] {
            let spec = ModelSpec { lambda_grid_points: 3, ..ModelSpec::new(kind) };
            let bank = train_bank(&route, &histories, &spec, 12).unwrap();
            assert_eq!(bank.stops.len(), route.k_max());
            for stop in &bank.stops {
                assert!(
                    matches!(stop.variant, StopModelVariant::Additive(_)),
                    "stop {} fell back ({} traj, {} rows)",
                    stop.k,
                    stop.n_traj,
                    stop.n_rows
                );
            }
            // Prediction at a mid-route stop for a plausible state.
            let h = &histories[1];
            let traj = &h.trajectories[10];
            let state = BusState {
                departure: traj.departure_instant,
                observed: vec![traj.points[0]],
            };
            let targets: Vec<f64> = traj.points[1..].iter().map(|p| p.0).collect();
            let preds = predict_travel_time(&bank, 1, &state, &targets, Some(h)).unwrap();
            assert_eq!(preds.len(), targets.len());
            let actual: Vec<f64> = traj.points[1..].iter().map(|p| p.1).collect();
            for (p, &a) in preds.iter().zip(&actual) {
                assert!((p - a).abs() < 0.8 * a.max(4.0), "pred {p} vs actual {a}");
            }
        }
    }

    #[test]
    fn scarce_stops_fall_back_or_report() {
        let (route, histories, _) = small_fixture();
        // Keep only 3 trajectories: below n_min.
        let mut scarce = histories[0].clone();
        scarce.trajectories.truncate(3);
        let spec = ModelSpec::new(ModelKind::Bam);
        let stop = train_stop(&scarce, &route, &spec).unwrap();
        assert!(matches!(stop.variant, StopModelVariant::Fallback(_)));

        let mut empty = histories[0].clone();
        empty.trajectories.clear();
        let stop = train_stop(&empty, &route, &spec).unwrap();
        assert!(matches!(stop.variant, StopModelVariant::Untrainable { .. }));

        // Untrainable stop surfaces as an error naming the stop.
        let bank = ModelBank {
            format_version: MODEL_FORMAT_VERSION,
            route_id: "r1".into(),
            spec: spec.clone(),
            window_days: 12,
            stop_distances: route.stops.clone(),
            stops: vec![stop],
        };
        let state = BusState { departure: Timestamp(0), observed: vec![(500.0, 3.0)] };
        let err = predict_travel_time(&bank, 0, &state, &[1000.0], None).unwrap_err();
        assert!(matches!(err, ModelError::UntrainableStop { k: 0, .. }));
    }

    #[test]
    fn amm_needs_an_observation_and_shrinks_toward_fixed() {
        let (route, histories, _) = small_fixture();
        let spec = ModelSpec { lambda_grid_points: 3, ..ModelSpec::new(ModelKind::Amm) };
        let bank = train_bank(&route, &histories, &spec, 12).unwrap();
        let h = &histories[0];
        let traj = &h.trajectories[20];
        let no_obs = BusState { departure: traj.departure_instant, observed: vec![] };
        assert!(matches!(
            predict_travel_time(&bank, 0, &no_obs, &[2000.0], Some(h)),
            Err(ModelError::NoObservations)
        ));

        // With sigma_b^2 = 0 the mixed prediction equals the fixed one.
        let mut bank0 = bank.clone();
        for stop in &mut bank0.stops {
            if let StopModelVariant::Additive(m) = &mut stop.variant {
                if let Some(info) = &mut m.mixed {
                    info.sigma2_b = 0.0;
                }
            }
        }
        let state =
            BusState { departure: traj.departure_instant, observed: vec![traj.points[0]] };
        let targets = [1500.0, 3000.0];
        let with_b = predict_travel_time(&bank0, 0, &state, &targets, Some(h)).unwrap();
        // Fixed-effects only: same layout, b0 = 0 means identical output.
        let mut bank_fixed = bank0.clone();
        for stop in &mut bank_fixed.stops {
            if let StopModelVariant::Additive(m) = &mut stop.variant {
                m.mixed = None;
                m.layout.kind = ModelKind::Eam;
            }
        }
        bank_fixed.spec.kind = ModelKind::Eam;
        let fixed = predict_travel_time(&bank_fixed, 0, &state, &targets, Some(h)).unwrap();
        for (a, b) in with_b.iter().zip(&fixed) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bam_training_invariant_to_row_permutation() {
        let (route, histories, _) = small_fixture();
        // A two-point grid keeps the GCV argmin robust to summation-order
        // rounding, which is what this invariant is about.
        let spec = ModelSpec { lambda_grid_points: 2, ..ModelSpec::new(ModelKind::Bam) };
        let h = &histories[2];
        let mut reversed = h.clone();
        reversed.trajectories.reverse();
        let a = train_stop(h, &route, &spec).unwrap();
        let b = train_stop(&reversed, &route, &spec).unwrap();
        let (StopModelVariant::Additive(ma), StopModelVariant::Additive(mb)) =
            (&a.variant, &b.variant)
        else {
            panic!("expected additive variants")
        };
        // Coefficients may differ by row ordering only through float
        // summation order; predictions must agree tightly.
        let state = BusState {
            departure: h.trajectories[5].departure_instant,
            observed: vec![h.trajectories[5].points[0]],
        };
        let bank_a = ModelBank {
            format_version: 1,
            route_id: "r1".into(),
            spec: spec.clone(),
            window_days: 12,
            stop_distances: route.stops.clone(),
            stops: vec![StopModel { k: 2, ..a.clone() }],
        };
        let mut bank_b = bank_a.clone();
        bank_b.stops = vec![StopModel { k: 2, ..b.clone() }];
        assert_eq!(ma.fit.lambdas, mb.fit.lambdas);
        let ta = predict_travel_time(&bank_a, 0, &state, &[1200.0, 2400.0], Some(h)).unwrap();
        let tb = predict_travel_time(&bank_b, 0, &state, &[1200.0, 2400.0], Some(h)).unwrap();
        for (x, y) in ta.iter().zip(&tb) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }
}
