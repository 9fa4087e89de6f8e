//! Cumulative space-time trajectories.
//!
//! A projected ride becomes, for a chosen stop index k, a sequence of
//! (distance beyond the stop, minutes since passing the stop) pairs. The
//! passage time at the stop is inferred by linear interpolation of the two
//! bracketing observations, which is the only interpolation in the pipeline.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::csvio::{write_atomic, CsvError};
use crate::geometry::{ProjectedPoint, RouteGeometry};
use crate::time::Timestamp;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("distance {0:.3} m is beyond the trajectory's last observation {1:.3} m; extrapolation refused")]
    Extrapolation(f64, f64),
    #[error("distance {0:.3} m is negative")]
    NegativeDistance(f64),
    #[error("stop index {0} out of range (route has stops 0..={1})")]
    StopIndex(usize, usize),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error("{path}: bad trajectory cache: {reason}")]
    BadCache { path: std::path::PathBuf, reason: String },
}

/// Why a ride produced no trajectory at a given stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SkipReason {
    /// No observation at or before the stop.
    NoPointBefore,
    /// No observation strictly beyond the stop.
    NoPointBeyond,
    /// Departure at the stop falls outside the requested window.
    OutsideWindow,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SkipReason::NoPointBefore => "no_point_before_stop",
            SkipReason::NoPointBeyond => "no_point_beyond_stop",
            SkipReason::OutsideWindow => "outside_window",
        };
        f.write_str(s)
    }
}

/// One ride's cumulative space-time trajectory normalized at a stop.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTrajectory {
    pub bus_id: String,
    /// Instant at which the ride passed the reference stop (T = 0).
    pub departure_instant: Timestamp,
    /// (meters beyond the stop, minutes since departure), strictly increasing
    /// in both coordinates, all positive.
    pub points: Vec<(f64, f64)>,
}

impl NormalizedTrajectory {
    pub fn last_dist(&self) -> f64 {
        self.points.last().map(|p| p.0).unwrap_or(0.0)
    }
}

/// A projected ride with its identity, input to history building.
#[derive(Debug, Clone)]
pub struct ProjectedRide {
    pub bus_id: String,
    pub points: Vec<ProjectedPoint>,
}

/// All usable trajectories of one route normalized at one stop.
#[derive(Debug, Clone)]
pub struct HistorySet {
    pub stop_index: usize,
    pub stop_distance: f64,
    /// Sorted by (departure_instant, bus_id).
    pub trajectories: Vec<NormalizedTrajectory>,
    /// Half-open [start, end) window the departures fall in.
    pub window: (Timestamp, Timestamp),
    pub skips: BTreeMap<SkipReason, usize>,
}

impl HistorySet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// The trajectory with the latest departure strictly before `instant`.
    pub fn last_before(&self, instant: Timestamp) -> Option<&NormalizedTrajectory> {
        let idx = self.trajectories.partition_point(|t| t.departure_instant < instant);
        if idx == 0 {
            None
        } else {
            Some(&self.trajectories[idx - 1])
        }
    }
}

/// Normalize one projected ride at stop k of the route.
///
/// GPS jitter is removed first: any point whose distance does not exceed the
/// running maximum is dropped. The ride must then bracket the stop (one point
/// at or before it, one beyond it).
pub fn normalize_at_stop(
    projections: &[ProjectedPoint],
    route: &RouteGeometry,
    k: usize,
    bus_id: &str,
) -> Result<NormalizedTrajectory, SkipReason> {
    let p_k = route.stops[k];
    let mono = monotone_prefix_filter(projections);

    let first_beyond = mono.partition_point(|p| p.dist <= p_k);
    if first_beyond == mono.len() {
        return Err(SkipReason::NoPointBeyond);
    }
    if first_beyond == 0 {
        return Err(SkipReason::NoPointBefore);
    }
    let before = &mono[first_beyond - 1];
    let after = &mono[first_beyond];

    let departure_instant = if before.dist == p_k {
        before.timestamp
    } else {
        let frac = (p_k - before.dist) / (after.dist - before.dist);
        let secs =
            before.timestamp.0 as f64 + frac * (after.timestamp.0 - before.timestamp.0) as f64;
        Timestamp(secs.round() as i64)
    };

    let mut points = Vec::with_capacity(mono.len() - first_beyond);
    for p in &mono[first_beyond..] {
        let t_min = p.timestamp.minutes_since(departure_instant);
        if t_min <= 0.0 {
            continue; // second-resolution rounding can null the first point
        }
        points.push((p.dist - p_k, t_min));
    }
    if points.is_empty() {
        return Err(SkipReason::NoPointBeyond);
    }
    Ok(NormalizedTrajectory { bus_id: bus_id.to_string(), departure_instant, points })
}

fn monotone_prefix_filter(projections: &[ProjectedPoint]) -> Vec<ProjectedPoint> {
    let mut out: Vec<ProjectedPoint> = Vec::with_capacity(projections.len());
    let mut max_dist = f64::NEG_INFINITY;
    for p in projections {
        if p.dist > max_dist {
            max_dist = p.dist;
            out.push(*p);
        }
    }
    out
}

/// Piecewise-linear interpolation of the trajectory at `dist` meters beyond
/// its reference stop, including the implicit (0, 0) anchor.
pub fn interpolate_time_at(traj: &NormalizedTrajectory, dist: f64) -> Result<f64, TrajectoryError> {
    if dist < 0.0 || !dist.is_finite() {
        return Err(TrajectoryError::NegativeDistance(dist));
    }
    if dist == 0.0 {
        return Ok(0.0);
    }
    let last = traj.last_dist();
    if dist > last {
        return Err(TrajectoryError::Extrapolation(dist, last));
    }
    let idx = traj.points.partition_point(|p| p.0 < dist);
    let (d1, t1) = traj.points[idx];
    if d1 == dist {
        return Ok(t1);
    }
    let (d0, t0) = if idx == 0 { (0.0, 0.0) } else { traj.points[idx - 1] };
    Ok(t0 + (t1 - t0) * (dist - d0) / (d1 - d0))
}

/// Normalize every ride at stop k, keeping successes whose departure falls in
/// the half-open window and counting skips by reason.
pub fn build_history(
    rides: &[ProjectedRide],
    route: &RouteGeometry,
    k: usize,
    window: (Timestamp, Timestamp),
) -> Result<HistorySet, TrajectoryError> {
    if k > route.k_max() {
        return Err(TrajectoryError::StopIndex(k, route.k_max()));
    }
    let mut trajectories = Vec::new();
    let mut skips: BTreeMap<SkipReason, usize> = BTreeMap::new();
    for ride in rides {
        match normalize_at_stop(&ride.points, route, k, &ride.bus_id) {
            Ok(traj) => {
                if traj.departure_instant < window.0 || traj.departure_instant >= window.1 {
                    *skips.entry(SkipReason::OutsideWindow).or_insert(0) += 1;
                } else {
                    trajectories.push(traj);
                }
            }
            Err(reason) => *skips.entry(reason).or_insert(0) += 1,
        }
    }
    trajectories.sort_by(|a, b| {
        (a.departure_instant, a.bus_id.as_str()).cmp(&(b.departure_instant, b.bus_id.as_str()))
    });
    Ok(HistorySet { stop_index: k, stop_distance: route.stops[k], trajectories, window, skips })
}

/// Read the raw GPS input CSV `bus_id,route_id,timestamp,lat,lon` with
/// ISO-8601 local timestamps.
pub fn read_gps_csv(path: &Path) -> Result<Vec<crate::geometry::GpsPoint>, TrajectoryError> {
    let table = crate::csvio::read_csv(path, "bus_id,route_id,timestamp,lat,lon")?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, fields) in &table.rows {
        let ts = Timestamp::parse(&fields[2])
            .map_err(|_| TrajectoryError::Csv(table.value_error(*line, "timestamp", &fields[2])))?;
        let lat = table.parse_f64(*line, "lat", &fields[3])?;
        let lon = table.parse_f64(*line, "lon", &fields[4])?;
        let point = crate::geometry::GpsPoint::new(&fields[0], &fields[1], ts, lat, lon)
            .map_err(|_| TrajectoryError::Csv(table.value_error(*line, "lat/lon", &fields[3])))?;
        out.push(point);
    }
    Ok(out)
}

/// Group GPS points of one route into per-bus rides, each time-ordered.
/// Rides come back sorted by bus id.
pub fn group_rides(points: &[crate::geometry::GpsPoint], route_id: &str) -> Vec<(String, Vec<crate::geometry::GpsPoint>)> {
    let mut by_bus: BTreeMap<&str, Vec<crate::geometry::GpsPoint>> = BTreeMap::new();
    for p in points {
        if p.route_id == route_id {
            by_bus.entry(p.bus_id.as_str()).or_default().push(p.clone());
        }
    }
    by_bus
        .into_iter()
        .map(|(bus, mut pts)| {
            pts.sort_by_key(|p| p.timestamp);
            (bus.to_string(), pts)
        })
        .collect()
}

const CACHE_MAGIC: &str = "# bustime trajectory cache v1";
const CACHE_HEADER: &str = "bus_id,k,departure_instant,dist_m,T_min";

/// Serialize history sets to the versioned columnar cache format.
///
/// Values are written in shortest round-trip decimal form, so re-reading the
/// cache reproduces the exact in-memory numbers.
pub fn write_history_cache(path: &Path, histories: &[&HistorySet]) -> Result<(), TrajectoryError> {
    let mut out = String::new();
    out.push_str(CACHE_MAGIC);
    out.push('\n');
    out.push_str(CACHE_HEADER);
    out.push('\n');
    for h in histories {
        for t in &h.trajectories {
            for &(d, tm) in &t.points {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    t.bus_id, h.stop_index, t.departure_instant, d, tm
                ));
            }
        }
    }
    write_atomic(path, &out)?;
    Ok(())
}

/// Read a trajectory cache back, grouping by stop index. Windows are
/// reconstructed from the observed departure range.
pub fn read_history_cache(path: &Path) -> Result<Vec<HistorySet>, TrajectoryError> {
    let raw = std::fs::read_to_string(path).map_err(|source| {
        TrajectoryError::Csv(CsvError::Read { path: path.to_path_buf(), source })
    })?;
    let mut lines = raw.lines();
    let bad = |reason: &str| TrajectoryError::BadCache {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if lines.next().map(str::trim) != Some(CACHE_MAGIC) {
        return Err(bad("missing version line"));
    }
    if lines.next().map(str::trim) != Some(CACHE_HEADER) {
        return Err(bad("missing header"));
    }
    // (k, bus_id, departure) -> points
    let mut groups: BTreeMap<(usize, String, Timestamp), Vec<(f64, f64)>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad(&format!("line {}: expected 5 fields", i + 3)));
        }
        let k: usize = fields[1].parse().map_err(|_| bad(&format!("line {}: bad k", i + 3)))?;
        let dep = Timestamp::parse(fields[2])
            .map_err(|_| bad(&format!("line {}: bad departure", i + 3)))?;
        let d: f64 = fields[3].parse().map_err(|_| bad(&format!("line {}: bad dist", i + 3)))?;
        let t: f64 = fields[4].parse().map_err(|_| bad(&format!("line {}: bad T", i + 3)))?;
        groups.entry((k, fields[0].to_string(), dep)).or_default().push((d, t));
    }
    let mut by_k: BTreeMap<usize, Vec<NormalizedTrajectory>> = BTreeMap::new();
    for ((k, bus_id, departure_instant), points) in groups {
        by_k.entry(k).or_default().push(NormalizedTrajectory { bus_id, departure_instant, points });
    }
    let mut out = Vec::new();
    for (k, mut trajectories) in by_k {
        trajectories.sort_by(|a, b| {
            (a.departure_instant, a.bus_id.as_str()).cmp(&(b.departure_instant, b.bus_id.as_str()))
        });
        let start = trajectories.first().map(|t| t.departure_instant).unwrap_or(Timestamp(0));
        let end = trajectories
            .last()
            .map(|t| Timestamp(t.departure_instant.0 + 1))
            .unwrap_or(Timestamp(1));
        out.push(HistorySet {
            stop_index: k,
            stop_distance: f64::NAN,
            trajectories,
            window: (start, end),
            skips: BTreeMap::new(),
        });
    }
    Ok(out)
}
