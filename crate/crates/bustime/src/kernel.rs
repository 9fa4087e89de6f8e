//! Instance-based kernel-regression baseline.
//!
//! Historical trajectories are interpolated onto the subsequent bus stops,
//! the current bus's observed prefix is compared against each history with a
//! Gaussian kernel `exp(-||x - y||^2 / b)`, and predictions are
//! weight-normalized averages of the historical stop times. Times are in
//! minutes throughout, so the default bandwidth b = 1 means one squared
//! minute; the similarity is bandwidth-sensitive in those units.

use std::path::Path;

use thiserror::Error;

use crate::csvio::{write_atomic, CsvError};
use crate::trajectory::{interpolate_time_at, HistorySet, NormalizedTrajectory, TrajectoryError};
use crate::RouteGeometry;

/// Kernel bandwidth used by the experiments, in squared minutes.
pub const DEFAULT_BANDWIDTH: f64 = 1.0;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
    #[error("observed prefix is longer than the stop grid ({observed} > {stops})")]
    PrefixTooLong { observed: usize, stops: usize },
    #[error("no historical trajectory is comparable over the observed prefix")]
    NoComparableHistory,
    #[error("target stop index {0} outside the grid of {1} stops")]
    BadTarget(usize, usize),
    #[error("{path}: bad kernel model: {reason}")]
    BadModel { path: std::path::PathBuf, reason: String },
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Historical trajectories interpolated at the stops beyond the reference
/// stop. A trajectory that ends before a stop is absent there.
#[derive(Debug, Clone)]
pub struct StopGrid {
    /// Distances of subsequent stops beyond the reference stop, meters.
    pub stop_dists: Vec<f64>,
    /// times[t][s]: minutes of trajectory t at stop s, absent if unreached.
    pub times: Vec<Vec<Option<f64>>>,
}

impl StopGrid {
    pub fn n_trajectories(&self) -> usize {
        self.times.len()
    }
}

/// Interpolate every trajectory of the history at all subsequent stops.
pub fn to_stop_grid(history: &HistorySet, route: &RouteGeometry, k: usize) -> StopGrid {
    let p_k = route.stops[k];
    let stop_dists: Vec<f64> = route.stops[k + 1..].iter().map(|p| p - p_k).collect();
    let times = history
        .trajectories
        .iter()
        .map(|traj| {
            stop_dists.iter().map(|&d| interpolate_time_at(traj, d).ok()).collect()
        })
        .collect();
    StopGrid { stop_dists, times }
}

/// Gaussian similarity of the current bus's observed prefix (times at the
/// first s stops) to each historical trajectory. Histories absent at any
/// shared stop get weight zero. An empty prefix carries no information and
/// yields uniform weight 1 for every history.
pub fn kernel_weights(partial: &[f64], grid: &StopGrid, b: f64) -> Result<Vec<f64>, KernelError> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(KernelError::BadBandwidth(b));
    }
    if partial.len() > grid.stop_dists.len() {
        return Err(KernelError::PrefixTooLong {
            observed: partial.len(),
            stops: grid.stop_dists.len(),
        });
    }
    let mut weights = Vec::with_capacity(grid.times.len());
    for traj in &grid.times {
        let mut dist2 = 0.0;
        let mut comparable = true;
        for (s, &x) in partial.iter().enumerate() {
            match traj[s] {
                Some(y) => dist2 += (x - y) * (x - y),
                None => {
                    comparable = false;
                    break;
                }
            }
        }
        weights.push(if comparable { (-dist2 / b).exp() } else { 0.0 });
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(KernelError::NoComparableHistory);
    }
    Ok(weights)
}

/// Weight-normalized average of historical times at each target stop,
/// restricted (and renormalized) to the trajectories present there. A stop
/// where no weighted trajectory is present gets an absent prediction.
pub fn kernel_predict(
    partial: &[f64],
    grid: &StopGrid,
    b: f64,
    target_stops: &[usize],
) -> Result<Vec<Option<f64>>, KernelError> {
    let weights = kernel_weights(partial, grid, b)?;
    let mut out = Vec::with_capacity(target_stops.len());
    for &s in target_stops {
        if s >= grid.stop_dists.len() {
            return Err(KernelError::BadTarget(s, grid.stop_dists.len()));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (t, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                if let Some(y) = grid.times[t][s] {
                    num += w * y;
                    den += w;
                }
            }
        }
        out.push(if den > 0.0 { Some(num / den) } else { None });
    }
    Ok(out)
}

const KERNEL_MAGIC: &str = "# bustime kernel model v1";

/// The kernel baseline's trained state: per-stop histories plus bandwidth.
#[derive(Debug, Clone)]
pub struct KernelModel {
    pub route_id: String,
    pub bandwidth: f64,
    /// Absolute stop distances p_0..p_K of the route.
    pub stop_distances: Vec<f64>,
    /// One history per stop k = 0..K-1, in order.
    pub histories: Vec<HistorySet>,
}

impl KernelModel {
    pub fn save(&self, path: &Path) -> Result<(), KernelError> {
        let mut out = String::new();
        out.push_str(KERNEL_MAGIC);
        out.push('\n');
        out.push_str(&format!("route_id={}\n", self.route_id));
        out.push_str(&format!("bandwidth={:.16e}\n", self.bandwidth));
        let dists: Vec<String> =
            self.stop_distances.iter().map(|d| format!("{:.16e}", d)).collect();
        out.push_str(&format!("stop_distances={}\n", dists.join(",")));
        out.push_str("trajectories:\n");
        for h in &self.histories {
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

    pub fn load(path: &Path) -> Result<KernelModel, KernelError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|source| CsvError::Read { path: path.to_path_buf(), source })?;
        let bad = |reason: &str| KernelError::BadModel {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut lines = raw.lines();
        if lines.next().map(str::trim) != Some(KERNEL_MAGIC) {
            return Err(bad("missing version line"));
        }
        let mut route_id = None;
        let mut bandwidth = None;
        let mut stop_distances: Option<Vec<f64>> = None;
        for line in lines.by_ref() {
            let line = line.trim();
            if line == "trajectories:" {
                break;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            match key {
                "route_id" => route_id = Some(value.to_string()),
                "bandwidth" => {
                    bandwidth = Some(value.parse::<f64>().map_err(|_| bad("bad bandwidth"))?)
                }
                "stop_distances" => {
                    let parsed: Result<Vec<f64>, _> =
                        value.split(',').map(|v| v.parse::<f64>()).collect();
                    stop_distances = Some(parsed.map_err(|_| bad("bad stop_distances"))?);
                }
                _ => return Err(bad(&format!("unknown key '{key}'"))),
            }
        }
        let route_id = route_id.ok_or_else(|| bad("missing route_id"))?;
        let bandwidth = bandwidth.ok_or_else(|| bad("missing bandwidth"))?;
        let stop_distances = stop_distances.ok_or_else(|| bad("missing stop_distances"))?;

        use std::collections::BTreeMap;
        let mut groups: BTreeMap<(usize, String, crate::Timestamp), Vec<(f64, f64)>> =
            BTreeMap::new();
        for line in lines {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad("trajectory row needs 5 fields"));
            }
            let k: usize = f[1].parse().map_err(|_| bad("bad k"))?;
            let dep = crate::Timestamp::parse(f[2]).map_err(|_| bad("bad departure"))?;
            let d: f64 = f[3].parse().map_err(|_| bad("bad dist"))?;
            let t: f64 = f[4].parse().map_err(|_| bad("bad T"))?;
            groups.entry((k, f[0].to_string(), dep)).or_default().push((d, t));
        }
        let n_stops = stop_distances.len();
        if n_stops < 2 {
            return Err(bad("need at least 2 stop distances"));
        }
        let mut by_k: BTreeMap<usize, Vec<NormalizedTrajectory>> = BTreeMap::new();
        for ((k, bus_id, departure_instant), points) in groups {
            if k + 1 >= n_stops {
                return Err(bad(&format!("stop index {k} out of range")));
            }
            by_k.entry(k).or_default().push(NormalizedTrajectory {
                bus_id,
                departure_instant,
                points,
            });
        }
        let mut histories = Vec::new();
        for k in 0..n_stops - 1 {
            let mut trajectories = by_k.remove(&k).unwrap_or_default();
            trajectories.sort_by(|a, b| {
                (a.departure_instant, a.bus_id.as_str())
                    .cmp(&(b.departure_instant, b.bus_id.as_str()))
            });
            let start =
                trajectories.first().map(|t| t.departure_instant).unwrap_or(crate::Timestamp(0));
            let end = trajectories
                .last()
                .map(|t| crate::Timestamp(t.departure_instant.0 + 1))
                .unwrap_or(crate::Timestamp(1));
            histories.push(HistorySet {
                stop_index: k,
                stop_distance: stop_distances[k],
                trajectories,
                window: (start, end),
                skips: BTreeMap::new(),
            });
        }
        Ok(KernelModel { route_id, bandwidth, stop_distances, histories })
    }
}
