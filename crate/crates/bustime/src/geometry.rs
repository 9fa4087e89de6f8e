//! Route geometry: piecewise-linear routes, bus stops, and projection of raw
//! GPS coordinates onto cumulative distance from origin.
//!
//! Coordinates are projected into a local planar frame (equirectangular
//! approximation with meters-per-degree fixed at the route centroid latitude),
//! which keeps segment projection closed-form and is accurate at city scale.
//! Haversine is available for cumulative arc lengths if configured.

use std::path::Path;

use thiserror::Error;

use crate::csvio::{read_csv, CsvError};
use crate::time::Timestamp;

const EARTH_RADIUS_M: f64 = 6_371_000.0;
const METERS_PER_DEG: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

/// Default distance beyond which a GPS point is considered off-route.
pub const DEFAULT_MAX_OFFSET_M: f64 = 100.0;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("route '{0}' needs at least 2 vertices, found {1}")]
    TooFewVertices(String, usize),
    #[error("route '{route}': stop {index} is {offset:.1} m from the polyline (max {max:.1} m)")]
    StopOffRoute { route: String, index: usize, offset: f64, max: f64 },
    #[error("route '{route}': snapped stop order is not strictly increasing at stop {index} ({prev:.3} m -> {curr:.3} m)")]
    StopOrder { route: String, index: usize, prev: f64, curr: f64 },
    #[error("route '{0}' has zero total length")]
    ZeroLength(String),
    #[error("route '{route}': no rows found in {what}")]
    NoRows { route: String, what: &'static str },
    #[error("invalid GPS point: {0}")]
    BadPoint(String),
    #[error(transparent)]
    Csv(#[from] CsvError),
}

/// How cumulative arc lengths are measured along the polyline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArcMetric {
    #[default]
    Equirectangular,
    Haversine,
}

/// One raw GPS observation.
#[derive(Debug, Clone, PartialEq)]
pub struct GpsPoint {
    pub bus_id: String,
    pub route_id: String,
    pub timestamp: Timestamp,
    pub lat: f64,
    pub lon: f64,
}

impl GpsPoint {
    pub fn new(
        bus_id: impl Into<String>,
        route_id: impl Into<String>,
        timestamp: Timestamp,
        lat: f64,
        lon: f64,
    ) -> Result<Self, GeometryError> {
        if !lat.is_finite() || !lon.is_finite() || lat.abs() > 90.0 || lon.abs() > 180.0 {
            return Err(GeometryError::BadPoint(format!("lat={lat}, lon={lon}")));
        }
        Ok(GpsPoint { bus_id: bus_id.into(), route_id: route_id.into(), timestamp, lat, lon })
    }
}

/// A GPS point mapped onto the route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    /// Cumulative distance from route origin, meters.
    pub dist: f64,
    /// Perpendicular distance from the route, meters.
    pub offset: f64,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Outbound,
    Return,
    Unknown,
}

/// Immutable piecewise-linear route with snapped stop distances.
#[derive(Debug, Clone)]
pub struct RouteGeometry {
    pub route_id: String,
    /// Route vertices as (lat, lon) degrees.
    pub vertices: Vec<(f64, f64)>,
    /// Per-vertex cumulative arc length, meters. `cum_arc[0] == 0`.
    pub cum_arc: Vec<f64>,
    /// Stop distances p_0 <= ... <= p_K from origin, strictly increasing.
    pub stops: Vec<f64>,
    /// Route vertices in the local planar frame, meters.
    planar: Vec<(f64, f64)>,
    /// Planar frame parameters: (lat0, meters/deg lat, meters/deg lon).
    frame: (f64, f64, f64),
}

impl RouteGeometry {
    /// Number of on-route stops beyond origin (stops are p_0..p_K).
    pub fn k_max(&self) -> usize {
        self.stops.len().saturating_sub(1)
    }

    pub fn total_length(&self) -> f64 {
        *self.cum_arc.last().unwrap()
    }

    pub fn stop_distance(&self, k: usize) -> f64 {
        self.stops[k]
    }

    fn to_planar(&self, lat: f64, lon: f64) -> (f64, f64) {
        let (lat0, ky, kx) = self.frame;
        ((lon) * kx, (lat - lat0) * ky)
    }
}

fn centroid_frame(vertices: &[(f64, f64)]) -> (f64, f64, f64) {
    // Midpoint of the latitude extent rather than the vertex mean: collinear
    // subdivision of segments then leaves the frame (and every projection)
    // unchanged.
    let lo = vertices.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
    let hi = vertices.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    let lat0 = 0.5 * (lo + hi);
    let ky = METERS_PER_DEG;
    let kx = METERS_PER_DEG * lat0.to_radians().cos();
    (lat0, ky, kx)
}

fn haversine_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (la1, lo1) = (a.0.to_radians(), a.1.to_radians());
    let (la2, lo2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = la2 - la1;
    let dlon = lo2 - lo1;
    let s = (dlat / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * s.sqrt().asin()
}

/// Build a route from polyline vertices and stop coordinates.
///
/// Stops are snapped onto the polyline with the same projection used for GPS
/// points, so both share one tie-break rule. Snapped stops must lie within
/// `max_offset` of the polyline and be strictly increasing in arc length.
pub fn build_route(
    route_id: impl Into<String>,
    vertices: &[(f64, f64)],
    stop_points: &[(f64, f64)],
    metric: ArcMetric,
    max_offset: f64,
) -> Result<RouteGeometry, GeometryError> {
    let route_id = route_id.into();
    if vertices.len() < 2 {
        return Err(GeometryError::TooFewVertices(route_id, vertices.len()));
    }
    let frame = centroid_frame(vertices);
    let planar: Vec<(f64, f64)> =
        vertices.iter().map(|&(lat, lon)| (lon * frame.2, (lat - frame.0) * frame.1)).collect();

    let mut cum_arc = Vec::with_capacity(vertices.len());
    cum_arc.push(0.0);
    for i in 1..vertices.len() {
        let step = match metric {
            ArcMetric::Equirectangular => {
                let (x0, y0) = planar[i - 1];
                let (x1, y1) = planar[i];
                ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
            }
            ArcMetric::Haversine => haversine_m(vertices[i - 1], vertices[i]),
        };
        cum_arc.push(cum_arc[i - 1] + step);
    }
    if *cum_arc.last().unwrap() <= 0.0 {
        return Err(GeometryError::ZeroLength(route_id));
    }

    let mut route =
        RouteGeometry { route_id, vertices: vertices.to_vec(), cum_arc, stops: Vec::new(), planar, frame };

    let mut stops = Vec::with_capacity(stop_points.len());
    for (index, &(lat, lon)) in stop_points.iter().enumerate() {
        let p = project_planar(&route, route.to_planar(lat, lon), Timestamp(0));
        if p.offset > max_offset {
            return Err(GeometryError::StopOffRoute {
                route: route.route_id.clone(),
                index,
                offset: p.offset,
                max: max_offset,
            });
        }
        if let Some(&prev) = stops.last() {
            if p.dist <= prev {
                return Err(GeometryError::StopOrder {
                    route: route.route_id.clone(),
                    index,
                    prev,
                    curr: p.dist,
                });
            }
        }
        stops.push(p.dist);
    }
    route.stops = stops;
    Ok(route)
}

fn project_planar(route: &RouteGeometry, point: (f64, f64), timestamp: Timestamp) -> ProjectedPoint {
    let (px, py) = point;
    let mut best_offset = f64::INFINITY;
    let mut best_dist = 0.0;
    for i in 1..route.planar.len() {
        let (ax, ay) = route.planar[i - 1];
        let (bx, by) = route.planar[i];
        let (dx, dy) = (bx - ax, by - ay);
        let len2 = dx * dx + dy * dy;
        if len2 == 0.0 {
            continue; // degenerate duplicate vertex
        }
        let t = (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0);
        let (fx, fy) = (ax + t * dx, ay + t * dy);
        let offset = ((px - fx).powi(2) + (py - fy).powi(2)).sqrt();
        // Strict improvement keeps the earliest (smallest-dist) candidate on
        // exact ties, which is the documented tie-break.
        if offset < best_offset {
            best_offset = offset;
            best_dist = route.cum_arc[i - 1] + t * (route.cum_arc[i] - route.cum_arc[i - 1]);
        }
    }
    ProjectedPoint { dist: best_dist, offset: best_offset, timestamp }
}

/// Project a GPS point onto the route: perpendicular foot over all segments,
/// ties broken toward the smaller cumulative distance.
pub fn project_to_route(point: &GpsPoint, route: &RouteGeometry) -> ProjectedPoint {
    project_planar(route, route.to_planar(point.lat, point.lon), point.timestamp)
}

/// Fraction of positive / negative steps in a projected sequence decides the
/// travel direction. Outbound and return both require at least 3 points and
/// at least 80% of consecutive distance differences with the matching sign.
pub fn infer_direction(projections: &[ProjectedPoint]) -> Direction {
    if projections.len() < 3 {
        return Direction::Unknown;
    }
    let mut pos = 0usize;
    let mut neg = 0usize;
    let total = projections.len() - 1;
    for w in projections.windows(2) {
        let d = w[1].dist - w[0].dist;
        if d > 0.0 {
            pos += 1;
        } else if d < 0.0 {
            neg += 1;
        }
    }
    let frac = |count: usize| count as f64 / total as f64;
    if frac(pos) >= 0.8 {
        Direction::Outbound
    } else if frac(neg) >= 0.8 {
        Direction::Return
    } else {
        Direction::Unknown
    }
}

/// Project and clean one ride: drops points farther than `max_offset` from
/// the route, enforces strictly increasing timestamps, and keeps only the
/// longest contiguous run classified as outbound. An empty result signals an
/// unusable trace.
pub fn filter_points(
    points: &[GpsPoint],
    route: &RouteGeometry,
    max_offset: f64,
) -> Vec<ProjectedPoint> {
    let mut kept: Vec<ProjectedPoint> = Vec::with_capacity(points.len());
    for p in points {
        let proj = project_to_route(p, route);
        if proj.offset > max_offset {
            continue;
        }
        if let Some(last) = kept.last() {
            if proj.timestamp <= last.timestamp {
                continue;
            }
        }
        kept.push(proj);
    }
    if kept.len() < 3 {
        return Vec::new();
    }

    // Longest window with >= 80% positive steps; earliest wins ties.
    let diffs: Vec<i8> = kept
        .windows(2)
        .map(|w| {
            let d = w[1].dist - w[0].dist;
            if d > 0.0 {
                1
            } else if d < 0.0 {
                -1
            } else {
                0
            }
        })
        .collect();
    let mut best: Option<(usize, usize)> = None; // [start, end] inclusive point range
    for start in 0..kept.len() {
        let mut pos = 0usize;
        for end in start + 1..kept.len() {
            if diffs[end - 1] > 0 {
                pos += 1;
            }
            let n_diffs = end - start;
            if n_diffs >= 2 && pos as f64 / n_diffs as f64 >= 0.8 {
                let len = end - start + 1;
                if best.is_none_or(|(bs, be)| len > be - bs + 1) {
                    best = Some((start, end));
                }
            }
        }
    }
    match best {
        Some((s, e)) => kept[s..=e].to_vec(),
        None => Vec::new(),
    }
}

/// Load a route from the GTFS-subset pair shapes.csv / stops.csv.
///
/// Both files share the schema `route_id,seq,lat,lon` (UTF-8, header row,
/// decimal point '.'); rows of other routes are ignored.
pub fn load_route(
    shapes_path: &Path,
    stops_path: &Path,
    route_id: &str,
    metric: ArcMetric,
    max_offset: f64,
) -> Result<RouteGeometry, GeometryError> {
    let vertices = read_route_points(shapes_path, route_id, "shapes.csv")?;
    let stops = read_route_points(stops_path, route_id, "stops.csv")?;
    build_route(route_id, &vertices, &stops, metric, max_offset)
}

fn read_route_points(
    path: &Path,
    route_id: &str,
    what: &'static str,
) -> Result<Vec<(f64, f64)>, GeometryError> {
    let table = read_csv(path, "route_id,seq,lat,lon")?;
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    for (line, fields) in &table.rows {
        if fields[0] != route_id {
            continue;
        }
        let seq = table.parse_usize(*line, "seq", &fields[1])?;
        let lat = table.parse_f64(*line, "lat", &fields[2])?;
        let lon = table.parse_f64(*line, "lon", &fields[3])?;
        if lat.abs() > 90.0 || lon.abs() > 180.0 {
            return Err(GeometryError::BadPoint(format!("{}:{line}: lat={lat}, lon={lon}", path.display())));
        }
        rows.push((seq, lat, lon));
    }
    if rows.is_empty() {
        return Err(GeometryError::NoRows { route: route_id.to_string(), what });
    }
    rows.sort_by_key(|r| r.0);
    Ok(rows.into_iter().map(|(_, lat, lon)| (lat, lon)).collect())
}

#[cfg(test)]
pub(crate) mod test_support {
    /// Map planar meter offsets to (lat, lon) near the equator so tests can
    /// state geometry in meters.
    pub fn ll(x_m: f64, y_m: f64) -> (f64, f64) {
        let k = super::METERS_PER_DEG;
        (y_m / k, x_m / k)
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::ll;
    use super::*;
    use crate::rng::Rng;

    fn ts(secs: i64) -> Timestamp {
        Timestamp(secs)
    }

    fn straight_route() -> RouteGeometry {
        build_route(
            "r",
            &[ll(0.0, 0.0), ll(0.0, 1000.0)],
            &[ll(0.0, 0.0), ll(0.0, 1000.0)],
            ArcMetric::Equirectangular,
            DEFAULT_MAX_OFFSET_M,
        )
        .unwrap()
    }

    #[test]
    fn endpoints_snap_to_route_ends() {
        let r = straight_route();
        assert_eq!(r.stops.len(), 2);
        assert!((r.stops[0] - 0.0).abs() < 1e-6);
        assert!((r.stops[1] - 1000.0).abs() < 1e-6, "p1 = {}", r.stops[1]);
        assert!((r.total_length() - 1000.0).abs() < 1e-6);
    }

    #[test]
    fn duplicate_vertices_are_skipped() {
        let r = build_route(
            "r",
            &[ll(0.0, 0.0), ll(0.0, 500.0), ll(0.0, 500.0), ll(0.0, 1000.0)],
            &[ll(0.0, 0.0)],
            ArcMetric::Equirectangular,
            DEFAULT_MAX_OFFSET_M,
        )
        .unwrap();
        assert!(r.cum_arc.windows(2).all(|w| w[1] >= w[0]));
        assert!((r.total_length() - 1000.0).abs() < 1e-6);
        // Projection still well-defined through the degenerate segment.
        let p = project_planar(&r, (0.0, 500.0), ts(0));
        assert!(p.offset < 1e-9);
    }

    #[test]
    fn too_few_vertices_and_far_stop_error() {
        let e = build_route("r", &[ll(0.0, 0.0)], &[], ArcMetric::Equirectangular, 100.0);
        assert!(matches!(e, Err(GeometryError::TooFewVertices(_, 1))));
        let e = build_route(
            "r",
            &[ll(0.0, 0.0), ll(0.0, 1000.0)],
            &[ll(2000.0, 500.0)],
            ArcMetric::Equirectangular,
            100.0,
        );
        assert!(matches!(e, Err(GeometryError::StopOffRoute { .. })));
    }

    #[test]
    fn unordered_stops_error() {
        let e = build_route(
            "r",
            &[ll(0.0, 0.0), ll(0.0, 1000.0)],
            &[ll(0.0, 600.0), ll(0.0, 300.0)],
            ArcMetric::Equirectangular,
            100.0,
        );
        assert!(matches!(e, Err(GeometryError::StopOrder { index: 1, .. })));
    }

    #[test]
    fn perpendicular_foot() {
        let r = straight_route();
        let g = GpsPoint::new("b", "r", ts(0), ll(30.0, 500.0).0, ll(30.0, 500.0).1).unwrap();
        let p = project_to_route(&g, &r);
        assert!((p.dist - 500.0).abs() < 1e-6, "dist {}", p.dist);
        assert!((p.offset - 30.0).abs() < 1e-6, "offset {}", p.offset);
    }

    #[test]
    fn vertex_point_recovers_exact_arc() {
        let verts = [ll(0.0, 0.0), ll(200.0, 300.0), ll(150.0, 900.0), ll(600.0, 1400.0)];
        let r = build_route("r", &verts, &[], ArcMetric::Equirectangular, 100.0).unwrap();
        for (i, &(lat, lon)) in verts.iter().enumerate() {
            let p = project_planar(&r, r.to_planar(lat, lon), ts(0));
            assert!(p.offset < 1e-9);
            let rel = (p.dist - r.cum_arc[i]).abs() / r.cum_arc[i].max(1.0);
            assert!(rel < 1e-9, "vertex {i}: {} vs {}", p.dist, r.cum_arc[i]);
        }
    }

    #[test]
    fn on_curve_points_recover_arc_length() {
        let mut rng = Rng::new(11);
        let verts: Vec<(f64, f64)> = (0..20)
            .scan((0.0, 0.0), |acc, _| {
                acc.0 += rng.range(50.0, 400.0);
                acc.1 += rng.range(-200.0, 250.0);
                Some(ll(acc.1, acc.0))
            })
            .collect();
        let r = build_route("r", &verts, &[], ArcMetric::Equirectangular, 100.0).unwrap();
        for _ in 0..200 {
            let i = 1 + rng.index(verts.len() - 1);
            let t = rng.uniform();
            let (ax, ay) = r.planar[i - 1];
            let (bx, by) = r.planar[i];
            let pt = (ax + t * (bx - ax), ay + t * (by - ay));
            let truth = r.cum_arc[i - 1] + t * (r.cum_arc[i] - r.cum_arc[i - 1]);
            let p = project_planar(&r, pt, ts(0));
            assert!(p.offset < 1e-6);
            assert!((p.dist - truth).abs() / truth.max(1.0) < 1e-9);
        }
    }

    #[test]
    fn projection_invariant_under_collinear_subdivision() {
        let verts = vec![ll(0.0, 0.0), ll(100.0, 800.0), ll(-50.0, 1500.0)];
        let r1 = build_route("r", &verts, &[], ArcMetric::Equirectangular, 100.0).unwrap();
        // Subdivide each segment into 4 collinear pieces.
        let mut fine = Vec::new();
        for w in verts.windows(2) {
            for s in 0..4 {
                let t = s as f64 / 4.0;
                fine.push((w[0].0 + t * (w[1].0 - w[0].0), w[0].1 + t * (w[1].1 - w[0].1)));
            }
        }
        fine.push(*verts.last().unwrap());
        let r2 = build_route("r", &fine, &[], ArcMetric::Equirectangular, 100.0).unwrap();
        let mut rng = Rng::new(5);
        for _ in 0..100 {
            let pt = (rng.range(-200.0, 300.0), rng.range(-100.0, 1600.0));
            let p1 = project_planar(&r1, pt, ts(0));
            let p2 = project_planar(&r2, pt, ts(0));
            assert!((p1.dist - p2.dist).abs() < 1e-6, "{} vs {}", p1.dist, p2.dist);
        }
    }

    #[test]
    fn dense_sampling_oracle() {
        let mut rng = Rng::new(23);
        let verts: Vec<(f64, f64)> = (0..8)
            .scan((0.0, 0.0), |acc, _| {
                acc.0 += rng.range(100.0, 300.0);
                acc.1 += rng.range(-150.0, 150.0);
                Some(ll(acc.1, acc.0))
            })
            .collect();
        let r = build_route("r", &verts, &[], ArcMetric::Equirectangular, 100.0).unwrap();
        // Dense 0.1 m sampling of the planar polyline.
        let mut samples: Vec<(f64, (f64, f64))> = Vec::new();
        for i in 1..r.planar.len() {
            let (ax, ay) = r.planar[i - 1];
            let (bx, by) = r.planar[i];
            let seg = r.cum_arc[i] - r.cum_arc[i - 1];
            let n = (seg / 0.1).ceil() as usize;
            for sidx in 0..=n {
                let t = sidx as f64 / n as f64;
                samples.push((r.cum_arc[i - 1] + t * seg, (ax + t * (bx - ax), ay + t * (by - ay))));
            }
        }
        for _ in 0..100 {
            let pt = (rng.range(-100.0, 300.0), rng.range(-100.0, 1800.0));
            let p = project_planar(&r, pt, ts(0));
            let brute = samples
                .iter()
                .min_by(|a, b| {
                    let da = (a.1 .0 - pt.0).powi(2) + (a.1 .1 - pt.1).powi(2);
                    let db = (b.1 .0 - pt.0).powi(2) + (b.1 .1 - pt.1).powi(2);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assert!((p.dist - brute.0).abs() < 1.0, "projected {} oracle {}", p.dist, brute.0);
        }
    }

    #[test]
    fn direction_examples() {
        let mk = |dists: &[f64]| -> Vec<ProjectedPoint> {
            dists
                .iter()
                .enumerate()
                .map(|(i, &d)| ProjectedPoint { dist: d, offset: 0.0, timestamp: ts(i as i64) })
                .collect()
        };
        assert_eq!(infer_direction(&mk(&[100.0, 400.0, 900.0])), Direction::Outbound);
        assert_eq!(infer_direction(&mk(&[900.0, 400.0, 100.0])), Direction::Return);
        assert_eq!(infer_direction(&mk(&[500.0, 500.0, 500.0])), Direction::Unknown);
        assert_eq!(infer_direction(&mk(&[100.0, 200.0])), Direction::Unknown);
        assert_eq!(infer_direction(&mk(&[100.0])), Direction::Unknown);
    }

    fn gps_at(route: &RouteGeometry, d: f64, off: f64, t: i64) -> GpsPoint {
        // Straight test route runs along +y; offset is +x.
        let _ = route;
        let (lat, lon) = ll(off, d);
        GpsPoint::new("b", "r", ts(t), lat, lon).unwrap()
    }

    #[test]
    fn filter_keeps_near_points_drops_far() {
        let r = straight_route();
        let pts: Vec<GpsPoint> = (0..5).map(|i| gps_at(&r, 100.0 + 200.0 * i as f64, 8.0, 60 * i as i64)).collect();
        let kept = filter_points(&pts, &r, 50.0);
        assert_eq!(kept.len(), 5);

        let mut with_outlier = pts.clone();
        with_outlier.insert(2, gps_at(&r, 500.0, 2000.0, 150));
        let kept = filter_points(&with_outlier, &r, 50.0);
        assert_eq!(kept.len(), 5);
        assert!(kept.iter().all(|p| p.offset <= 50.0));
    }

    #[test]
    fn filter_retains_contiguous_outbound_run() {
        let r = straight_route();
        // Outbound 0..=5, then return 6..=9.
        let dists = [50.0, 200.0, 380.0, 520.0, 700.0, 900.0, 760.0, 540.0, 300.0, 80.0];
        let pts: Vec<GpsPoint> =
            dists.iter().enumerate().map(|(i, &d)| gps_at(&r, d, 5.0, 60 * i as i64)).collect();
        let kept = filter_points(&pts, &r, 50.0);
        // Hand-labeled: the longest window with >= 80% positive steps is the
        // first six points (5/5 positive); adding point 6 gives 5/6 = 0.83 >= 0.8,
        // adding point 7 gives 5/7 < 0.8. So points 0..=6 qualify (7 points).
        assert_eq!(kept.len(), 7);
        assert!((kept[0].dist - 50.0).abs() < 1e-6);
        assert!((kept[6].dist - 760.0).abs() < 1e-6);
    }

    #[test]
    fn filter_output_strictly_increasing_time() {
        let r = straight_route();
        let mut rng = Rng::new(9);
        let mut t = 0i64;
        let mut d = 0.0;
        let mut pts = Vec::new();
        for _ in 0..40 {
            t += rng.index(120) as i64; // sometimes zero: duplicate timestamps
            d += rng.range(-40.0, 160.0);
            pts.push(gps_at(&r, d.clamp(0.0, 1000.0), rng.range(0.0, 30.0), t));
        }
        let kept = filter_points(&pts, &r, 50.0);
        assert!(kept.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
    }

    #[test]
    fn haversine_close_to_planar_at_city_scale() {
        let r_eq = build_route(
            "r",
            &[(-22.90, -43.20), (-22.90, -43.18)],
            &[],
            ArcMetric::Equirectangular,
            100.0,
        )
        .unwrap();
        let r_hav =
            build_route("r", &[(-22.90, -43.20), (-22.90, -43.18)], &[], ArcMetric::Haversine, 100.0)
                .unwrap();
        let rel = (r_eq.total_length() - r_hav.total_length()).abs() / r_hav.total_length();
        assert!(rel < 1e-4, "relative {rel}");
    }

    #[test]
    fn load_route_from_csv() {
        let dir = std::env::temp_dir().join("bustime-geom-csv");
        std::fs::create_dir_all(&dir).unwrap();
        let shapes = dir.join("shapes.csv");
        let stops = dir.join("stops.csv");
        let (lat_a, lon_a) = ll(0.0, 0.0);
        let (lat_b, lon_b) = ll(0.0, 1200.0);
        let (lat_s, lon_s) = ll(0.0, 600.0);
        crate::csvio::write_atomic(
            &shapes,
            &format!("route_id,seq,lat,lon\nr1,0,{lat_a:.9},{lon_a:.9}\nr1,1,{lat_b:.9},{lon_b:.9}\nzz,0,1,1\nzz,1,2,2\n"),
        )
        .unwrap();
        crate::csvio::write_atomic(
            &stops,
            &format!("route_id,seq,lat,lon\nr1,0,{lat_a:.9},{lon_a:.9}\nr1,1,{lat_s:.9},{lon_s:.9}\nr1,2,{lat_b:.9},{lon_b:.9}\n"),
        )
        .unwrap();
        let r = load_route(&shapes, &stops, "r1", ArcMetric::Equirectangular, 100.0).unwrap();
        assert_eq!(r.stops.len(), 3);
        // CSV degrees carry 9 decimals, about 1e-4 m of rounding.
        assert!((r.stops[1] - 600.0).abs() < 1e-3);
        assert!(load_route(&shapes, &stops, "nope", ArcMetric::Equirectangular, 100.0).is_err());
    }
}
