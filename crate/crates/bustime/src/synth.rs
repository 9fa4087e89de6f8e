//! Synthetic GPS fixture generator.
//!
//! Produces a wiggly city route with stops, plus seeded bus rides whose
//! motion follows a configurable congestion profile: two rush-hour slowdowns
//! on weekdays, calmer weekends, day-to-day congestion levels, and smooth
//! intraday drift. Rides carry the noise sources the models are built for: a
//! departure-anchor offset (the per-ride vertical shift a random intercept
//! absorbs), stop dwells, per-segment speed variation, and GPS positional
//! noise with occasional far-off outliers. Ground-truth travel-time
//! functions are emitted alongside the traces so tests can score against
//! them directly. Everything is deterministic given the seed.

use std::path::Path;

use crate::csvio::{write_atomic, CsvError};
use crate::geometry::GpsPoint;
use crate::rng::Rng;
use crate::time::Timestamp;

const BASE_LAT: f64 = -22.91;
const BASE_LON: f64 = -43.20;
const METERS_PER_DEG: f64 = 6_371_000.0 * std::f64::consts::PI / 180.0;
const INTEGRATION_STEP_M: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct RushProfile {
    pub morning_amp: f64,
    pub morning_peak_h: f64,
    pub morning_width_h: f64,
    pub evening_amp: f64,
    pub evening_peak_h: f64,
    pub evening_width_h: f64,
}

impl Default for RushProfile {
    fn default() -> Self {
        RushProfile {
            morning_amp: 0.30,
            morning_peak_h: 10.25,
            morning_width_h: 1.6,
            evening_amp: 0.95,
            evening_peak_h: 17.4,
            evening_width_h: 1.7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub route_id: String,
    /// Total number of stops p_0..p_K (so K+1 values).
    pub n_stops: usize,
    pub route_length_m: f64,
    pub days: usize,
    /// Midnight of day 0.
    pub start: Timestamp,
    pub rides_per_day: f64,
    pub service_start_h: f64,
    pub service_end_h: f64,
    /// Mean time between GPS transmissions, minutes.
    pub gap_min: f64,
    /// Departure-anchor offset scale: sd of the per-ride vertical shift.
    pub sigma_b_min: f64,
    /// Within-ride noise scale: dwells, segment speeds, arrival idling.
    pub sigma_eps_min: f64,
    pub base_min_per_km: f64,
    /// Quadratic slowdown toward the destination.
    pub spatial_slope: f64,
    pub spatial_wiggle: f64,
    pub rush: RushProfile,
    /// Scales the rush bumps on weekends.
    pub weekend_congestion_factor: f64,
    /// Lognormal sd of the per-day congestion level.
    pub day_factor_sd: f64,
    pub intraday_wiggle_amp: f64,
    pub gps_offset_sd_m: f64,
    pub outlier_rate: f64,
    pub seed: u64,
}

impl Scenario {
    /// The standard rush-hour pipeline fixture: a 9 km route with 10 stops.
    pub fn rush_hour(route_id: &str, days: usize, seed: u64) -> Scenario {
        Scenario {
            route_id: route_id.to_string(),
            n_stops: 10,
            route_length_m: 9_000.0,
            days,
            start: Timestamp::from_ymd_hms(2013, 9, 26, 0, 0, 0),
            rides_per_day: 27.5,
            service_start_h: 6.0,
            service_end_h: 21.5,
            gap_min: 4.0,
            sigma_b_min: 3.0,
            sigma_eps_min: 1.0,
            base_min_per_km: 1.6,
            spatial_slope: 1.1,
            spatial_wiggle: 0.12,
            rush: RushProfile::default(),
            weekend_congestion_factor: 0.3,
            day_factor_sd: 0.10,
            intraday_wiggle_amp: 0.05,
            gps_offset_sd_m: 8.0,
            outlier_rate: 0.01,
            seed,
        }
    }

    /// A longer fixture shaped like a 15 km, 18-stop inner-city route.
    pub fn long_route(route_id: &str, days: usize, seed: u64) -> Scenario {
        Scenario {
            n_stops: 18,
            route_length_m: 15_000.0,
            gps_offset_sd_m: 5.0,
            outlier_rate: 0.0,
            ..Scenario::rush_hour(route_id, days, seed)
        }
    }
}

/// The noise-free travel-time surface the generator draws rides from.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    base_min_per_km: f64,
    spatial_slope: f64,
    spatial_wiggle: f64,
    route_length_m: f64,
    rush: RushProfile,
    weekend_congestion_factor: f64,
    day_factors: Vec<f64>,
    /// Per day, three (amplitude, phase) harmonics of intraday drift.
    wiggles: Vec<[(f64, f64); 3]>,
    weekend: Vec<bool>,
}

impl GroundTruth {
    pub fn is_weekend(&self, day: usize) -> bool {
        self.weekend[day]
    }

    /// Marginal slowness in minutes per km at position `dist_m` and clock
    /// hour `h` on `day`.
    pub fn slowness(&self, day: usize, h: f64, dist_m: f64) -> f64 {
        let s = dist_m / self.route_length_m;
        let base = self.base_min_per_km
            * (1.0 + self.spatial_slope * s * s)
            * (1.0 + self.spatial_wiggle * (2.0 * std::f64::consts::PI * 2.3 * s + 0.9).sin());
        let amp = if self.weekend[day] { self.weekend_congestion_factor } else { 1.0 };
        let bump = |peak: f64, width: f64| (-((h - peak) / width).powi(2) / 2.0).exp();
        let bumps = self.rush.morning_amp * bump(self.rush.morning_peak_h, self.rush.morning_width_h)
            + self.rush.evening_amp * bump(self.rush.evening_peak_h, self.rush.evening_width_h);
        let mut wiggle = 0.0;
        for (k, &(a, phase)) in self.wiggles[day].iter().enumerate() {
            wiggle +=
                a * (2.0 * std::f64::consts::PI * (k + 1) as f64 * h / 24.0 + phase).sin();
        }
        base * self.day_factors[day] * (1.0 + wiggle) * (1.0 + amp * bumps)
    }

    /// Noise-free cumulative travel time from the origin to `dist_m` for a
    /// bus departing at clock hour `depart_h` on `day`.
    pub fn travel_minutes(&self, day: usize, depart_h: f64, dist_m: f64) -> f64 {
        let mut t = 0.0;
        let mut d = 0.0;
        while d < dist_m {
            let step = INTEGRATION_STEP_M.min(dist_m - d);
            let h = depart_h + t / 60.0;
            t += self.slowness(day, h, d) * step / 1000.0;
            d += step;
        }
        t
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticRide {
    pub bus_id: String,
    pub day: usize,
    /// True departure instant from the origin stop.
    pub departure: Timestamp,
    pub weekend: bool,
    pub points: Vec<GpsPoint>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub route_id: String,
    /// Route polyline, (lat, lon).
    pub shape_points: Vec<(f64, f64)>,
    /// Stop coordinates along the polyline, (lat, lon).
    pub stop_points: Vec<(f64, f64)>,
    pub rides: Vec<SyntheticRide>,
    pub truth: GroundTruth,
}

struct PlanarRoute {
    /// Vertices in meters, east/north.
    verts: Vec<(f64, f64)>,
    cum: Vec<f64>,
    stop_vertex: Vec<usize>,
}

fn build_planar_route(scenario: &Scenario) -> PlanarRoute {
    let n_verts = 48usize;
    let mut raw: Vec<(f64, f64)> = (0..=n_verts)
        .map(|i| {
            let s = i as f64 / n_verts as f64;
            let x = s;
            let y = 0.013 * (2.0 * std::f64::consts::PI * 1.5 * s).sin()
                + 0.006 * (2.0 * std::f64::consts::PI * 3.7 * s + 1.1).sin();
            (x, y)
        })
        .collect();
    let arc: f64 = raw
        .windows(2)
        .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
        .sum();
    let scale = scenario.route_length_m / arc;
    for v in &mut raw {
        v.0 *= scale;
        v.1 *= scale;
    }
    let mut cum = vec![0.0];
    for w in raw.windows(2) {
        let d = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    // Stops at the vertices nearest to equal arc spacing; first and last
    // stop exactly at the route ends.
    let k = scenario.n_stops - 1;
    let mut stop_vertex = Vec::with_capacity(scenario.n_stops);
    for j in 0..=k {
        let target = total * j as f64 / k as f64;
        let idx = cum
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - target).abs().partial_cmp(&(b.1 - target).abs()).unwrap())
            .unwrap()
            .0;
        stop_vertex.push(idx);
    }
    stop_vertex.dedup();
    PlanarRoute { verts: raw, cum, stop_vertex }
}

impl PlanarRoute {
    /// Position and unit tangent at arc distance d.
    fn at(&self, d: f64) -> ((f64, f64), (f64, f64)) {
        let d = d.clamp(0.0, *self.cum.last().unwrap());
        let i = self.cum.partition_point(|&c| c < d).clamp(1, self.cum.len() - 1);
        let (a, b) = (self.verts[i - 1], self.verts[i]);
        let seg = self.cum[i] - self.cum[i - 1];
        let t = if seg > 0.0 { (d - self.cum[i - 1]) / seg } else { 0.0 };
        let pos = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        let norm = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt().max(1e-9);
        let tan = ((b.0 - a.0) / norm, (b.1 - a.1) / norm);
        (pos, tan)
    }
}

fn planar_to_latlon(p: (f64, f64)) -> (f64, f64) {
    let kx = METERS_PER_DEG * BASE_LAT.to_radians().cos();
    (BASE_LAT + p.1 / METERS_PER_DEG, BASE_LON + p.0 / kx)
}

/// Generate the full synthetic data set for a scenario.
pub fn generate(scenario: &Scenario) -> SyntheticData {
    assert!(scenario.n_stops >= 2, "need at least 2 stops");
    let mut rng = Rng::new(scenario.seed);
    let route = build_planar_route(scenario);

    let mut day_factors = Vec::with_capacity(scenario.days);
    let mut wiggles = Vec::with_capacity(scenario.days);
    let mut weekend = Vec::with_capacity(scenario.days);
    for d in 0..scenario.days {
        day_factors.push((scenario.day_factor_sd * rng.normal()).exp());
        let mut w = [(0.0, 0.0); 3];
        for h in &mut w {
            *h = (scenario.intraday_wiggle_amp * rng.range(0.5, 1.0), rng.range(0.0, 24.0));
        }
        wiggles.push(w);
        let day_ts = Timestamp(scenario.start.0 + d as i64 * crate::time::SECS_PER_DAY);
        weekend.push(day_ts.is_weekend());
    }
    let truth = GroundTruth {
        base_min_per_km: scenario.base_min_per_km,
        spatial_slope: scenario.spatial_slope,
        spatial_wiggle: scenario.spatial_wiggle,
        route_length_m: scenario.route_length_m,
        rush: scenario.rush.clone(),
        weekend_congestion_factor: scenario.weekend_congestion_factor,
        day_factors,
        wiggles,
        weekend,
    };

    let mut rides = Vec::new();
    let mut global_idx = 0usize;
    for day in 0..scenario.days {
        let count = (scenario.rides_per_day * (day + 1) as f64).floor() as usize
            - (scenario.rides_per_day * day as f64).floor() as usize;
        let span = scenario.service_end_h - scenario.service_start_h;
        for r in 0..count {
            let slot = scenario.service_start_h
                + span * (r as f64 + 0.5) / count as f64
                + rng.range(-0.3, 0.3) * span / count as f64;
            let depart_h = slot.clamp(scenario.service_start_h, scenario.service_end_h);
            let departure = Timestamp(
                scenario.start.0
                    + day as i64 * crate::time::SECS_PER_DAY
                    + (depart_h * 3600.0).round() as i64,
            );
            let bus_id = format!("b{global_idx:05}");
            let points =
                simulate_ride(scenario, &route, &truth, day, depart_h, departure, &bus_id, &mut rng);
            rides.push(SyntheticRide {
                bus_id,
                day,
                departure,
                weekend: truth.weekend[day],
                points,
            });
            global_idx += 1;
        }
    }

    let shape_points: Vec<(f64, f64)> = route.verts.iter().map(|&p| planar_to_latlon(p)).collect();
    let stop_points: Vec<(f64, f64)> =
        route.stop_vertex.iter().map(|&i| planar_to_latlon(route.verts[i])).collect();
    SyntheticData { route_id: scenario.route_id.clone(), shape_points, stop_points, rides, truth }
}

#[allow(clippy::too_many_arguments)]
fn simulate_ride(
    scenario: &Scenario,
    route: &PlanarRoute,
    truth: &GroundTruth,
    day: usize,
    depart_h: f64,
    departure: Timestamp,
    bus_id: &str,
    rng: &mut Rng,
) -> Vec<GpsPoint> {
    let length = *route.cum.last().unwrap();
    let sigma_eps = scenario.sigma_eps_min;

    // Per-segment speed multipliers and per-stop dwells.
    let n_segs = route.stop_vertex.len() - 1;
    let seg_mult: Vec<f64> =
        (0..n_segs).map(|_| (0.06 * sigma_eps * rng.normal()).exp()).collect();
    let stop_dists: Vec<f64> = route.stop_vertex.iter().map(|&i| route.cum[i]).collect();
    let dwells: Vec<f64> =
        (1..n_segs).map(|_| rng.range(0.0, 0.3) * sigma_eps).collect();

    // Anchor offset: the vertical trajectory shift the random intercept
    // corrects. The at-stop ping happens this many minutes before departure.
    let anchor_offset = if scenario.sigma_b_min > 0.0 {
        (3.0 * scenario.sigma_b_min + scenario.sigma_b_min * rng.normal()).max(0.0)
    } else {
        0.0
    };

    // Time table (dist, minutes since departure), dwell steps repeat a dist.
    let mut table: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    let mut t = 0.0;
    let mut d = 0.0;
    let mut next_stop = 1usize;
    while d < length {
        let step = INTEGRATION_STEP_M.min(length - d);
        let seg = (next_stop - 1).min(n_segs - 1);
        let h = depart_h + t / 60.0;
        t += truth.slowness(day, h, d) * seg_mult[seg] * step / 1000.0;
        d += step;
        if next_stop < stop_dists.len() && d >= stop_dists[next_stop] - 1e-9 {
            if next_stop < stop_dists.len() - 1 {
                let dwell = dwells[next_stop - 1];
                if dwell > 0.0 {
                    table.push((d, t));
                    t += dwell;
                }
            }
            next_stop += 1;
        }
        table.push((d, t));
    }
    let duration = t;
    let terminal_idle = if sigma_eps > 0.0 { rng.range(2.0, 6.0) } else { 0.0 };

    let position_at = |tq: f64| -> f64 {
        if tq >= duration {
            return length;
        }
        let i = table.partition_point(|&(_, tt)| tt < tq).clamp(1, table.len() - 1);
        let (d0, t0) = table[i - 1];
        let (d1, t1) = table[i];
        if t1 <= t0 {
            d1
        } else {
            d0 + (d1 - d0) * (tq - t0) / (t1 - t0)
        }
    };

    let mut points = Vec::new();
    // Anchor ping: just behind the origin so it projects to distance zero.
    {
        let ((px, py), (tx, ty)) = route.at(0.0);
        let mut p = (px - 30.0 * tx, py - 30.0 * ty);
        if scenario.gps_offset_sd_m > 0.0 {
            p.0 += -ty * rng.normal() * scenario.gps_offset_sd_m;
            p.1 += tx * rng.normal() * scenario.gps_offset_sd_m;
        }
        let (lat, lon) = planar_to_latlon(p);
        let ts = Timestamp(departure.0 - (anchor_offset * 60.0).round() as i64);
        points.push(GpsPoint::new(bus_id, &scenario.route_id, ts, lat, lon).unwrap());
    }
    let mut tp = rng.range(0.2, scenario.gap_min);
    while tp < duration + terminal_idle {
        let d = position_at(tp);
        let ((px, py), (tx, ty)) = route.at(d);
        let mut p = (px, py);
        if scenario.gps_offset_sd_m > 0.0 {
            let perp = rng.normal() * scenario.gps_offset_sd_m;
            let along = rng.normal() * scenario.gps_offset_sd_m * 0.8;
            p.0 += -ty * perp + tx * along;
            p.1 += tx * perp + ty * along;
        }
        if scenario.outlier_rate > 0.0 && rng.uniform() < scenario.outlier_rate {
            let throw = 500.0 + 2000.0 * rng.uniform();
            p.0 += -ty * throw;
            p.1 += tx * throw;
        }
        let (lat, lon) = planar_to_latlon(p);
        let ts = Timestamp(departure.0 + (tp * 60.0).round() as i64);
        if points.last().is_none_or(|prev: &GpsPoint| ts > prev.timestamp) {
            points.push(GpsPoint::new(bus_id, &scenario.route_id, ts, lat, lon).unwrap());
        }
        tp += scenario.gap_min * (0.7 + 0.6 * rng.uniform());
    }
    points
}

/// Write shapes.csv / stops.csv / gps.csv for one or more generated routes.
pub fn write_csvs(datasets: &[&SyntheticData], dir: &Path) -> Result<(), CsvError> {
    let mut shapes = String::from("route_id,seq,lat,lon\n");
    let mut stops = String::from("route_id,seq,lat,lon\n");
    let mut gps = String::from("bus_id,route_id,timestamp,lat,lon\n");
    for data in datasets {
        for (i, (lat, lon)) in data.shape_points.iter().enumerate() {
            shapes.push_str(&format!("{},{},{:.7},{:.7}\n", data.route_id, i, lat, lon));
        }
        for (i, (lat, lon)) in data.stop_points.iter().enumerate() {
            stops.push_str(&format!("{},{},{:.7},{:.7}\n", data.route_id, i, lat, lon));
        }
        for ride in &data.rides {
            for p in &ride.points {
                gps.push_str(&format!(
                    "{},{},{},{:.7},{:.7}\n",
                    p.bus_id, p.route_id, p.timestamp, p.lat, p.lon
                ));
            }
        }
    }
    write_atomic(&dir.join("shapes.csv"), &shapes)?;
    write_atomic(&dir.join("stops.csv"), &stops)?;
    write_atomic(&dir.join("gps.csv"), &gps)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_route, filter_points, ArcMetric};
    use crate::trajectory::{build_history, normalize_at_stop, ProjectedRide};

    #[test]
    fn generation_is_deterministic() {
        let s = Scenario::rush_hour("r1", 3, 99);
        let a = generate(&s);
        let b = generate(&s);
        assert_eq!(a.rides.len(), b.rides.len());
        for (ra, rb) in a.rides.iter().zip(&b.rides) {
            assert_eq!(ra.bus_id, rb.bus_id);
            assert_eq!(ra.points.len(), rb.points.len());
            for (pa, pb) in ra.points.iter().zip(&rb.points) {
                assert_eq!(pa.timestamp, pb.timestamp);
                assert_eq!(pa.lat.to_bits(), pb.lat.to_bits());
                assert_eq!(pa.lon.to_bits(), pb.lon.to_bits());
            }
        }
        let c = generate(&Scenario::rush_hour("r1", 3, 100));
        assert_ne!(
            a.rides[0].points[1].lat.to_bits(),
            c.rides[0].points[1].lat.to_bits()
        );
    }

    #[test]
    fn zero_noise_rides_lie_on_ground_truth() {
        let mut s = Scenario::rush_hour("r1", 2, 7);
        s.sigma_b_min = 0.0;
        s.sigma_eps_min = 0.0;
        s.gps_offset_sd_m = 0.0;
        s.outlier_rate = 0.0;
        s.day_factor_sd = 0.0;
        s.intraday_wiggle_amp = 0.0;
        let data = generate(&s);
        let route =
            build_route(&s.route_id, &data.shape_points, &data.stop_points, ArcMetric::Equirectangular, 100.0)
                .unwrap();
        let mut checked = 0;
        for ride in &data.rides {
            let projected = filter_points(&ride.points, &route, 100.0);
            let traj = normalize_at_stop(&projected, &route, 0, &ride.bus_id).unwrap();
            let depart_h = ride.departure.hour_of_day();
            for &(dist, t_min) in &traj.points {
                let want = data.truth.travel_minutes(ride.day, depart_h, dist);
                // Timestamps are second resolution: two roundings of 0.5 s.
                assert!(
                    (t_min - want).abs() < 0.02,
                    "bus {} at {dist:.0} m: {t_min:.4} vs truth {want:.4}",
                    ride.bus_id
                );
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn long_route_density_matches_expected_shape() {
        let s = Scenario::long_route("r121", 14, 21);
        let data = generate(&s);
        assert_eq!(data.rides.len(), 385);
        assert_eq!(data.stop_points.len(), 18);
        let route =
            build_route(&s.route_id, &data.shape_points, &data.stop_points, ArcMetric::Equirectangular, 100.0)
                .unwrap();
        assert!((route.total_length() - 15_000.0).abs() < 1.0);
        let rides: Vec<ProjectedRide> = data
            .rides
            .iter()
            .map(|r| ProjectedRide {
                bus_id: r.bus_id.clone(),
                points: filter_points(&r.points, &route, 100.0),
            })
            .collect();
        let h = build_history(
            &rides,
            &route,
            0,
            (Timestamp(i64::MIN), Timestamp(i64::MAX)),
        )
        .unwrap();
        assert_eq!(h.len(), 385, "skips: {:?}", h.skips);
        let mean_m: f64 =
            h.trajectories.iter().map(|t| t.points.len() as f64).sum::<f64>() / h.len() as f64;
        assert!((10.5..=15.5).contains(&mean_m), "mean m_i = {mean_m}");
    }

    #[test]
    fn weekend_gap_grows_with_distance() {
        let s = Scenario::rush_hour("r1", 9, 5);
        let data = generate(&s);
        let wk_day = (0..s.days).find(|&d| !data.truth.is_weekend(d)).unwrap();
        let we_day = (0..s.days).find(|&d| data.truth.is_weekend(d)).unwrap();
        let mut prev_gap = 0.0;
        for dist in [2_000.0, 4_000.0, 6_000.0, 8_000.0] {
            let t_wk = data.truth.travel_minutes(wk_day, 10.0, dist);
            let t_we = data.truth.travel_minutes(we_day, 10.0, dist);
            let gap = t_wk - t_we;
            assert!(gap > prev_gap, "gap at {dist}: {gap} vs {prev_gap}");
            prev_gap = gap;
        }
    }

    #[test]
    fn csv_emission_round_trips_through_readers() {
        let s = Scenario::rush_hour("r1", 1, 3);
        let data = generate(&s);
        let dir = std::env::temp_dir().join("bustime-synth-csv");
        write_csvs(&[&data], &dir).unwrap();
        let route = crate::geometry::load_route(
            &dir.join("shapes.csv"),
            &dir.join("stops.csv"),
            "r1",
            ArcMetric::Equirectangular,
            100.0,
        )
        .unwrap();
        assert_eq!(route.stops.len(), 10);
        let points = crate::trajectory::read_gps_csv(&dir.join("gps.csv")).unwrap();
        let total: usize = data.rides.iter().map(|r| r.points.len()).sum();
        assert_eq!(points.len(), total);
        // Writing what we read reproduces the file byte for byte.
        let gps_path = dir.join("gps.csv");
        let original = std::fs::read(&gps_path).unwrap();
        let mut rewritten = String::from("bus_id,route_id,timestamp,lat,lon\n");
        for p in &points {
            rewritten.push_str(&format!(
                "{},{},{},{:.7},{:.7}\n",
                p.bus_id, p.route_id, p.timestamp, p.lat, p.lon
            ));
        }
        assert_eq!(original, rewritten.as_bytes());
    }
}
