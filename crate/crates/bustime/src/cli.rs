//! Command-line orchestration: synth, train, predict, evaluate, inspect.
//!
//! Configuration comes from an optional flat key=value file plus flag
//! overrides (flags win). Every command is deterministic given its inputs,
//! configuration and seed; output files are written atomically. The
//! BUSTIME_LOG environment variable (error|warn|info|debug) controls stderr
//! logging.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::basis::BasisKind;
use crate::csvio::{read_csv, write_atomic};
use crate::eval::{evaluate, PredictionRecord};
use crate::geometry::{filter_points, load_route, ArcMetric, RouteGeometry};
use crate::kernel::{kernel_predict, to_stop_grid, KernelModel};
use crate::model::{
    build_histories, load_bank, predict_travel_time, save_bank, train_bank, BusState, ModelKind,
    ModelSpec, StopModelVariant,
};
use crate::rng::Rng;
use crate::synth::{generate, write_csvs, Scenario};
use crate::time::{Timestamp, SECS_PER_DAY};
use crate::trajectory::{normalize_at_stop, read_gps_csv, ProjectedRide};

pub const EXIT_OK: i32 = 0;
pub const EXIT_MISSING_FILE: i32 = 2;
pub const EXIT_UNTRAINABLE: i32 = 3;
pub const EXIT_BAD_CONFIG: i32 = 4;
pub const EXIT_MODEL_MISMATCH: i32 = 5;
pub const EXIT_EMPTY_METHOD: i32 = 6;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> CliError {
        CliError { code, message: message.into() }
    }
}

type CliResult<T> = Result<T, CliError>;

fn log_level() -> u8 {
    match std::env::var("BUSTIME_LOG").unwrap_or_default().to_ascii_lowercase().as_str() {
        "debug" => 3,
        "info" => 2,
        "error" => 0,
        _ => 1, // warn
    }
}

fn log(level: u8, msg: &str) {
    if level <= log_level() {
        let tag = match level {
            0 => "error",
            1 => "warn",
            2 => "info",
            _ => "debug",
        };
        eprintln!("bustime[{tag}] {msg}");
    }
}

/// Prediction method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Bam,
    Eam,
    Amm,
    Kernel,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bam => "BAM",
            Method::Eam => "EAM",
            Method::Amm => "AMM",
            Method::Kernel => "Kernel",
        }
    }

    fn parse(s: &str) -> Option<Method> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bam" => Some(Method::Bam),
            "eam" => Some(Method::Eam),
            "amm" => Some(Method::Amm),
            "kernel" => Some(Method::Kernel),
            _ => None,
        }
    }

    fn model_kind(self) -> Option<ModelKind> {
        match self {
            Method::Bam => Some(ModelKind::Bam),
            Method::Eam => Some(ModelKind::Eam),
            Method::Amm => Some(ModelKind::Amm),
            Method::Kernel => None,
        }
    }
}

/// Full run configuration; flat key=value file plus flag overrides.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub gps: PathBuf,
    pub shapes: PathBuf,
    pub stops: PathBuf,
    pub out_dir: PathBuf,
    pub model_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub routes: Vec<String>,
    pub window_days: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub max_offset_m: f64,
    pub arc_metric: ArcMetric,
    pub n_min: usize,
    pub r_min: usize,
    pub test_days: usize,
    pub test_after: Option<Timestamp>,
    pub kernel_bandwidth: f64,
    pub lambda_grid_points: usize,
    pub time_knots: usize,
    pub basis: BasisKind,
    pub blup_all_observations: bool,
    pub isotonic: bool,
    // Synthetic generation knobs.
    pub synth_stops: usize,
    pub synth_length_m: f64,
    pub synth_days: usize,
    pub synth_rides_per_day: f64,
    pub synth_sigma_b: f64,
    pub synth_sigma_eps: f64,
    pub synth_gap_min: f64,
    pub synth_outlier_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gps: "gps.csv".into(),
            shapes: "shapes.csv".into(),
            stops: "stops.csv".into(),
            out_dir: ".".into(),
            model_dir: None,
            report_dir: None,
            routes: vec!["R1".to_string()],
            window_days: 30,
            methods: vec![Method::Bam, Method::Eam, Method::Amm, Method::Kernel],
            seed: 42,
            max_offset_m: crate::geometry::DEFAULT_MAX_OFFSET_M,
            arc_metric: ArcMetric::Equirectangular,
            n_min: 8,
            r_min: 60,
            test_days: 14,
            test_after: None,
            kernel_bandwidth: crate::kernel::DEFAULT_BANDWIDTH,
            lambda_grid_points: 7,
            time_knots: 5,
            basis: BasisKind::Cubic,
            blup_all_observations: true,
            isotonic: false,
            synth_stops: 10,
            synth_length_m: 9_000.0,
            synth_days: 45,
            synth_rides_per_day: 27.5,
            synth_sigma_b: 3.0,
            synth_sigma_eps: 1.0,
            synth_gap_min: 4.0,
            synth_outlier_rate: 0.01,
        }
    }
}

impl RunConfig {
    pub fn model_dir(&self) -> PathBuf {
        self.model_dir.clone().unwrap_or_else(|| self.out_dir.join("models"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.report_dir.clone().unwrap_or_else(|| self.out_dir.join("reports"))
    }

    fn apply(&mut self, key: &str, value: &str) -> CliResult<()> {
        let bad =
            |what: &str| CliError::new(EXIT_BAD_CONFIG, format!("invalid {what}: '{value}'"));
        let parse_f64 = |what: &str| value.parse::<f64>().map_err(|_| bad(what));
        let parse_usize = |what: &str| value.parse::<usize>().map_err(|_| bad(what));
        let parse_bool = |what: &str| match value {
            "1" | "true" | "yes" => Ok(true),
            "0" | "false" | "no" => Ok(false),
            _ => Err(bad(what)),
        };
        match key {
            "gps" => self.gps = value.into(),
            "shapes" => self.shapes = value.into(),
            "stops" => self.stops = value.into(),
            "out_dir" => self.out_dir = value.into(),
            "model_dir" => self.model_dir = Some(value.into()),
            "report_dir" => self.report_dir = Some(value.into()),
            "route" => {
                self.routes =
                    value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                if self.routes.is_empty() {
                    return Err(bad("route"));
                }
            }
            "window_days" => {
                self.window_days = parse_usize("window_days")?;
                if self.window_days == 0 {
                    return Err(bad("window_days"));
                }
            }
            "methods" => {
                let parsed: Option<Vec<Method>> = value.split(',').map(Method::parse).collect();
                self.methods = parsed.ok_or_else(|| bad("methods"))?;
                if self.methods.is_empty() {
                    return Err(bad("methods"));
                }
            }
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "max_offset_m" => self.max_offset_m = parse_f64("max_offset_m")?,
            "arc_metric" => {
                self.arc_metric = match value {
                    "equirectangular" => ArcMetric::Equirectangular,
                    "haversine" => ArcMetric::Haversine,
                    _ => return Err(bad("arc_metric")),
                }
            }
            "n_min" => self.n_min = parse_usize("n_min")?,
            "r_min" => self.r_min = parse_usize("r_min")?,
            "test_days" => self.test_days = parse_usize("test_days")?,
            "test_after" => {
                let ts = Timestamp::parse(&format!("{value}T00:00:00")).map_err(|_| bad("test_after"))?;
                self.test_after = Some(ts);
            }
            "kernel_bandwidth" => self.kernel_bandwidth = parse_f64("kernel_bandwidth")?,
            "lambda_grid_points" => {
                self.lambda_grid_points = parse_usize("lambda_grid_points")?;
                if self.lambda_grid_points == 0 {
                    return Err(bad("lambda_grid_points"));
                }
            }
            "time_knots" => self.time_knots = parse_usize("time_knots")?,
            "basis" => self.basis = BasisKind::parse(value).ok_or_else(|| bad("basis"))?,
            "blup_all_observations" => {
                self.blup_all_observations = parse_bool("blup_all_observations")?
            }
            "isotonic" => self.isotonic = parse_bool("isotonic")?,
            "synth_stops" => self.synth_stops = parse_usize("synth_stops")?,
            "synth_length_m" => self.synth_length_m = parse_f64("synth_length_m")?,
            "synth_days" => self.synth_days = parse_usize("synth_days")?,
            "synth_rides_per_day" => self.synth_rides_per_day = parse_f64("synth_rides_per_day")?,
            "synth_sigma_b" => self.synth_sigma_b = parse_f64("synth_sigma_b")?,
            "synth_sigma_eps" => self.synth_sigma_eps = parse_f64("synth_sigma_eps")?,
            "synth_gap_min" => self.synth_gap_min = parse_f64("synth_gap_min")?,
            "synth_outlier_rate" => self.synth_outlier_rate = parse_f64("synth_outlier_rate")?,
            _ => return Err(CliError::new(EXIT_BAD_CONFIG, format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    fn load_file(&mut self, path: &Path) -> CliResult<()> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            CliError::new(EXIT_MISSING_FILE, format!("cannot read config {}: {e}", path.display()))
        })?;
        for (i, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::new(
                    EXIT_BAD_CONFIG,
                    format!("{}:{}: expected key=value", path.display(), i + 1),
                )
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn spec_for(&self, kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            basis: self.basis,
            time_knots: self.time_knots,
            lambda_grid_points: self.lambda_grid_points,
            n_min: self.n_min,
            r_min: self.r_min,
            blup_all_observations: self.blup_all_observations,
            isotonic: self.isotonic,
            ..ModelSpec::new(kind)
        }
    }
}

/// Parse command-line arguments: subcommand plus flags. Flags override the
/// config file.
pub fn parse_args(args: &[String]) -> CliResult<(String, RunConfig)> {
    if args.is_empty() {
        return Err(CliError::new(
            EXIT_BAD_CONFIG,
            "usage: bustime <synth|train|predict|evaluate|inspect> [--config FILE] [--route R] \
             [--window-days N] [--methods m1,m2] [--seed N] [--out-dir DIR]",
        ));
    }
    let command = args[0].clone();
    // Two passes: --config first, then every flag as an override.
    let flag_key = |flag: &str| -> Option<&'static str> {
        match flag {
            "--route" => Some("route"),
            "--window-days" => Some("window_days"),
            "--methods" => Some("methods"),
            "--seed" => Some("seed"),
            "--out-dir" => Some("out_dir"),
            "--model-dir" => Some("model_dir"),
            "--report-dir" => Some("report_dir"),
            "--gps" => Some("gps"),
            "--shapes" => Some("shapes"),
            "--stops" => Some("stops"),
            "--test-days" => Some("test_days"),
            "--test-after" => Some("test_after"),
            "--max-offset" => Some("max_offset_m"),
            "--lambda-grid-points" => Some("lambda_grid_points"),
            _ => None,
        }
    };
    let mut cfg = RunConfig::default();
    let rest = &args[1..];
    let mut i = 0;
    while i < rest.len() {
        if rest[i] == "--config" {
            let path = rest.get(i + 1).ok_or_else(|| {
                CliError::new(EXIT_BAD_CONFIG, "--config needs a file argument")
            })?;
            cfg.load_file(Path::new(path))?;
            i += 2;
        } else {
            i += 1;
        }
    }
    let mut i = 0;
    while i < rest.len() {
        let flag = &rest[i];
        if flag == "--config" {
            i += 2;
            continue;
        }
        let key = flag_key(flag).ok_or_else(|| {
            CliError::new(EXIT_BAD_CONFIG, format!("unknown flag '{flag}'"))
        })?;
        let value = rest
            .get(i + 1)
            .ok_or_else(|| CliError::new(EXIT_BAD_CONFIG, format!("{flag} needs a value")))?;
        cfg.apply(key, value)?;
        i += 2;
    }
    Ok((command, cfg))
}

/// Entry point: returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    let (command, cfg) = match parse_args(args) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    let result = match command.as_str() {
        "synth" => cmd_synth(&cfg),
        "train" => cmd_train(&cfg),
        "predict" => cmd_predict(&cfg),
        "evaluate" => cmd_evaluate(&cfg),
        "inspect" => cmd_inspect(&cfg),
        other => Err(CliError::new(EXIT_BAD_CONFIG, format!("unknown subcommand '{other}'"))),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> i32 {
    eprintln!("bustime-error code={} message={}", e.code, e.message);
    e.code
}

fn missing(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::new(EXIT_MISSING_FILE, format!("{}: {e}", path.display()))
}

/// Generate synthetic shapes/stops/gps CSVs for the configured routes.
pub fn cmd_synth(cfg: &RunConfig) -> CliResult<()> {
    let mut datasets = Vec::new();
    for (i, route_id) in cfg.routes.iter().enumerate() {
        let scenario = Scenario {
            route_id: route_id.clone(),
            n_stops: cfg.synth_stops,
            route_length_m: cfg.synth_length_m,
            days: cfg.synth_days,
            rides_per_day: cfg.synth_rides_per_day,
            gap_min: cfg.synth_gap_min,
            sigma_b_min: cfg.synth_sigma_b,
            sigma_eps_min: cfg.synth_sigma_eps,
            outlier_rate: cfg.synth_outlier_rate,
            seed: cfg.seed.wrapping_add(i as u64),
            ..Scenario::rush_hour(route_id, cfg.synth_days, cfg.seed)
        };
        let data = generate(&scenario);
        log(2, &format!("synth route {route_id}: {} rides over {} days", data.rides.len(), cfg.synth_days));
        datasets.push(data);
    }
    if datasets.is_empty() {
        return Err(CliError::new(EXIT_BAD_CONFIG, "no routes configured"));
    }
    let refs: Vec<&crate::synth::SyntheticData> = datasets.iter().collect();
    write_csvs(&refs, &cfg.out_dir)
        .map_err(|e| CliError::new(EXIT_MISSING_FILE, format!("writing synth outputs: {e}")))?;
    Ok(())
}

struct RouteData {
    route: RouteGeometry,
    rides: Vec<ProjectedRide>,
    /// First-point day number per ride, aligned with `rides`.
    ride_days: Vec<i64>,
}

fn load_route_data(cfg: &RunConfig, route_id: &str) -> CliResult<RouteData> {
    for p in [&cfg.shapes, &cfg.stops, &cfg.gps] {
        if !p.exists() {
            return Err(missing(p, "no such file"));
        }
    }
    let route = load_route(&cfg.shapes, &cfg.stops, route_id, cfg.arc_metric, cfg.max_offset_m)
        .map_err(|e| CliError::new(EXIT_MISSING_FILE, format!("loading route {route_id}: {e}")))?;
    let points = read_gps_csv(&cfg.gps).map_err(|e| missing(&cfg.gps, e))?;
    let grouped = crate::trajectory::group_rides(&points, route_id);
    let mut rides = Vec::new();
    let mut ride_days = Vec::new();
    for (bus_id, pts) in grouped {
        let day = pts.first().map(|p| p.timestamp.day()).unwrap_or(0);
        let filtered = filter_points(&pts, &route, cfg.max_offset_m);
        if filtered.is_empty() {
            continue;
        }
        rides.push(ProjectedRide { bus_id, points: filtered });
        ride_days.push(day);
    }
    log(2, &format!("route {route_id}: {} usable rides", rides.len()));
    Ok(RouteData { route, rides, ride_days })
}

/// Deterministically pick the test days: a seeded sample of days that carry
/// data and have a full training window of history before them.
fn select_test_days(cfg: &RunConfig, data: &RouteData) -> CliResult<Vec<i64>> {
    let mut days: Vec<i64> = data.ride_days.clone();
    days.sort_unstable();
    days.dedup();
    if days.is_empty() {
        return Err(CliError::new(EXIT_UNTRAINABLE, "insufficient history: no data days"));
    }
    let first = days[0];
    let after_day = cfg.test_after.map(|t| t.day());
    let candidates: Vec<i64> = days
        .iter()
        .copied()
        .filter(|&d| d - (cfg.window_days as i64) >= first)
        .filter(|&d| after_day.is_none_or(|a| d >= a))
        .collect();
    if candidates.is_empty() {
        return Err(CliError::new(
            EXIT_UNTRAINABLE,
            format!(
                "insufficient history: no candidate test day has {} days of data before it",
                cfg.window_days
            ),
        ));
    }
    let mut rng = Rng::new(cfg.seed ^ 0x7e57_da75);
    let take = cfg.test_days.min(candidates.len());
    let picked: Vec<i64> =
        rng.sample_indices(candidates.len(), take).into_iter().map(|i| candidates[i]).collect();
    log(2, &format!("test days: {picked:?}"));
    Ok(picked)
}

fn training_window(cfg: &RunConfig, test_days: &[i64]) -> (Timestamp, Timestamp) {
    let first_test = *test_days.iter().min().unwrap();
    let start = first_test - cfg.window_days as i64;
    (Timestamp(start * SECS_PER_DAY), Timestamp(first_test * SECS_PER_DAY))
}

fn bank_path(cfg: &RunConfig, route_id: &str, method: Method) -> PathBuf {
    cfg.model_dir().join(format!("{route_id}_{}.model", method.name()))
}

/// Train one model file per (route, method) plus a training log.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<()> {
    for route_id in &cfg.routes {
        let data = load_route_data(cfg, route_id)?;
        let test_days = select_test_days(cfg, &data)?;
        let window = training_window(cfg, &test_days);
        let histories = build_histories(&data.rides, &data.route, window)
            .map_err(|e| CliError::new(EXIT_UNTRAINABLE, e.to_string()))?;
        if histories.iter().all(|h| h.is_empty()) {
            return Err(CliError::new(
                EXIT_UNTRAINABLE,
                format!("route {route_id}: no usable trajectories in the training window"),
            ));
        }
        let mut train_log = String::new();
        let _ = writeln!(
            train_log,
            "route={route_id} window_days={} window_start={} window_end={} seed={}",
            cfg.window_days,
            window.0,
            window.1,
            cfg.seed
        );
        for method in &cfg.methods {
            match method.model_kind() {
                Some(kind) => {
                    let spec = cfg.spec_for(kind);
                    let bank = train_bank(&data.route, &histories, &spec, cfg.window_days)
                        .map_err(|e| CliError::new(EXIT_UNTRAINABLE, e.to_string()))?;
                    for stop in &bank.stops {
                        let variant = match &stop.variant {
                            StopModelVariant::Additive(_) => "additive",
                            StopModelVariant::Fallback(_) => "fallback",
                            StopModelVariant::Untrainable { .. } => "untrainable",
                        };
                        let _ = writeln!(
                            train_log,
                            "method={} k={} variant={variant} n_traj={} n_rows={} adj_r2={}",
                            method.name(),
                            stop.k,
                            stop.n_traj,
                            stop.n_rows,
                            stop.adj_r2().map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
                        );
                    }
                    let path = bank_path(cfg, route_id, *method);
                    save_bank(&bank, &path)
                        .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
                    log(2, &format!("wrote {}", path.display()));
                }
                None => {
                    let model = KernelModel {
                        route_id: route_id.clone(),
                        bandwidth: cfg.kernel_bandwidth,
                        stop_distances: data.route.stops.clone(),
                        histories: histories.clone(),
                    };
                    let path = bank_path(cfg, route_id, *method);
                    model
                        .save(&path)
                        .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
                    let _ = writeln!(
                        train_log,
                        "method=Kernel bandwidth={} histories={}",
                        cfg.kernel_bandwidth,
                        histories.iter().map(|h| h.len()).sum::<usize>()
                    );
                    log(2, &format!("wrote {}", path.display()));
                }
            }
        }
        write_atomic(&cfg.model_dir().join(format!("train_{route_id}.log")), &train_log)
            .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
    }
    Ok(())
}

enum LoadedModel {
    Bank(crate::model::ModelBank),
    Kernel(KernelModel),
}

fn load_models(cfg: &RunConfig, route_id: &str) -> CliResult<Vec<(Method, LoadedModel)>> {
    let mut out = Vec::new();
    for method in &cfg.methods {
        let path = bank_path(cfg, route_id, *method);
        if !path.exists() {
            return Err(missing(&path, "model file not found (run `bustime train` first)"));
        }
        let loaded = match method.model_kind() {
            Some(kind) => {
                let bank = load_bank(&path)
                    .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
                if bank.route_id != *route_id {
                    return Err(CliError::new(
                        EXIT_MODEL_MISMATCH,
                        format!(
                            "{}: model is for route '{}', requested '{route_id}'",
                            path.display(),
                            bank.route_id
                        ),
                    ));
                }
                if bank.spec.kind != kind {
                    return Err(CliError::new(
                        EXIT_MODEL_MISMATCH,
                        format!("{}: model kind {} does not match method", path.display(), bank.spec.kind.name()),
                    ));
                }
                LoadedModel::Bank(bank)
            }
            None => {
                let model = KernelModel::load(&path)
                    .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
                if model.route_id != *route_id {
                    return Err(CliError::new(
                        EXIT_MODEL_MISMATCH,
                        format!(
                            "{}: kernel model is for route '{}', requested '{route_id}'",
                            path.display(),
                            model.route_id
                        ),
                    ));
                }
                LoadedModel::Kernel(model)
            }
        };
        out.push((*method, loaded));
    }
    Ok(out)
}

/// Kernel-method prediction for one (ride, stop) anchored at the first
/// observation: similarity over the stops already passed, then the predicted
/// stop curve interpolated at the targets.
fn kernel_targets(
    model: &KernelModel,
    route: &RouteGeometry,
    k: usize,
    anchor: (f64, f64),
    targets: &[f64],
) -> Option<Vec<Option<f64>>> {
    let history = model.histories.get(k)?;
    if history.is_empty() {
        return None;
    }
    let grid = to_stop_grid(history, route, k);
    let s = grid.stop_dists.partition_point(|&d| d <= anchor.0);
    // Bus times at the first s stops: linear from the (0,0) anchor to the
    // first observation.
    let partial: Vec<f64> =
        grid.stop_dists[..s].iter().map(|&d| anchor.1 * d / anchor.0).collect();
    let all: Vec<usize> = (0..grid.stop_dists.len()).collect();
    let preds = kernel_predict(&partial, &grid, model.bandwidth, &all).ok()?;
    // Piecewise-linear predicted curve through the present stops.
    let mut curve: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    for (i, p) in preds.iter().enumerate() {
        if let Some(v) = p {
            curve.push((grid.stop_dists[i], *v));
        }
    }
    let interp = |d: f64| -> Option<f64> {
        if d > curve.last()?.0 {
            return None;
        }
        let idx = curve.partition_point(|&(cd, _)| cd < d);
        if idx == 0 {
            return Some(curve[0].1);
        }
        let (d1, t1) = curve[idx.min(curve.len() - 1)];
        if d1 == d {
            return Some(t1);
        }
        let (d0, t0) = curve[idx - 1];
        Some(t0 + (t1 - t0) * (d - d0) / (d1 - d0))
    };
    Some(targets.iter().map(|&d| interp(d)).collect())
}

/// Prediction protocol: for every test bus and every stop k, anchor at the
/// first observation beyond the stop and predict all remaining observed
/// distances. One predictions CSV per method plus one shared actuals CSV.
pub fn cmd_predict(cfg: &RunConfig) -> CliResult<()> {
    for route_id in &cfg.routes {
        let data = load_route_data(cfg, route_id)?;
        let models = load_models(cfg, route_id)?;
        let test_days = select_test_days(cfg, &data)?;

        // Previous-bus context: every ride in the data, usable at lookup
        // time only when it departed strictly before the queried bus.
        let full_window = (Timestamp(i64::MIN), Timestamp(i64::MAX));
        let tlast_ctx = build_histories(&data.rides, &data.route, full_window)
            .map_err(|e| CliError::new(EXIT_UNTRAINABLE, e.to_string()))?;

        let test_set: Vec<&ProjectedRide> = data
            .rides
            .iter()
            .zip(&data.ride_days)
            .filter(|(_, day)| test_days.contains(day))
            .map(|(r, _)| r)
            .collect();
        log(2, &format!("route {route_id}: {} test rides", test_set.len()));

        let mut per_method: BTreeMap<&str, String> = BTreeMap::new();
        for (m, _) in &models {
            per_method.insert(m.name(), String::from("bus_id,k,target_dist_m,predicted_T_min\n"));
        }
        let mut actuals = String::from("bus_id,k,target_dist_m,actual_T_min\n");
        let mut dropped_incomplete = 0usize;

        for ride in &test_set {
            for k in 0..data.route.k_max() {
                let Ok(traj) = normalize_at_stop(&ride.points, &data.route, k, &ride.bus_id)
                else {
                    continue;
                };
                if traj.points.len() < 2 {
                    continue;
                }
                let anchor = traj.points[0];
                let targets: Vec<f64> = traj.points[1..].iter().map(|p| p.0).collect();
                let state =
                    BusState { departure: traj.departure_instant, observed: vec![anchor] };

                // All methods must cover a record or it is dropped for all.
                let mut rows: Vec<(&str, Vec<f64>)> = Vec::new();
                let mut complete = true;
                for (method, model) in &models {
                    let preds: Option<Vec<f64>> = match model {
                        LoadedModel::Bank(bank) => predict_travel_time(
                            bank,
                            k,
                            &state,
                            &targets,
                            Some(&tlast_ctx[k]),
                        )
                        .ok(),
                        LoadedModel::Kernel(km) => {
                            kernel_targets(km, &data.route, k, anchor, &targets).and_then(|v| {
                                let all: Option<Vec<f64>> = v.into_iter().collect();
                                all
                            })
                        }
                    };
                    match preds {
                        Some(p) => rows.push((method.name(), p)),
                        None => {
                            complete = false;
                            break;
                        }
                    }
                }
                if !complete {
                    dropped_incomplete += 1;
                    continue;
                }
                for (j, &(d, t)) in traj.points[1..].iter().enumerate() {
                    let _ = writeln!(actuals, "{},{},{:.3},{:.6}", ride.bus_id, k, d, t);
                    for (name, preds) in &rows {
                        let _ = writeln!(
                            per_method.get_mut(name).unwrap(),
                            "{},{},{:.3},{:.6}",
                            ride.bus_id,
                            k,
                            d,
                            preds[j]
                        );
                    }
                }
            }
        }
        if dropped_incomplete > 0 {
            log(1, &format!("dropped {dropped_incomplete} (bus, stop) groups lacking full method coverage"));
        }

        let dir = cfg.report_dir();
        for (name, contents) in per_method {
            let path = dir.join(format!("predictions_{route_id}_{name}.csv"));
            write_atomic(&path, &contents)
                .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
        }
        write_atomic(&dir.join(format!("actuals_{route_id}.csv")), &actuals)
            .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
    }
    Ok(())
}

/// Join predictions with actuals and run the evaluation protocol, emitting
/// summary, per-bin, plot-data and test CSVs.
pub fn cmd_evaluate(cfg: &RunConfig) -> CliResult<()> {
    for route_id in &cfg.routes {
        let dir = cfg.report_dir();
        let actuals_path = dir.join(format!("actuals_{route_id}.csv"));
        if !actuals_path.exists() {
            return Err(missing(&actuals_path, "no such file (run `bustime predict` first)"));
        }
        let actuals = read_csv(&actuals_path, "bus_id,k,target_dist_m,actual_T_min")
            .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
        let mut actual_by_key: BTreeMap<(String, usize, String), f64> = BTreeMap::new();
        for (line, f) in &actuals.rows {
            let k = actuals
                .parse_usize(*line, "k", &f[1])
                .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
            let t = actuals
                .parse_f64(*line, "actual_T_min", &f[3])
                .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
            actual_by_key.insert((f[0].clone(), k, f[2].clone()), t);
        }

        let mut by_method: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
        for method in &cfg.methods {
            let path = dir.join(format!("predictions_{route_id}_{}.csv", method.name()));
            if !path.exists() {
                return Err(missing(&path, "no such file (run `bustime predict` first)"));
            }
            let table = read_csv(&path, "bus_id,k,target_dist_m,predicted_T_min")
                .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
            let mut records = Vec::with_capacity(table.rows.len());
            for (line, f) in &table.rows {
                let k = table
                    .parse_usize(*line, "k", &f[1])
                    .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
                let dist = table
                    .parse_f64(*line, "target_dist_m", &f[2])
                    .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
                let pred = table
                    .parse_f64(*line, "predicted_T_min", &f[3])
                    .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
                let key = (f[0].clone(), k, f[2].clone());
                let actual = *actual_by_key.get(&key).ok_or_else(|| {
                    CliError::new(
                        EXIT_EMPTY_METHOD,
                        format!("{}:{line}: prediction without matching actual", path.display()),
                    )
                })?;
                records.push(PredictionRecord {
                    method: method.name().to_string(),
                    bus_id: f[0].clone(),
                    stop_index: k,
                    prediction_distance: dist,
                    actual,
                    predicted: pred,
                });
            }
            if records.is_empty() {
                return Err(CliError::new(
                    EXIT_EMPTY_METHOD,
                    format!("method {} has zero prediction rows", method.name()),
                ));
            }
            by_method.insert(method.name().to_string(), records);
        }

        let report = evaluate(&by_method)
            .map_err(|e| CliError::new(EXIT_EMPTY_METHOD, e.to_string()))?;
        write_atomic(&dir.join(format!("summary_{route_id}.csv")), &report.summary_csv(route_id, cfg.window_days))
            .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
        write_atomic(&dir.join(format!("bins_{route_id}.csv")), &report.bins_csv(route_id))
            .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
        write_atomic(&dir.join(format!("plot_data_{route_id}.csv")), &report.plot_data_csv(route_id))
            .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
        write_atomic(&dir.join(format!("tests_{route_id}.csv")), &report.tests_csv(route_id))
            .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
        for m in &report.methods {
            log(2, &format!("route {route_id} {m}: MARE {:.4}", report.overall[m].value));
        }
    }
    Ok(())
}

/// Dump a human-readable summary of each configured model file.
///
/// Output goes through one buffered write so a closed pipe (inspect | head)
/// ends the command quietly instead of panicking.
pub fn cmd_inspect(cfg: &RunConfig) -> CliResult<()> {
    use std::fmt::Write as _;
    let mut out = String::new();
    for route_id in &cfg.routes {
        for method in &cfg.methods {
            let path = bank_path(cfg, route_id, *method);
            if !path.exists() {
                return Err(missing(&path, "no such file"));
            }
            match method.model_kind() {
                Some(_) => {
                    let bank = load_bank(&path)
                        .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
                    let _ = writeln!(out,
                        "{}: route {} kind {} v{} window {}d stops {}",
                        path.display(),
                        bank.route_id,
                        bank.spec.kind.name(),
                        bank.format_version,
                        bank.window_days,
                        bank.stops.len()
                    );
                    for stop in &bank.stops {
                        match &stop.variant {
                            StopModelVariant::Additive(m) => {
                                let mixed = m
                                    .mixed
                                    .as_ref()
                                    .map(|x| {
                                        format!(
                                            " sigma_b={:.3}min sigma_eps={:.3}min{}",
                                            x.sigma2_b.sqrt(),
                                            x.sigma2_eps.sqrt(),
                                            if x.boundary { " (boundary)" } else { "" }
                                        )
                                    })
                                    .unwrap_or_default();
                                let _ = writeln!(out,
                                    "  k={} additive n_traj={} n_rows={} p={} edf={:.1} adj_r2={:.4} lambdas={:?}{}",
                                    stop.k,
                                    stop.n_traj,
                                    stop.n_rows,
                                    m.layout.p,
                                    m.fit.edf,
                                    stop.adj_r2().unwrap_or(f64::NAN),
                                    m.fit.lambdas,
                                    mixed
                                );
                            }
                            StopModelVariant::Fallback(fb) => {
                                let _ = writeln!(out,
                                    "  k={} fallback n_traj={} n_rows={} alpha={:?} intercept={:.4}",
                                    stop.k, stop.n_traj, stop.n_rows, fb.alpha, fb.intercept
                                );
                            }
                            StopModelVariant::Untrainable { reason } => {
                                let _ = writeln!(out, "  k={} untrainable: {reason}", stop.k);
                            }
                        }
                    }
                }
                None => {
                    let model = KernelModel::load(&path)
                        .map_err(|e| CliError::new(EXIT_MISSING_FILE, e.to_string()))?;
                    let _ = writeln!(out,
                        "{}: route {} kernel bandwidth {} stops {} histories {}",
                        path.display(),
                        model.route_id,
                        model.bandwidth,
                        model.stop_distances.len(),
                        model.histories.iter().map(|h| h.len()).sum::<usize>()
                    );
                }
            }
        }
    }
    use std::io::Write as _;
    let _ = std::io::stdout().write_all(out.as_bytes());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_args_flags_override_config() {
        let dir = std::env::temp_dir().join("bustime-cli-cfg");
        std::fs::create_dir_all(&dir).unwrap();
        let cfg_path = dir.join("run.conf");
        std::fs::write(&cfg_path, "route=R9\nwindow_days=10\nseed=7\nmethods=bam,kernel\n")
            .unwrap();
        let args: Vec<String> = [
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--window-days",
            "20",
            "--route",
            "R1,R2",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let (cmd, cfg) = parse_args(&args).unwrap();
        assert_eq!(cmd, "train");
        assert_eq!(cfg.window_days, 20); // flag wins
        assert_eq!(cfg.routes, vec!["R1", "R2"]);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.methods, vec![Method::Bam, Method::Kernel]);
    }

    #[test]
    fn parse_args_rejects_bad_input() {
        let mk = |args: &[&str]| -> i32 {
            let v: Vec<String> = args.iter().map(|s| s.to_string()).collect();
            parse_args(&v).map(|_| 0).unwrap_or_else(|e| e.code)
        };
        assert_eq!(mk(&[]), EXIT_BAD_CONFIG);
        assert_eq!(mk(&["train", "--bogus", "1"]), EXIT_BAD_CONFIG);
        assert_eq!(mk(&["train", "--window-days", "zero"]), EXIT_BAD_CONFIG);
        assert_eq!(mk(&["train", "--methods", "bam,nope"]), EXIT_BAD_CONFIG);
    }

    #[test]
    fn unknown_subcommand_is_config_error() {
        let args: Vec<String> = vec!["frobnicate".into()];
        assert_eq!(run(&args), EXIT_BAD_CONFIG);
    }
}
