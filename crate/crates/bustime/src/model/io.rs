//! Versioned self-describing text format for model banks.
//!
//! Floats are written with 17 significant digits, so loading a file
//! reproduces the exact in-memory values and predictions are bit-identical
//! across a save/load round trip.

use std::path::Path;

use nalgebra::DVector;

use crate::basis::{BasisKind, SplineBasis};
use crate::csvio::{write_atomic, CsvError};
use crate::fit::PenalizedFit;
use crate::model::bank::{
    AdditiveModel, FallbackModel, MixedInfo, ModelBank, StopDiagnostics, StopModel,
    StopModelVariant,
};
use crate::model::design::{layout, ImputeTable};
use crate::model::{ModelError, ModelKind, ModelSpec, MODEL_FORMAT_VERSION};

const MAGIC: &str = "# bustime model bank v1";

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_f64_list(vs: &[f64]) -> String {
    vs.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

/// Serialize a bank to its model file.
pub fn save_bank(bank: &ModelBank, path: &Path) -> Result<(), ModelError> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str("# smoothness selected by GCV(lambda) = n * RSS / (n - edf)^2\n");
    out.push_str("# adj_r2 = 1 - (RSS / (n - edf)) / (TSS / (n - 1))\n");
    out.push_str(&format!("route_id={}\n", bank.route_id));
    out.push_str(&format!("kind={}\n", bank.spec.kind.name()));
    out.push_str(&format!("basis={}\n", bank.spec.basis.name()));
    out.push_str(&format!("time_knots={}\n", bank.spec.time_knots));
    out.push_str(&format!("lambda_grid_points={}\n", bank.spec.lambda_grid_points));
    out.push_str(&format!("lambda_lo={}\n", fmt_f64(bank.spec.lambda_lo)));
    out.push_str(&format!("lambda_hi={}\n", fmt_f64(bank.spec.lambda_hi)));
    out.push_str(&format!("n_min={}\n", bank.spec.n_min));
    out.push_str(&format!("r_min={}\n", bank.spec.r_min));
    out.push_str(&format!(
        "blup_all_observations={}\n",
        u8::from(bank.spec.blup_all_observations)
    ));
    out.push_str(&format!("isotonic={}\n", u8::from(bank.spec.isotonic)));
    out.push_str(&format!("window_days={}\n", bank.window_days));
    out.push_str(&format!("stop_distances={}\n", fmt_f64_list(&bank.stop_distances)));
    out.push_str(&format!("n_stop_models={}\n", bank.stops.len()));
    for stop in &bank.stops {
        out.push_str("[stop]\n");
        out.push_str(&format!("k={}\n", stop.k));
        out.push_str(&format!("stop_distance={}\n", fmt_f64(stop.stop_distance_m)));
        out.push_str(&format!("n_traj={}\n", stop.n_traj));
        out.push_str(&format!("n_rows={}\n", stop.n_rows));
        let skips: Vec<String> =
            stop.diagnostics.skips.iter().map(|(r, c)| format!("{r}:{c}")).collect();
        out.push_str(&format!("skips={}\n", skips.join(";")));
        out.push_str(&format!(
            "dropped_missing_tlast={}\n",
            stop.diagnostics.dropped_missing_tlast
        ));
        out.push_str(&format!(
            "weekend_dropped={}\n",
            u8::from(stop.diagnostics.weekend_dropped)
        ));
        match &stop.variant {
            StopModelVariant::Untrainable { reason } => {
                out.push_str("variant=untrainable\n");
                out.push_str(&format!("reason={reason}\n"));
            }
            StopModelVariant::Fallback(fb) => {
                out.push_str("variant=fallback\n");
                out.push_str(&format!("intercept={}\n", fmt_f64(fb.intercept)));
                out.push_str(&format!("alpha={}\n", fmt_f64_list(&fb.alpha)));
            }
            StopModelVariant::Additive(m) => {
                out.push_str("variant=additive\n");
                out.push_str(&format!("dist_knots={}\n", fmt_f64_list(&m.layout.dist_basis.knots)));
                out.push_str(&format!(
                    "dist_domain={},{}\n",
                    fmt_f64(m.layout.dist_basis.domain.0),
                    fmt_f64(m.layout.dist_basis.domain.1)
                ));
                out.push_str(&format!("time_knot_values={}\n", fmt_f64_list(&m.layout.time_basis.knots)));
                out.push_str(&format!(
                    "time_domain={},{}\n",
                    fmt_f64(m.layout.time_basis.domain.0),
                    fmt_f64(m.layout.time_basis.domain.1)
                ));
                out.push_str(&format!(
                    "weekend_active={}\n",
                    u8::from(m.layout.weekend_active)
                ));
                for s in &m.layout.smooths {
                    out.push_str(&format!(
                        "center_{}={}\n",
                        s.role.name(),
                        fmt_f64_list(&s.centering)
                    ));
                    out.push_str(&format!(
                        "scale_{}={}\n",
                        s.role.name(),
                        fmt_f64_list(&s.scaling)
                    ));
                }
                out.push_str(&format!("lambdas={}\n", fmt_f64_list(&m.fit.lambdas)));
                out.push_str(&format!("edf={}\n", fmt_f64(m.fit.edf)));
                out.push_str(&format!("sigma2_eps_fit={}\n", fmt_f64(m.fit.sigma2_eps)));
                out.push_str(&format!("adj_r2={}\n", fmt_f64(m.fit.adj_r2)));
                out.push_str(&format!("gcv={}\n", fmt_f64(m.fit.gcv)));
                out.push_str(&format!("rss={}\n", fmt_f64(m.fit.rss)));
                out.push_str(&format!("n={}\n", fmt_f64(m.fit.n)));
                out.push_str(&format!("ridge_added={}\n", fmt_f64(m.fit.ridge_added)));
                out.push_str(&format!(
                    "beta={}\n",
                    fmt_f64_list(m.fit.beta.as_slice())
                ));
                if let Some(info) = &m.mixed {
                    out.push_str(&format!("sigma2_b={}\n", fmt_f64(info.sigma2_b)));
                    out.push_str(&format!("sigma2_eps={}\n", fmt_f64(info.sigma2_eps)));
                    out.push_str(&format!("boundary={}\n", u8::from(info.boundary)));
                    out.push_str(&format!("mixed_adj_r2={}\n", fmt_f64(info.adj_r2)));
                }
                let bins: Vec<String> = m
                    .tlast_impute
                    .bins
                    .iter()
                    .map(|(d, v)| format!("{}:{}", fmt_f64(*d), fmt_f64(*v)))
                    .collect();
                out.push_str(&format!("impute_bins={}\n", bins.join(";")));
                out.push_str(&format!(
                    "impute_global={}\n",
                    fmt_f64(m.tlast_impute.global_mean)
                ));
            }
        }
    }
    write_atomic(path, &out)?;
    Ok(())
}

struct Reader<'a> {
    path: &'a Path,
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bad(&self, reason: impl Into<String>) -> ModelError {
        ModelError::BadModelFile {
            path: self.path.to_path_buf(),
            line: self.pos,
            reason: reason.into(),
        }
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    /// Next significant line; comment lines after the version line are
    /// documentation and skipped.
    fn next_line(&mut self) -> Option<&'a str> {
        loop {
            let l = self.peek()?;
            self.pos += 1;
            if self.pos > 1 && l.starts_with('#') {
                continue;
            }
            return Some(l);
        }
    }

    /// Next line must be `key=value`; returns the value.
    fn expect(&mut self, key: &str) -> Result<&'a str, ModelError> {
        let line = self.next_line().ok_or_else(|| self.bad(format!("missing {key}")))?;
        let (k, v) = line.split_once('=').ok_or_else(|| self.bad("expected key=value"))?;
        if k != key {
            return Err(self.bad(format!("expected key '{key}', found '{k}'")));
        }
        Ok(v)
    }

    fn expect_f64(&mut self, key: &str) -> Result<f64, ModelError> {
        let v = self.expect(key)?;
        v.parse().map_err(|_| self.bad(format!("bad float for {key}: '{v}'")))
    }

    fn expect_usize(&mut self, key: &str) -> Result<usize, ModelError> {
        let v = self.expect(key)?;
        v.parse().map_err(|_| self.bad(format!("bad integer for {key}: '{v}'")))
    }

    fn expect_bool(&mut self, key: &str) -> Result<bool, ModelError> {
        Ok(self.expect_usize(key)? != 0)
    }

    fn parse_f64_list(&self, v: &str) -> Result<Vec<f64>, ModelError> {
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| s.parse::<f64>().map_err(|_| self.bad(format!("bad float '{s}'"))))
            .collect()
    }
}

/// Load a bank from its model file.
pub fn load_bank(path: &Path) -> Result<ModelBank, ModelError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|source| CsvError::Read { path: path.to_path_buf(), source })?;
    let lines: Vec<&str> = raw.lines().map(|l| l.trim_end_matches('\r')).collect();
    let mut r = Reader { path, lines, pos: 0 };
    if r.next_line() != Some(MAGIC) {
        return Err(r.bad("missing version line"));
    }
    let route_id = r.expect("route_id")?.to_string();
    let kind = ModelKind::parse(r.expect("kind")?).ok_or_else(|| r.bad("unknown kind"))?;
    let basis =
        BasisKind::parse(r.expect("basis")?).ok_or_else(|| r.bad("unknown basis kind"))?;
    let spec = ModelSpec {
        kind,
        basis,
        time_knots: r.expect_usize("time_knots")?,
        lambda_grid_points: r.expect_usize("lambda_grid_points")?,
        lambda_lo: r.expect_f64("lambda_lo")?,
        lambda_hi: r.expect_f64("lambda_hi")?,
        n_min: r.expect_usize("n_min")?,
        r_min: r.expect_usize("r_min")?,
        blup_all_observations: r.expect_bool("blup_all_observations")?,
        isotonic: r.expect_bool("isotonic")?,
    };
    let window_days = r.expect_usize("window_days")?;
    let stop_distances = {
        let v = r.expect("stop_distances")?;
        r.parse_f64_list(v)?
    };
    let n_stop_models = r.expect_usize("n_stop_models")?;

    let mut stops = Vec::with_capacity(n_stop_models);
    for _ in 0..n_stop_models {
        if r.next_line() != Some("[stop]") {
            return Err(r.bad("expected [stop]"));
        }
        let k = r.expect_usize("k")?;
        let stop_distance_m = r.expect_f64("stop_distance")?;
        let n_traj = r.expect_usize("n_traj")?;
        let n_rows = r.expect_usize("n_rows")?;
        let skips_raw = r.expect("skips")?.to_string();
        let mut skips = Vec::new();
        for part in skips_raw.split(';').filter(|s| !s.is_empty()) {
            let (name, count) =
                part.split_once(':').ok_or_else(|| r.bad("bad skips entry"))?;
            skips.push((
                name.to_string(),
                count.parse::<usize>().map_err(|_| r.bad("bad skip count"))?,
            ));
        }
        let dropped_missing_tlast = r.expect_usize("dropped_missing_tlast")?;
        let weekend_dropped = r.expect_bool("weekend_dropped")?;
        let diagnostics = StopDiagnostics {
            skips,
            dropped_missing_tlast,
            weekend_dropped,
            tlast_imputed_predictions: 0,
        };
        let variant = match r.expect("variant")? {
            "untrainable" => StopModelVariant::Untrainable { reason: r.expect("reason")?.to_string() },
            "fallback" => {
                let intercept = r.expect_f64("intercept")?;
                let alpha_v = r.expect("alpha")?;
                let alpha = r.parse_f64_list(alpha_v)?;
                if alpha.len() != 4 {
                    return Err(r.bad("alpha needs 4 coefficients"));
                }
                StopModelVariant::Fallback(FallbackModel {
                    intercept,
                    alpha: [alpha[0], alpha[1], alpha[2], alpha[3]],
                })
            }
            "additive" => {
                let dist_knots = {
                    let v = r.expect("dist_knots")?;
                    r.parse_f64_list(v)?
                };
                let dist_domain = {
                    let v = r.expect("dist_domain")?;
                    let d = r.parse_f64_list(v)?;
                    if d.len() != 2 {
                        return Err(r.bad("dist_domain needs lo,hi"));
                    }
                    (d[0], d[1])
                };
                let time_knot_values = {
                    let v = r.expect("time_knot_values")?;
                    r.parse_f64_list(v)?
                };
                let time_domain = {
                    let v = r.expect("time_domain")?;
                    let d = r.parse_f64_list(v)?;
                    if d.len() != 2 {
                        return Err(r.bad("time_domain needs lo,hi"));
                    }
                    (d[0], d[1])
                };
                let weekend_active = r.expect_bool("weekend_active")?;
                let dist_basis = SplineBasis::new(basis, dist_knots, dist_domain)?;
                let time_basis = SplineBasis::new(basis, time_knot_values, time_domain)?;
                let mut lay = layout(kind, dist_basis, time_basis, weekend_active);
                for s in &mut lay.smooths {
                    let key = format!("center_{}", s.role.name());
                    let v = r.expect(&key)?;
                    let centering = r.parse_f64_list(v)?;
                    let key = format!("scale_{}", s.role.name());
                    let v = r.expect(&key)?;
                    let scaling = r.parse_f64_list(v)?;
                    if centering.len() != s.width || scaling.len() != s.width {
                        return Err(r.bad(format!(
                            "centering/scaling width mismatch for {}: {}/{} vs {}",
                            s.role.name(),
                            centering.len(),
                            scaling.len(),
                            s.width
                        )));
                    }
                    s.centering = centering;
                    s.scaling = scaling;
                }
                let lambdas = {
                    let v = r.expect("lambdas")?;
                    r.parse_f64_list(v)?
                };
                let edf = r.expect_f64("edf")?;
                let sigma2_eps_fit = r.expect_f64("sigma2_eps_fit")?;
                let adj_r2 = r.expect_f64("adj_r2")?;
                let gcv = r.expect_f64("gcv")?;
                let rss = r.expect_f64("rss")?;
                let n = r.expect_f64("n")?;
                let ridge_added = r.expect_f64("ridge_added")?;
                let beta = {
                    let v = r.expect("beta")?;
                    r.parse_f64_list(v)?
                };
                if beta.len() != lay.p {
                    return Err(r.bad(format!(
                        "beta width {} does not match layout width {}",
                        beta.len(),
                        lay.p
                    )));
                }
                let mixed = if kind == ModelKind::Amm {
                    Some(MixedInfo {
                        sigma2_b: r.expect_f64("sigma2_b")?,
                        sigma2_eps: r.expect_f64("sigma2_eps")?,
                        boundary: r.expect_bool("boundary")?,
                        adj_r2: r.expect_f64("mixed_adj_r2")?,
                    })
                } else {
                    None
                };
                let impute_raw = r.expect("impute_bins")?.to_string();
                let mut bins = Vec::new();
                for part in impute_raw.split(';').filter(|s| !s.is_empty()) {
                    let (d, v) =
                        part.split_once(':').ok_or_else(|| r.bad("bad impute bin"))?;
                    bins.push((
                        d.parse::<f64>().map_err(|_| r.bad("bad impute dist"))?,
                        v.parse::<f64>().map_err(|_| r.bad("bad impute value"))?,
                    ));
                }
                let global_mean = r.expect_f64("impute_global")?;
                let fit = PenalizedFit {
                    beta: DVector::from_vec(beta),
                    lambdas,
                    edf,
                    sigma2_eps: sigma2_eps_fit,
                    adj_r2,
                    gcv,
                    rss,
                    n,
                    ridge_added,
                };
                StopModelVariant::Additive(Box::new(AdditiveModel {
                    layout: lay,
                    fit,
                    mixed,
                    tlast_impute: ImputeTable { bins, global_mean },
                }))
            }
            other => return Err(r.bad(format!("unknown variant '{other}'"))),
        };
        stops.push(StopModel { k, stop_distance_m, n_traj, n_rows, variant, diagnostics });
    }

    Ok(ModelBank {
        format_version: MODEL_FORMAT_VERSION,
        route_id,
        spec,
        window_days,
        stop_distances,
        stops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_route, filter_points, ArcMetric};
    use crate::model::bank::{build_histories, predict_travel_time, train_bank, BusState};
    use crate::synth::{generate, Scenario};
    use crate::time::Timestamp;
    use crate::trajectory::ProjectedRide;

    #[test]
    fn save_load_round_trip_is_bit_identical() {
        let mut s = Scenario::rush_hour("r1", 10, 777);
        s.n_stops = 5;
        s.route_length_m = 4_000.0;
        s.rides_per_day = 14.0;
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
        let histories =
            build_histories(&rides, &route, (Timestamp(i64::MIN), Timestamp(i64::MAX))).unwrap();
        let dir = std::env::temp_dir().join("bustime-model-io");
        for kind in [ModelKind::Bam, ModelKind::Eam, ModelKind::Amm] {
            let spec = crate::model::ModelSpec {
                lambda_grid_points: 3,
                n_min: 4,
                r_min: 20,
                ..crate::model::ModelSpec::new(kind)
            };
            let bank = train_bank(&route, &histories, &spec, 10).unwrap();
            let path = dir.join(format!("{}.model", kind.name()));
            save_bank(&bank, &path).unwrap();
            let loaded = load_bank(&path).unwrap();

            // Saving the loaded bank reproduces the file byte for byte.
            let path2 = dir.join(format!("{}-2.model", kind.name()));
            save_bank(&loaded, &path2).unwrap();
            assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());

            // Predictions are bit-identical through the round trip.
            let h = &histories[1];
            for traj in h.trajectories.iter().take(20) {
                if traj.points.len() < 2 {
                    continue;
                }
                let state = BusState {
                    departure: traj.departure_instant,
                    observed: vec![traj.points[0]],
                };
                let targets: Vec<f64> = traj.points[1..].iter().map(|p| p.0).collect();
                let a = predict_travel_time(&bank, 1, &state, &targets, Some(h)).unwrap();
                let b = predict_travel_time(&loaded, 1, &state, &targets, Some(h)).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = std::env::temp_dir().join("bustime-model-io");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("corrupt.model");
        std::fs::write(&path, "not a model\n").unwrap();
        assert!(matches!(load_bank(&path), Err(ModelError::BadModelFile { .. })));
        std::fs::write(&path, format!("{MAGIC}\nroute_id=r\nkind=XXX\n")).unwrap();
        assert!(load_bank(&path).is_err());
    }
}
