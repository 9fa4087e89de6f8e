//! Design-matrix assembly for the additive models.
//!
//! Column layout: intercept, optional linear terms (weekend indicator,
//! previous-bus time), then the smooth blocks. Every smooth block drops its
//! marginal constant column(s) and is column-centered on the training sample;
//! the centering constants become part of the model. Tensor blocks keep only
//! products of non-constant marginal functions, so the interaction space does
//! not duplicate the main-effect columns.

use nalgebra::{DMatrix, DVector};

use crate::basis::{penalty_for, PenaltyBlock, SplineBasis, TermShape};
use crate::fit::{DesignMatrix, Penalty, TermBlock};
use crate::model::{FeatureRow, ModelError, ModelKind, ModelSpec};
use crate::trajectory::HistorySet;
use crate::RouteGeometry;

/// Role of one smooth block in the layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothRole {
    /// Single distance smooth (basic model, or degenerate weekend).
    DistAll,
    DistWeekday,
    DistWeekend,
    Time,
    TensorDistTime,
}

impl SmoothRole {
    pub fn name(self) -> &'static str {
        match self {
            SmoothRole::DistAll => "dist",
            SmoothRole::DistWeekday => "dist_weekday",
            SmoothRole::DistWeekend => "dist_weekend",
            SmoothRole::Time => "time",
            SmoothRole::TensorDistTime => "tensor_dist_time",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SmoothBlock {
    pub role: SmoothRole,
    pub col_start: usize,
    pub width: usize,
    /// Training-sample column means subtracted from the raw block.
    pub centering: Vec<f64>,
    /// Training-sample column standard deviations dividing the raw block.
    /// Standardized columns keep the default smoothness grid well-centered
    /// regardless of the basis units (a cubic term over kilometers spans
    /// three orders of magnitude otherwise).
    pub scaling: Vec<f64>,
    /// Smoothness parameters attached to this block.
    pub lambda_indices: Vec<usize>,
}

/// Complete, reproducible description of the design: enough to rebuild any
/// row at prediction time.
///
/// The distance basis lives in kilometers (features arrive in meters and are
/// converted on evaluation); cubic basis functions on raw meters would put
/// columns around 1e11 and wreck the normal-equation conditioning.
#[derive(Debug, Clone)]
pub struct TermLayout {
    pub kind: ModelKind,
    /// Knots and domain in kilometers.
    pub dist_basis: SplineBasis,
    pub time_basis: SplineBasis,
    /// Weekend linear term and split distance smooths are active.
    pub weekend_active: bool,
    pub smooths: Vec<SmoothBlock>,
    pub p: usize,
}

impl TermLayout {
    /// Columns before the smooth blocks: intercept plus linear terms.
    fn n_linear(&self) -> usize {
        1 + if self.kind.extended() {
            1 + usize::from(self.weekend_active)
        } else {
            0
        }
    }

    pub fn term_blocks(&self) -> Vec<TermBlock> {
        let mut blocks = vec![TermBlock { name: "linear".into(), cols: 0..self.n_linear(), centered: false }];
        for s in &self.smooths {
            blocks.push(TermBlock {
                name: s.role.name().into(),
                cols: s.col_start..s.col_start + s.width,
                centered: true,
            });
        }
        blocks
    }

    pub fn n_lambdas(&self) -> usize {
        self.smooths.iter().flat_map(|s| s.lambda_indices.iter()).map(|i| i + 1).max().unwrap_or(0)
    }
}

/// Build the layout skeleton (centering zeroed) for a model kind and bases.
pub fn layout(
    kind: ModelKind,
    dist_basis: SplineBasis,
    time_basis: SplineBasis,
    weekend_active: bool,
) -> TermLayout {
    let weekend_active = weekend_active && kind.extended();
    let q_d = dist_basis.q();
    let q_t = time_basis.q();
    let dist_w = q_d - 1;
    let time_w = q_t - 1;
    let tensor_w = (q_d - 1) * (q_t - 1);

    let mut col = 1 + if kind.extended() { 1 + usize::from(weekend_active) } else { 0 };
    let mut lambda = 0usize;
    let mut smooths = Vec::new();
    let mut push = |role: SmoothRole, width: usize, n_pen: usize| {
        let lambda_indices: Vec<usize> = (0..n_pen).map(|i| lambda + i).collect();
        lambda += n_pen;
        smooths.push(SmoothBlock {
            role,
            col_start: col,
            width,
            centering: vec![0.0; width],
            scaling: vec![1.0; width],
            lambda_indices,
        });
        col += width;
    };

    let dist_pen = usize::from(q_d > 2);
    let time_pen = usize::from(q_t > 2);
    if weekend_active {
        push(SmoothRole::DistWeekday, dist_w, dist_pen);
        push(SmoothRole::DistWeekend, dist_w, dist_pen);
    } else {
        push(SmoothRole::DistAll, dist_w, dist_pen);
    }
    push(SmoothRole::Time, time_w, time_pen);
    push(SmoothRole::TensorDistTime, tensor_w, dist_pen + time_pen);

    TermLayout { kind, dist_basis, time_basis, weekend_active, smooths, p: col }
}

/// Features with the previous-bus time already resolved (imputed if absent).
#[derive(Debug, Clone, Copy)]
pub struct FeatureValues {
    pub dist: f64,
    pub time_h: f64,
    pub weekend: f64,
    pub t_last: f64,
}

/// One centered design row for the layout.
pub fn build_row(layout: &TermLayout, f: &FeatureValues) -> Result<Vec<f64>, ModelError> {
    let mut row = Vec::with_capacity(layout.p);
    row.push(1.0);
    if layout.kind.extended() {
        if layout.weekend_active {
            row.push(f.weekend);
        }
        row.push(f.t_last);
    }
    let dist_row = layout.dist_basis.eval_row(f.dist / 1000.0)?;
    let time_row = layout.time_basis.eval_row(f.time_h)?;
    for s in &layout.smooths {
        match s.role {
            SmoothRole::DistAll => {
                for j in 1..dist_row.len() {
                    row.push((dist_row[j] - s.centering[j - 1]) / s.scaling[j - 1]);
                }
            }
            SmoothRole::DistWeekday => {
                let ind = 1.0 - f.weekend;
                for j in 1..dist_row.len() {
                    row.push((ind * dist_row[j] - s.centering[j - 1]) / s.scaling[j - 1]);
                }
            }
            SmoothRole::DistWeekend => {
                for j in 1..dist_row.len() {
                    row.push((f.weekend * dist_row[j] - s.centering[j - 1]) / s.scaling[j - 1]);
                }
            }
            SmoothRole::Time => {
                for k in 1..time_row.len() {
                    row.push((time_row[k] - s.centering[k - 1]) / s.scaling[k - 1]);
                }
            }
            SmoothRole::TensorDistTime => {
                let tw = time_row.len() - 1;
                for j in 1..dist_row.len() {
                    for k in 1..time_row.len() {
                        let idx = (j - 1) * tw + (k - 1);
                        row.push((dist_row[j] * time_row[k] - s.centering[idx]) / s.scaling[idx]);
                    }
                }
            }
        }
    }
    debug_assert_eq!(row.len(), layout.p);
    Ok(row)
}

/// Penalties for the layout, embedded at full design width. Each block's
/// matrices come from the term-shape constructor restricted to the kept
/// columns.
pub fn layout_penalties(layout: &TermLayout) -> Vec<Penalty> {
    let q_d = layout.dist_basis.q();
    let q_t = layout.time_basis.q();
    let mut out = Vec::new();
    for s in &layout.smooths {
        let (shape, kept): (TermShape, Vec<usize>) = match s.role {
            SmoothRole::DistAll | SmoothRole::DistWeekday | SmoothRole::DistWeekend => {
                (TermShape::OneD { q: q_d }, (1..q_d).collect())
            }
            SmoothRole::Time => (TermShape::OneD { q: q_t }, (1..q_t).collect()),
            SmoothRole::TensorDistTime => {
                let kept = (1..q_d)
                    .flat_map(|j| (1..q_t).map(move |k| j * q_t + k))
                    .collect();
                (TermShape::Tensor { q1: q_d, q2: q_t }, kept)
            }
        };
        let blocks = penalty_for(shape, 0);
        for (block, &lambda_index) in blocks.iter().zip(&s.lambda_indices) {
            out.push(Penalty {
                lambda_index,
                matrix: embed_restricted(block, &kept, s.col_start, layout.p),
            });
        }
    }
    out
}

fn embed_restricted(
    block: &PenaltyBlock,
    kept: &[usize],
    col_start: usize,
    p: usize,
) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, p);
    for (a, &ia) in kept.iter().enumerate() {
        for (b, &ib) in kept.iter().enumerate() {
            let v = block.matrix[(ia, ib)];
            if v != 0.0 {
                m[(col_start + a, col_start + b)] = v;
            }
        }
    }
    m
}

/// Imputation table for the previous-bus feature: mean observed value near
/// each subsequent stop, with a global fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputeTable {
    /// (distance beyond stop, mean t_last among training rows nearest it).
    pub bins: Vec<(f64, f64)>,
    pub global_mean: f64,
}

impl ImputeTable {
    pub fn empty() -> ImputeTable {
        ImputeTable { bins: Vec::new(), global_mean: 0.0 }
    }

    pub fn lookup(&self, dist: f64) -> f64 {
        self.bins
            .iter()
            .min_by(|a, b| (a.0 - dist).abs().partial_cmp(&(b.0 - dist).abs()).unwrap())
            .map(|&(_, v)| v)
            .unwrap_or(self.global_mean)
    }

    fn build(stop_dists_rel: &[f64], rows: &[(f64, f64)]) -> ImputeTable {
        if rows.is_empty() {
            return ImputeTable::empty();
        }
        let global_mean = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
        let mut acc: Vec<(f64, usize)> = vec![(0.0, 0); stop_dists_rel.len()];
        for &(d, v) in rows {
            if let Some(i) = nearest_index(stop_dists_rel, d) {
                acc[i].0 += v;
                acc[i].1 += 1;
            }
        }
        let bins = stop_dists_rel
            .iter()
            .zip(acc)
            .filter(|(_, (_, n))| *n > 0)
            .map(|(&d, (sum, n))| (d, sum / n as f64))
            .collect();
        ImputeTable { bins, global_mean }
    }
}

fn nearest_index(sorted: &[f64], x: f64) -> Option<usize> {
    if sorted.is_empty() {
        return None;
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &v) in sorted.iter().enumerate() {
        let d = (v - x).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    Some(best)
}

/// A fully assembled training problem for one stop.
#[derive(Debug)]
pub struct Assembled {
    pub design: DesignMatrix,
    pub penalties: Vec<Penalty>,
    pub layout: TermLayout,
    /// Trajectory id per row.
    pub groups: Vec<String>,
    pub n_traj_used: usize,
    pub dropped_missing_tlast: usize,
    pub weekend_dropped: bool,
    pub tlast_impute: ImputeTable,
}

/// Raw per-row features extracted from a history.
pub(crate) fn training_features(
    history: &HistorySet,
    extended: bool,
) -> (Vec<(FeatureRow, f64, String)>, usize) {
    let mut rows = Vec::new();
    let mut dropped = 0usize;
    for traj in &history.trajectories {
        let weekend = traj.departure_instant.is_weekend();
        let time_h = traj.departure_instant.hour_of_day();
        let group = format!("{}@{}", traj.bus_id, traj.departure_instant.0);
        for &(dist, t) in &traj.points {
            let t_last = super::bank::last_bus_feature(history, traj.departure_instant, dist);
            if extended && t_last.is_none() {
                dropped += 1;
                continue;
            }
            rows.push((FeatureRow { dist, time_h, weekend, t_last }, t, group.clone()));
        }
    }
    (rows, dropped)
}

/// Assemble the penalized regression problem for one stop's history.
///
/// Knots sit at the interior stops beyond k in distance space and equally
/// spaced in departure-time space; both are frozen into the layout. For
/// extended models, rows whose previous-bus feature is unavailable are
/// dropped (and counted), and an all-one-class weekend column demotes the
/// model to a single distance smooth.
pub fn assemble_training(
    history: &HistorySet,
    route: &RouteGeometry,
    spec: &ModelSpec,
) -> Result<Assembled, ModelError> {
    let k = history.stop_index;
    let p_k = route.stops[k];
    let domain_hi = route.total_length() - p_k;
    let (rows, dropped_missing_tlast) = training_features(history, spec.kind.extended());
    if rows.is_empty() {
        return Err(ModelError::EmptyHistory);
    }

    // Distance basis: one knot at each interior stop beyond k, in km.
    let rel_stops: Vec<f64> = route.stops[k + 1..].iter().map(|p| p - p_k).collect();
    let rel_stops_km: Vec<f64> = rel_stops.iter().map(|d| d / 1000.0).collect();
    let dist_knots = crate::basis::knots_at_stops(&rel_stops_km, (0.0, domain_hi / 1000.0));
    let dist_basis = SplineBasis::new(spec.basis, dist_knots, (0.0, domain_hi / 1000.0))?;

    // Time basis: equally spaced knots over the observed departure hours.
    let (mut t_lo, mut t_hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, r| {
        (acc.0.min(r.0.time_h), acc.1.max(r.0.time_h))
    });
    if !(t_lo < t_hi) {
        t_lo -= 0.5;
        t_hi += 0.5;
    }
    let time_basis =
        SplineBasis::new(spec.basis, crate::basis::knots_equally_spaced(spec.time_knots, t_lo, t_hi), (t_lo, t_hi))?;

    // Degenerate weekend: a single class in training drops the weekend terms.
    let has_weekend = rows.iter().any(|r| r.0.weekend);
    let has_weekday = rows.iter().any(|r| !r.0.weekend);
    let weekend_active = has_weekend && has_weekday;
    let weekend_dropped = spec.kind.extended() && !weekend_active;

    let mut lay = layout(spec.kind, dist_basis, time_basis, weekend_active);

    let tlast_impute = if spec.kind.extended() {
        let pairs: Vec<(f64, f64)> =
            rows.iter().filter_map(|r| r.0.t_last.map(|v| (r.0.dist, v))).collect();
        ImputeTable::build(&rel_stops, &pairs)
    } else {
        ImputeTable::empty()
    };

    // Raw rows (centering still zero), then center the smooth columns.
    let n = rows.len();
    let mut x = DMatrix::zeros(n, lay.p);
    let mut y = DVector::zeros(n);
    let mut groups = Vec::with_capacity(n);
    for (i, (f, t, group)) in rows.iter().enumerate() {
        let values = FeatureValues {
            dist: f.dist,
            time_h: f.time_h,
            weekend: f64::from(u8::from(f.weekend)),
            t_last: f.t_last.unwrap_or(0.0),
        };
        let row = build_row(&lay, &values)?;
        for (j, v) in row.into_iter().enumerate() {
            x[(i, j)] = v;
        }
        y[i] = *t;
        groups.push(group.clone());
    }
    for s in &mut lay.smooths {
        for c in 0..s.width {
            let col = s.col_start + c;
            let mean = x.column(col).sum() / n as f64;
            let var = x.column(col).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
            s.centering[c] = mean;
            s.scaling[c] = scale;
            for i in 0..n {
                x[(i, col)] = (x[(i, col)] - mean) / scale;
            }
        }
    }

    let penalties = layout_penalties(&lay);
    let design = DesignMatrix::new(x, y, lay.term_blocks())?;
    let mut distinct: Vec<&String> = groups.iter().collect();
    distinct.sort();
    distinct.dedup();
    let n_traj_used = distinct.len();

    Ok(Assembled {
        design,
        penalties,
        layout: lay,
        groups,
        n_traj_used,
        dropped_missing_tlast,
        weekend_dropped,
        tlast_impute,
    })
}
