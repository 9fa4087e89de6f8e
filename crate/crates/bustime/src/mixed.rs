//! Per-trajectory random intercept on top of the penalized fit.
//!
//! The model adds b_g ~ N(0, sigma_b^2) per trajectory to the fixed
//! penalized-spline mean, with residuals e ~ N(0, sigma_eps^2). Fitting is
//! two-stage: smoothness parameters come from the GCV optimum of the
//! fixed-effects model and stay frozen; the variance components then maximize
//! the Gaussian marginal likelihood with the fixed coefficients profiled out
//! by penalized generalized least squares at each candidate variance ratio.
//! The ratio search is a derivative-free golden section over
//! log(sigma_b^2/sigma_eps^2) with sigma_eps^2 profiled in closed form.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::fit::{
    self, lambda_count, optimize_lambdas, penalty_sum, solve_spd, DesignMatrix, FitError,
    LambdaGrid, Penalty, PenalizedFit,
};

const RATIO_LO: f64 = 1e-8;
const RATIO_HI: f64 = 1e8;
const MAX_ITERATIONS: usize = 200;
const LOGLIK_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MixedError {
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("mixed model needs at least 2 groups, found {0}")]
    TooFewGroups(usize),
    #[error("groups must assign one id per design row ({expected} rows, {found} ids)")]
    GroupLen { expected: usize, found: usize },
    #[error("row weights are not supported in the mixed model")]
    Weighted,
    #[error("variance search did not converge after {iterations} iterations; trace: {trace:?}")]
    NonConvergence { iterations: usize, trace: Vec<(f64, f64)> },
    #[error("BLUP needs at least one observed response")]
    NoObservations,
}

/// A fitted additive mixed model.
#[derive(Debug, Clone)]
pub struct MixedFit {
    /// Fixed-effects fit: coefficients are the penalized GLS estimates at the
    /// selected variance ratio; smoothness diagnostics are from the
    /// fixed-effects stage.
    pub base: PenalizedFit,
    pub sigma2_b: f64,
    pub sigma2_eps: f64,
    /// Trajectory id per training row.
    pub group_ids: Vec<String>,
    /// True when sigma2_b was pinned at the zero boundary.
    pub boundary: bool,
    /// Profiled marginal log-likelihood at the optimum.
    pub loglik: f64,
    pub iterations: usize,
    /// Degrees of freedom absorbed by the random intercepts.
    pub edf_random: f64,
    /// Adjusted R^2 with the training BLUPs included in the fitted values.
    pub adj_r2: f64,
}

/// Group bookkeeping shared by the likelihood evaluations.
struct GroupedDesign {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    n: f64,
    tss: f64,
    /// Row sums of X per group (G x p).
    u: DMatrix<f64>,
    /// Sum of y per group.
    s: DVector<f64>,
    /// Rows per group.
    m: Vec<f64>,
    /// Group index per row.
    row_group: Vec<usize>,
}

fn group_design(design: &DesignMatrix, groups: &[String]) -> Result<GroupedDesign, MixedError> {
    if design.weights.is_some() {
        return Err(MixedError::Weighted);
    }
    let n_rows = design.n_rows();
    if groups.len() != n_rows {
        return Err(MixedError::GroupLen { expected: n_rows, found: groups.len() });
    }
    let mut labels: Vec<String> = Vec::new();
    let mut index: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    let mut row_group = Vec::with_capacity(n_rows);
    for g in groups {
        let idx = *index.entry(g.as_str()).or_insert_with(|| {
            labels.push(g.clone());
            labels.len() - 1
        });
        row_group.push(idx);
    }
    if labels.len() < 2 {
        return Err(MixedError::TooFewGroups(labels.len()));
    }
    let p = design.p();
    let n_groups = labels.len();
    let mut u = DMatrix::zeros(n_groups, p);
    let mut s = DVector::zeros(n_groups);
    let mut m = vec![0.0; n_groups];
    for r in 0..n_rows {
        let g = row_group[r];
        for j in 0..p {
            u[(g, j)] += design.x[(r, j)];
        }
        s[g] += design.y[r];
        m[g] += 1.0;
    }
    let xtx = design.x.transpose() * &design.x;
    let xty = design.x.transpose() * &design.y;
    let yty = design.y.dot(&design.y);
    let n = n_rows as f64;
    let mean = design.y.sum() / n;
    let tss = design.y.iter().map(|v| (v - mean).powi(2)).sum();
    Ok(GroupedDesign { xtx, xty, yty, n, tss, u, s, m, row_group })
}

/// Penalized GLS at variance ratio gamma = sigma_b^2 / sigma_eps^2 and the
/// quantities needed for the marginal likelihood. W = I + gamma Z Z' is block
/// diagonal per group, so X'W^-1X is a rank-G downdate of X'X.
struct GlsEval {
    beta: DVector<f64>,
    /// r' W^-1 r at the GLS solution.
    rss_w: f64,
    /// sum_g log(1 + gamma m_g)
    log_det_w: f64,
}

fn gls_at(gd: &GroupedDesign, s_pen: &DMatrix<f64>, ridge_unit: f64, gamma: f64) -> GlsEval {
    let p = gd.xtx.nrows();
    let mut axx = gd.xtx.clone();
    let mut axy = gd.xty.clone();
    let mut ywy = gd.yty;
    let mut log_det_w = 0.0;
    for g in 0..gd.m.len() {
        let c = gamma / (1.0 + gamma * gd.m[g]);
        log_det_w += (1.0 + gamma * gd.m[g]).ln();
        if c != 0.0 {
            let ug = gd.u.row(g);
            for i in 0..p {
                let cui = c * ug[i];
                axy[i] -= cui * gd.s[g];
                for j in i..p {
                    axx[(i, j)] -= cui * ug[j];
                }
            }
            ywy -= c * gd.s[g] * gd.s[g];
        }
    }
    for i in 0..p {
        for j in 0..i {
            axx[(i, j)] = axx[(j, i)];
        }
    }
    let a = &axx + s_pen;
    let (beta, _inv, _ridge, _cond, _min_norm) = solve_spd(a, &axy, ridge_unit);
    let rss_w = (ywy - 2.0 * beta.dot(&axy) + (&axx * &beta).dot(&beta)).max(1e-300);
    GlsEval { beta, rss_w, log_det_w }
}

/// Marginal Gaussian log-likelihood at (sigma_b^2, sigma_eps^2) with the
/// penalized GLS coefficients profiled in at the implied variance ratio.
pub fn profiled_loglik(
    design: &DesignMatrix,
    groups: &[String],
    penalties: &[Penalty],
    lambdas: &[f64],
    sigma2_b: f64,
    sigma2_eps: f64,
) -> Result<f64, MixedError> {
    let gd = group_design(design, groups)?;
    let p = design.p();
    let s_pen = penalty_sum(penalties, lambdas, p);
    let ridge_unit = 1e-10 * gd.xtx.trace() / p as f64;
    let gamma = sigma2_b / sigma2_eps;
    let ev = gls_at(&gd, &s_pen, ridge_unit, gamma);
    Ok(loglik_from(&gd, &ev, sigma2_eps))
}

fn loglik_from(gd: &GroupedDesign, ev: &GlsEval, sigma2_eps: f64) -> f64 {
    -0.5 * (gd.n * (2.0 * std::f64::consts::PI * sigma2_eps).ln()
        + ev.log_det_w
        + ev.rss_w / sigma2_eps)
}

/// Fit the mixed model: GCV-selected smoothness from the fixed-effects model,
/// then maximum likelihood in the variance components.
pub fn fit_mixed(
    design: &DesignMatrix,
    groups: &[String],
    penalties: &[Penalty],
    grid: &LambdaGrid,
) -> Result<MixedFit, MixedError> {
    let fixed = if lambda_count(penalties) == 0 {
        fit::fit_at(design, penalties, &[])?
    } else {
        optimize_lambdas(design, penalties, grid)?
    };
    fit_mixed_with_fixed(design, groups, penalties, fixed)
}

/// Same as [`fit_mixed`] but reusing an already selected fixed-effects fit
/// (the smoothness parameters are frozen at `fixed.lambdas`).
pub fn fit_mixed_with_fixed(
    design: &DesignMatrix,
    groups: &[String],
    penalties: &[Penalty],
    fixed: PenalizedFit,
) -> Result<MixedFit, MixedError> {
    let gd = group_design(design, groups)?;
    let p = design.p();
    let s_pen = penalty_sum(penalties, &fixed.lambdas, p);
    let ridge_unit = 1e-10 * gd.xtx.trace() / p as f64;

    // Profiled log-likelihood of t = ln(gamma).
    let profile = |t: f64| -> (f64, GlsEval, f64) {
        let gamma = t.exp();
        let ev = gls_at(&gd, &s_pen, ridge_unit, gamma);
        let sigma2_eps = ev.rss_w / gd.n;
        let ll = loglik_from(&gd, &ev, sigma2_eps);
        (ll, ev, sigma2_eps)
    };

    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let mut lo = RATIO_LO.ln();
    let mut hi = RATIO_HI.ln();
    let mut c = hi - golden * (hi - lo);
    let mut d = lo + golden * (hi - lo);
    let mut fc = profile(c).0;
    let mut fd = profile(d).0;
    let mut iterations = 2;
    let mut trace = vec![(c.exp(), fc), (d.exp(), fd)];
    let mut prev_best = fc.max(fd);
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - golden * (hi - lo);
            fc = profile(c).0;
            trace.push((c.exp(), fc));
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + golden * (hi - lo);
            fd = profile(d).0;
            trace.push((d.exp(), fd));
        }
        iterations += 1;
        let best = fc.max(fd);
        // Stop once the likelihood has stabilized and the bracket is tight;
        // the extra width requirement keeps flat tails from stopping early
        // and pins the ratio precisely enough for gradient checks at the
        // optimum.
        if (best - prev_best).abs() < LOGLIK_TOL && (hi - lo) < 1e-6 {
            converged = true;
        }
        if (hi - lo) < 1e-10 {
            converged = true;
        }
        if converged {
            break;
        }
        prev_best = best;
    }
    if !converged {
        let tail = trace.split_off(trace.len().saturating_sub(8));
        return Err(MixedError::NonConvergence { iterations, trace: tail });
    }

    let t_opt = if fc >= fd { c } else { d };
    let f_opt = fc.max(fd);
    // Boundary detection: when the likelihood at the zero end of the search
    // range matches the optimum, the data cannot distinguish the fit from
    // sigma_b^2 = 0 and the estimate is pinned there.
    let f_lo = profile(RATIO_LO.ln()).0;
    let boundary = t_opt <= RATIO_LO.ln() + 1e-3 || f_lo >= f_opt - 10.0 * LOGLIK_TOL;
    let gamma = if boundary { 0.0 } else { t_opt.exp() };
    let ev = gls_at(&gd, &s_pen, ridge_unit, gamma);
    let sigma2_eps = ev.rss_w / gd.n;
    let loglik = loglik_from(&gd, &ev, sigma2_eps);
    let sigma2_b = gamma * sigma2_eps;

    // Training BLUPs and the random-effect degrees of freedom, for the
    // reported fit quality.
    let mut edf_random = 0.0;
    let mut blups = vec![0.0; gd.m.len()];
    for g in 0..gd.m.len() {
        let shrink = gamma * gd.m[g] / (1.0 + gamma * gd.m[g]);
        edf_random += shrink;
        let resid_sum = gd.s[g] - gd.u.row(g).transpose().dot(&ev.beta);
        blups[g] = if gd.m[g] > 0.0 { shrink * resid_sum / gd.m[g] } else { 0.0 };
    }
    let mut rss_cond = 0.0;
    for r in 0..design.n_rows() {
        let fitted = design.x.row(r).transpose().dot(&ev.beta) + blups[gd.row_group[r]];
        rss_cond += (design.y[r] - fitted).powi(2);
    }
    let edf_total = fixed.edf + edf_random;
    let denom = gd.n - edf_total;
    let adj_r2 = if gd.tss > 0.0 && denom > 0.0 {
        1.0 - (rss_cond / denom) / (gd.tss / (gd.n - 1.0))
    } else {
        f64::NAN
    };

    let base = PenalizedFit { beta: ev.beta, ..fixed };
    Ok(MixedFit {
        base,
        sigma2_b,
        sigma2_eps,
        group_ids: groups.to_vec(),
        boundary,
        loglik,
        iterations,
        edf_random,
        adj_r2,
    })
}

/// Predict the random intercept of a new trajectory from its observed rows.
///
/// With Z a column of ones over the m observations and mean residual rbar,
/// the general predictor sigma_u^2 Z' V^-1 (y - Xb) collapses to
/// `m sigma_b^2 rbar / (m sigma_b^2 + sigma_eps^2)`.
pub fn blup_intercept(
    fit: &MixedFit,
    rows: &[Vec<f64>],
    responses: &[f64],
) -> Result<f64, MixedError> {
    if rows.is_empty() || responses.len() != rows.len() {
        return Err(MixedError::NoObservations);
    }
    let m = rows.len() as f64;
    let mut resid_sum = 0.0;
    for (row, &y) in rows.iter().zip(responses) {
        resid_sum += y - fit::predict_linear(&fit.base, row)?;
    }
    let rbar = resid_sum / m;
    Ok(m * fit.sigma2_b * rbar / (m * fit.sigma2_b + fit.sigma2_eps))
}

/// Fixed-effects prediction shifted by the trajectory's predicted intercept.
pub fn predict_mixed(fit: &MixedFit, b0: f64, row: &[f64]) -> Result<f64, MixedError> {
    Ok(fit::predict_linear(&fit.base, row)? + b0)
}
