//! Penalized least squares with GCV smoothness selection.
//!
//! The Gaussian penalized likelihood reduces to minimizing
//! `||y - X b||^2 + sum_i lambda_i b' D_i b`, solved through the normal
//! equations `(X'X + sum lambda_i D_i) b = X'y` with a symmetric positive
//! definite factorization. Smoothness parameters are chosen by exhaustive
//! grid search on the GCV score `n RSS / (n - tr A)^2`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

/// Condition-estimate threshold beyond which the ridge fallback engages.
const CONDITION_LIMIT: f64 = 1e12;
/// Ridge fallback magnitude, as a multiple of trace(X'X)/p.
const RIDGE_SCALE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("design matrix contains non-finite values")]
    NonFinite,
    #[error("term blocks overlap or exceed the design width")]
    BlockLayout,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dim { expected: usize, found: usize },
    #[error("smoothness parameters must be finite and >= 0")]
    BadLambda,
    #[error("lambda grid must supply values for {expected} parameters, found {found}")]
    GridSize { expected: usize, found: usize },
    #[error("lambda grid contains an empty axis")]
    EmptyGrid,
    #[error("every grid point has infinite GCV; the model is too rich for the data")]
    AllInfiniteScores,
    #[error("weights must be positive and match the row count")]
    BadWeights,
}

/// A contiguous column range of the design belonging to one model term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermBlock {
    pub name: String,
    pub cols: Range<usize>,
    pub centered: bool,
}

/// Dense design matrix with response and optional row weights.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Row weights; an internal generalization used for replication
    /// consistency, nothing in the modeling stack sets them.
    pub weights: Option<DVector<f64>>,
    pub blocks: Vec<TermBlock>,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, blocks: Vec<TermBlock>) -> Result<Self, FitError> {
        if y.len() != x.nrows() {
            return Err(FitError::Dim { expected: x.nrows(), found: y.len() });
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(FitError::NonFinite);
        }
        let p = x.ncols();
        let mut seen = vec![false; p];
        for b in &blocks {
            if b.cols.end > p {
                return Err(FitError::BlockLayout);
            }
            for c in b.cols.clone() {
                if seen[c] {
                    return Err(FitError::BlockLayout);
                }
                seen[c] = true;
            }
        }
        Ok(DesignMatrix { x, y, weights: None, blocks })
    }

    pub fn with_weights(mut self, weights: DVector<f64>) -> Result<Self, FitError> {
        if weights.len() != self.x.nrows() || weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(FitError::BadWeights);
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// A penalty matrix embedded at full design width, scaled by the smoothness
/// parameter it indexes.
#[derive(Debug, Clone)]
pub struct Penalty {
    pub lambda_index: usize,
    pub matrix: DMatrix<f64>,
}

pub fn lambda_count(penalties: &[Penalty]) -> usize {
    penalties.iter().map(|p| p.lambda_index + 1).max().unwrap_or(0)
}

/// Per-parameter grids of candidate smoothness values.
#[derive(Debug, Clone)]
pub struct LambdaGrid {
    pub per_lambda: Vec<Vec<f64>>,
}

impl LambdaGrid {
    pub fn log_spaced(n_lambdas: usize, points: usize, lo: f64, hi: f64) -> Self {
        let axis: Vec<f64> = if points <= 1 {
            vec![lo]
        } else {
            (0..points)
                .map(|i| {
                    let t = i as f64 / (points - 1) as f64;
                    10f64.powf(lo.log10() + t * (hi.log10() - lo.log10()))
                })
                .collect()
        };
        LambdaGrid { per_lambda: vec![axis; n_lambdas] }
    }

    /// The default search: 7 points per parameter, log-spaced on [1e-4, 1e4].
    pub fn default_for(n_lambdas: usize) -> Self {
        Self::log_spaced(n_lambdas, 7, 1e-4, 1e4)
    }

    pub fn combos(&self) -> usize {
        self.per_lambda.iter().map(|a| a.len()).product()
    }

    fn combo(&self, mut idx: usize) -> Vec<f64> {
        // Mixed radix, last axis fastest: ascending idx is ascending
        // lexicographic order of the lambda tuple.
        let mut out = vec![0.0; self.per_lambda.len()];
        for axis in (0..self.per_lambda.len()).rev() {
            let len = self.per_lambda[axis].len();
            out[axis] = self.per_lambda[axis][idx % len];
            idx /= len;
        }
        out
    }
}

/// Result of one penalized solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub beta: DVector<f64>,
    pub ridge_added: f64,
    pub condition_estimate: f64,
    pub min_norm: bool,
}

/// A fitted penalized model with its selection diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedFit {
    pub beta: DVector<f64>,
    pub lambdas: Vec<f64>,
    /// Effective degrees of freedom, trace of the hat matrix.
    pub edf: f64,
    pub sigma2_eps: f64,
    pub adj_r2: f64,
    pub gcv: f64,
    pub rss: f64,
    /// Effective sample size (sum of weights).
    pub n: f64,
    pub ridge_added: f64,
}

/// Cached weighted normal equations, shared across grid evaluations.
pub(crate) struct NormalEq {
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yty: f64,
    pub n: f64,
    pub tss: f64,
}

impl NormalEq {
    pub(crate) fn from_design(d: &DesignMatrix) -> NormalEq {
        let p = d.p();
        match &d.weights {
            None => {
                let xtx = d.x.transpose() * &d.x;
                let xty = d.x.transpose() * &d.y;
                let yty = d.y.dot(&d.y);
                let n = d.n_rows() as f64;
                let mean = d.y.sum() / n;
                let tss = d.y.iter().map(|v| (v - mean).powi(2)).sum();
                NormalEq { xtx, xty, yty, n, tss }
            }
            Some(w) => {
                let mut xtx = DMatrix::zeros(p, p);
                let mut xty = DVector::zeros(p);
                let mut yty = 0.0;
                let mut n = 0.0;
                let mut sy = 0.0;
                for r in 0..d.n_rows() {
                    let wr = w[r];
                    let row = d.x.row(r);
                    for i in 0..p {
                        let wxi = wr * row[i];
                        xty[i] += wxi * d.y[r];
                        for j in i..p {
                            xtx[(i, j)] += wxi * row[j];
                        }
                    }
                    yty += wr * d.y[r] * d.y[r];
                    n += wr;
                    sy += wr * d.y[r];
                }
                for i in 0..p {
                    for j in 0..i {
                        xtx[(i, j)] = xtx[(j, i)];
                    }
                }
                let mean = sy / n;
                let tss = (0..d.n_rows()).map(|r| w[r] * (d.y[r] - mean).powi(2)).sum();
                NormalEq { xtx, xty, yty, n, tss }
            }
        }
    }

    fn ridge_unit(&self) -> f64 {
        RIDGE_SCALE * self.xtx.trace() / self.xtx.nrows() as f64
    }
}

pub(crate) fn penalty_sum(penalties: &[Penalty], lambdas: &[f64], p: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(p, p);
    for pen in penalties {
        let l = lambdas[pen.lambda_index];
        if l != 0.0 {
            s += &pen.matrix * l;
        }
    }
    s
}

fn validate_lambdas(penalties: &[Penalty], lambdas: &[f64]) -> Result<(), FitError> {
    let need = lambda_count(penalties);
    if lambdas.len() < need {
        return Err(FitError::GridSize { expected: need, found: lambdas.len() });
    }
    if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(FitError::BadLambda);
    }
    Ok(())
}

/// Factor A = X'X + S symmetrically; falls back to a small ridge when the
/// condition estimate exceeds 1e12 and to an SVD pseudo-inverse (minimum-norm
/// solution) if the factorization still fails.
pub(crate) fn solve_spd(
    a: DMatrix<f64>,
    b: &DVector<f64>,
    ridge_unit: f64,
) -> (DVector<f64>, DMatrix<f64>, f64, f64, bool) {
    let p = a.nrows();
    // The reported condition estimate is the one that decided the path: the
    // clean factorization's estimate when it is accepted, otherwise the value
    // that triggered the ridge fallback (infinite when not factorizable).
    let detected_cond;
    if let Some(chol) = nalgebra::Cholesky::new(a.clone()) {
        let cond = chol_condition(&chol);
        if cond <= CONDITION_LIMIT {
            let beta = chol.solve(b);
            let inv = chol.inverse();
            return (beta, inv, 0.0, cond, false);
        }
        detected_cond = cond;
    } else {
        detected_cond = f64::INFINITY;
    }
    let ridged = &a + DMatrix::identity(p, p) * ridge_unit;
    if let Some(chol) = nalgebra::Cholesky::new(ridged.clone()) {
        let beta = chol.solve(b);
        let inv = chol.inverse();
        return (beta, inv, ridge_unit, detected_cond, false);
    }
    // Last resort: minimum-norm solution through the pseudo-inverse.
    let pinv = ridged
        .pseudo_inverse(1e-12)
        .unwrap_or_else(|_| DMatrix::zeros(p, p));
    let beta = &pinv * b;
    (beta, pinv, ridge_unit, detected_cond, true)
}

fn chol_condition(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    let l = chol.l_dirty();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..l.nrows() {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).powi(2)
    }
}

pub(crate) struct LambdaEval {
    pub beta: DVector<f64>,
    pub rss: f64,
    pub edf: f64,
    pub gcv: f64,
    pub ridge_added: f64,
    pub condition: f64,
    pub min_norm: bool,
}

pub(crate) fn eval_lambdas(ne: &NormalEq, penalties: &[Penalty], lambdas: &[f64]) -> LambdaEval {
    let p = ne.xtx.nrows();
    let a = &ne.xtx + penalty_sum(penalties, lambdas, p);
    let (beta, a_inv, ridge_added, condition, min_norm) = solve_spd(a, &ne.xty, ne.ridge_unit());
    // edf = tr(A^-1 X'X); both symmetric, so the trace is the elementwise dot.
    let edf: f64 = a_inv.iter().zip(ne.xtx.iter()).map(|(u, v)| u * v).sum();
    let rss = (ne.yty - 2.0 * beta.dot(&ne.xty) + (&ne.xtx * &beta).dot(&beta)).max(0.0);
    let denom = ne.n - edf;
    let gcv = if denom > 1e-9 { ne.n * rss / (denom * denom) } else { f64::INFINITY };
    LambdaEval { beta, rss, edf, gcv, ridge_added, condition, min_norm }
}

/// Minimize `||y - X b||^2 + sum_i lambda_i b' D_i b` over b.
pub fn solve_penalized(
    design: &DesignMatrix,
    penalties: &[Penalty],
    lambdas: &[f64],
) -> Result<Solution, FitError> {
    validate_lambdas(penalties, lambdas)?;
    let ne = NormalEq::from_design(design);
    let ev = eval_lambdas(&ne, penalties, lambdas);
    Ok(Solution {
        beta: ev.beta,
        ridge_added: ev.ridge_added,
        condition_estimate: ev.condition,
        min_norm: ev.min_norm,
    })
}

/// Effective degrees of freedom tr(A(lambda)) where A is the hat matrix
/// X (X'X + S)^-1 X', computed on the p-dimensional side without forming the
/// n-by-n matrix.
pub fn hat_trace(
    design: &DesignMatrix,
    penalties: &[Penalty],
    lambdas: &[f64],
) -> Result<f64, FitError> {
    validate_lambdas(penalties, lambdas)?;
    let ne = NormalEq::from_design(design);
    Ok(eval_lambdas(&ne, penalties, lambdas).edf)
}

/// GCV(lambda) = n RSS / (n - tr A)^2, infinite when the fit interpolates.
pub fn gcv_score(
    design: &DesignMatrix,
    penalties: &[Penalty],
    lambdas: &[f64],
) -> Result<f64, FitError> {
    validate_lambdas(penalties, lambdas)?;
    let ne = NormalEq::from_design(design);
    Ok(eval_lambdas(&ne, penalties, lambdas).gcv)
}

/// Exhaustive grid search over the Cartesian product of per-parameter
/// candidate values; ties break toward the lexicographically larger tuple
/// (larger smoothness). Grid points evaluate independently in parallel.
pub fn optimize_lambdas(
    design: &DesignMatrix,
    penalties: &[Penalty],
    grid: &LambdaGrid,
) -> Result<PenalizedFit, FitError> {
    let need = lambda_count(penalties);
    if grid.per_lambda.len() != need {
        return Err(FitError::GridSize { expected: need, found: grid.per_lambda.len() });
    }
    if grid.per_lambda.iter().any(|a| a.is_empty()) {
        return Err(FitError::EmptyGrid);
    }
    for axis in &grid.per_lambda {
        if axis.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(FitError::BadLambda);
        }
    }
    let ne = NormalEq::from_design(design);
    let total = grid.combos();
    let scores: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let lambdas = grid.combo(idx);
            let s = eval_lambdas(&ne, penalties, &lambdas).gcv;
            if s.is_nan() {
                f64::INFINITY
            } else {
                s
            }
        })
        .collect();
    let mut best_idx = 0usize;
    let mut best_score = f64::INFINITY;
    for (idx, &s) in scores.iter().enumerate() {
        if s <= best_score {
            best_score = s;
            best_idx = idx;
        }
    }
    if best_score.is_infinite() {
        return Err(FitError::AllInfiniteScores);
    }
    let lambdas = grid.combo(best_idx);
    let ev = eval_lambdas(&ne, penalties, &lambdas);
    Ok(finish_fit(&ne, ev, lambdas))
}

pub(crate) fn finish_fit(ne: &NormalEq, ev: LambdaEval, lambdas: Vec<f64>) -> PenalizedFit {
    let denom = ne.n - ev.edf;
    let sigma2_eps = if denom > 0.0 { ev.rss / denom } else { f64::NAN };
    let adj_r2 = if ne.tss > 0.0 && denom > 0.0 {
        1.0 - (ev.rss / denom) / (ne.tss / (ne.n - 1.0))
    } else {
        f64::NAN
    };
    PenalizedFit {
        beta: ev.beta,
        lambdas,
        edf: ev.edf,
        sigma2_eps,
        adj_r2,
        gcv: ev.gcv,
        rss: ev.rss,
        n: ne.n,
        ridge_added: ev.ridge_added,
    }
}

/// Fit at fixed smoothness parameters, with full diagnostics.
pub fn fit_at(
    design: &DesignMatrix,
    penalties: &[Penalty],
    lambdas: &[f64],
) -> Result<PenalizedFit, FitError> {
    validate_lambdas(penalties, lambdas)?;
    let ne = NormalEq::from_design(design);
    let ev = eval_lambdas(&ne, penalties, lambdas);
    Ok(finish_fit(&ne, ev, lambdas.to_vec()))
}

/// Inner product of the coefficient vector with one (already centered)
/// design row.
pub fn predict_linear(fit: &PenalizedFit, row: &[f64]) -> Result<f64, FitError> {
    if row.len() != fit.beta.len() {
        return Err(FitError::Dim { expected: fit.beta.len(), found: row.len() });
    }
    Ok(row.iter().zip(fit.beta.iter()).map(|(a, b)| a * b).sum())
}
