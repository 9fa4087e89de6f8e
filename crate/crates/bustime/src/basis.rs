//! Spline basis expansions and their penalty matrices.
//!
//! Two one-dimensional families are provided: the truncated linear basis
//! `{1, x, (x - t_j)+}` and the cubic basis `{1, x, |x - t_j|^3}`. Bivariate
//! terms use the tensor product of two marginal bases. Penalties are
//! `diag(0, 0, 1, ..., 1)` per marginal: constant and linear directions stay
//! unpenalized, knot coefficients are shrunk.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("knots must be strictly increasing, got {0} then {1}")]
    KnotOrder(f64, f64),
    #[error("knot {0} lies outside the open domain ({1}, {2})")]
    KnotDomain(f64, f64, f64),
    #[error("domain is empty: [{0}, {1}]")]
    EmptyDomain(f64, f64),
    #[error("basis evaluated at non-finite x")]
    NonFiniteInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BasisKind {
    TruncatedLinear,
    #[default]
    Cubic,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::TruncatedLinear => "truncated_linear",
            BasisKind::Cubic => "cubic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "truncated_linear" => Some(BasisKind::TruncatedLinear),
            "cubic" => Some(BasisKind::Cubic),
            _ => None,
        }
    }
}

/// A one-dimensional spline basis with q = #knots + 2 functions.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    pub kind: BasisKind,
    pub knots: Vec<f64>,
    pub domain: (f64, f64),
}

impl SplineBasis {
    pub fn new(kind: BasisKind, knots: Vec<f64>, domain: (f64, f64)) -> Result<Self, BasisError> {
        if !(domain.0 < domain.1) {
            return Err(BasisError::EmptyDomain(domain.0, domain.1));
        }
        for w in knots.windows(2) {
            if w[1] <= w[0] {
                return Err(BasisError::KnotOrder(w[0], w[1]));
            }
        }
        for &t in &knots {
            if t <= domain.0 || t >= domain.1 {
                return Err(BasisError::KnotDomain(t, domain.0, domain.1));
            }
        }
        Ok(SplineBasis { kind, knots, domain })
    }

    /// Number of basis functions.
    pub fn q(&self) -> usize {
        self.knots.len() + 2
    }

    /// Evaluate all basis functions at x: `[1, x, phi_1(x), ...]`.
    ///
    /// The basis is globally defined; inputs outside the training domain are
    /// evaluated as-is, without clamping.
    pub fn eval_row(&self, x: f64) -> Result<Vec<f64>, BasisError> {
        if !x.is_finite() {
            return Err(BasisError::NonFiniteInput);
        }
        let mut row = Vec::with_capacity(self.q());
        row.push(1.0);
        row.push(x);
        match self.kind {
            BasisKind::TruncatedLinear => {
                for &t in &self.knots {
                    row.push((x - t).max(0.0));
                }
            }
            BasisKind::Cubic => {
                for &t in &self.knots {
                    row.push((x - t).abs().powi(3));
                }
            }
        }
        Ok(row)
    }
}

/// Flattened outer product of two basis rows, row-major: the first factor
/// varies slowest.
pub fn tensor_row(row_a: &[f64], row_b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(row_a.len() * row_b.len());
    for &a in row_a {
        for &b in row_b {
            out.push(a * b);
        }
    }
    out
}

/// A penalty quadratic form `D` together with the index of the smoothness
/// parameter that scales it.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyBlock {
    pub matrix: DMatrix<f64>,
    pub lambda_index: usize,
}

/// Shape of a model term for penalty construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermShape {
    OneD { q: usize },
    Tensor { q1: usize, q2: usize },
}

/// Penalty matrices for a term, sized to the term's full basis expansion.
///
/// A 1-D term of q functions gets one `diag(0,0,1,...,1)` block. A tensor
/// term gets two blocks, `D_a (x) I` and `I (x) D_b`, each scaled by its own
/// smoothness parameter. Terms with no knot functions carry no penalty and
/// return no blocks (the term is purely linear).
pub fn penalty_for(term: TermShape, first_lambda_index: usize) -> Vec<PenaltyBlock> {
    match term {
        TermShape::OneD { q } => {
            if q <= 2 {
                return Vec::new();
            }
            let d = DMatrix::from_fn(q, q, |i, j| if i == j && i >= 2 { 1.0 } else { 0.0 });
            vec![PenaltyBlock { matrix: d, lambda_index: first_lambda_index }]
        }
        TermShape::Tensor { q1, q2 } => {
            let size = q1 * q2;
            let mut out = Vec::new();
            let mut lambda = first_lambda_index;
            if q1 > 2 {
                // D_a (x) I: penalizes knot functions of the first marginal.
                let d = DMatrix::from_fn(size, size, |i, j| {
                    if i == j && i / q2 >= 2 {
                        1.0
                    } else {
                        0.0
                    }
                });
                out.push(PenaltyBlock { matrix: d, lambda_index: lambda });
                lambda += 1;
            }
            if q2 > 2 {
                let d = DMatrix::from_fn(size, size, |i, j| {
                    if i == j && i % q2 >= 2 {
                        1.0
                    } else {
                        0.0
                    }
                });
                out.push(PenaltyBlock { matrix: d, lambda_index: lambda });
            }
            out
        }
    }
}

/// Interior knots at stop distances: stops strictly inside the open domain,
/// duplicates collapsed.
pub fn knots_at_stops(stop_dists: &[f64], domain: (f64, f64)) -> Vec<f64> {
    let mut knots: Vec<f64> =
        stop_dists.iter().copied().filter(|&d| d > domain.0 && d < domain.1).collect();
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    knots.dedup();
    knots
}

/// `count` equally spaced interior knots on [lo, hi].
pub fn knots_equally_spaced(count: usize, lo: f64, hi: f64) -> Vec<f64> {
    (1..=count).map(|i| lo + (hi - lo) * i as f64 / (count + 1) as f64).collect()
}
