//! Shared oracle helpers for the integration suites. These deliberately
//! reimplement the math the library computes, through a different route
//! (explicit loops and Gauss-Jordan inversion), so agreement is meaningful.

use nalgebra::{DMatrix, DVector};

/// Dense matrix inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gj_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let p = a.nrows();
    let mut m = a.clone();
    let mut inv = DMatrix::<f64>::identity(p, p);
    for col in 0..p {
        let mut piv = col;
        for r in col + 1..p {
            if m[(r, col)].abs() > m[(piv, col)].abs() {
                piv = r;
            }
        }
        assert!(m[(piv, col)].abs() > 1e-300, "oracle matrix is singular");
        m.swap_rows(col, piv);
        inv.swap_rows(col, piv);
        let d = m[(col, col)];
        for j in 0..p {
            m[(col, j)] /= d;
            inv[(col, j)] /= d;
        }
        for r in 0..p {
            if r != col && m[(r, col)] != 0.0 {
                let f = m[(r, col)];
                for j in 0..p {
                    m[(r, j)] -= f * m[(col, j)];
                    inv[(r, j)] -= f * inv[(col, j)];
                }
            }
        }
    }
    inv
}

/// X'X by explicit triple loop.
pub fn xtx_by_loops(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = (x.nrows(), x.ncols());
    let mut out = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            let mut s = 0.0;
            for r in 0..n {
                s += x[(r, i)] * x[(r, j)];
            }
            out[(i, j)] = s;
        }
    }
    out
}

/// X'y by explicit loops.
pub fn xty_by_loops(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let (n, p) = (x.nrows(), x.ncols());
    let mut out = DVector::zeros(p);
    for i in 0..p {
        let mut s = 0.0;
        for r in 0..n {
            s += x[(r, i)] * y[r];
        }
        out[i] = s;
    }
    out
}
