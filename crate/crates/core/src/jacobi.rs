//! Cyclic Jacobi eigendecomposition for small dense symmetric matrices.

use ndarray::{Array1, Array2};

const THRESHOLD: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues and eigenvectors (as columns) of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

impl SymEigen {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Array2<f64> {
        let d = self.values.len();
        let fv = self.values.mapv(f);
        let mut scaled = self.vectors.clone();
        for j in 0..d {
            let mut col = scaled.column_mut(j);
            col *= fv[j];
        }
        let out = scaled.dot(&self.vectors.t());
        symmetrize(&out)
    }
}

/// Diagonalizes `m` (assumed symmetric; only the upper triangle matters in
/// spirit, both are read). Sweeps stop once the off-diagonal Frobenius norm is
/// below `1e-12` times the matrix norm, or after 100 sweeps.
pub fn sym_eigen(m: &Array2<f64>) -> SymEigen {
    let d = m.nrows();
    assert_eq!(d, m.ncols(), "matrix must be square");
    let mut a = symmetrize(m);
    let mut v = Array2::<f64>::eye(d);
    let total: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();

    for _ in 0..MAX_SWEEPS {
        let off: f64 = off_diagonal_norm(&a);
        if off <= THRESHOLD * total || off == 0.0 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }
    let values = Array1::from_iter((0..d).map(|i| a[[i, i]]));
    SymEigen { values, vectors: v }
}

/// Applies the Jacobi rotation `Jᵀ A J` in the (p, q) plane and accumulates `V J`.
fn rotate(a: &mut Array2<f64>, v: &mut Array2<f64>, p: usize, q: usize, c: f64, s: f64) {
    let d = a.nrows();
    for k in 0..d {
        let akp = a[[k, p]];
        let akq = a[[k, q]];
        a[[k, p]] = c * akp - s * akq;
        a[[k, q]] = s * akp + c * akq;
    }
    for k in 0..d {
        let apk = a[[p, k]];
        let aqk = a[[q, k]];
        a[[p, k]] = c * apk - s * aqk;
        a[[q, k]] = s * apk + c * aqk;
    }
    a[[p, q]] = 0.0;
    a[[q, p]] = 0.0;
    for k in 0..d {
        let vkp = v[[k, p]];
        let vkq = v[[k, q]];
        v[[k, p]] = c * vkp - s * vkq;
        v[[k, q]] = s * vkp + c * vkq;
    }
}

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let d = a.nrows();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                s += a[[i, j]] * a[[i, j]];
            }
        }
    }
    s.sqrt()
}

pub(crate) fn symmetrize(m: &Array2<f64>) -> Array2<f64> {
    (m + &m.t()) * 0.5
}
