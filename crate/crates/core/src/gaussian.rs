//! Closed-form W2 distances and Monge maps between Gaussians.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::DiagGaussian;
use crate::jacobi::{sym_eigen, symmetrize};

const SYMMETRY_TOL: f64 = 1e-10;
const NEGATIVE_EIGEN_TOL: f64 = 1e-10;
const SQRT_SYMMETRY_TOL: f64 = 1e-8;
/// Default ridge, relative to the mean covariance eigenvalue.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Gaussian with a dense covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullGaussian {
    mean: Array1<f64>,
    cov: Array2<f64>,
}

impl FullGaussian {
    /// Checks symmetry within 1e-10 (relative to the largest entry) and
    /// clamps eigenvalues in `[−1e-10, 0)` to zero. More negative spectra are
    /// rejected.
    pub fn new(mean: Array1<f64>, cov: Array2<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.dim() != (d, d) {
            return Err(Error::validation(format!(
                "mean has length {d} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation("Gaussian parameters must be finite"));
        }
        check_symmetric(&cov, SYMMETRY_TOL)?;
        let eig = sym_eigen(&cov);
        let scale = max_abs(&cov).max(1.0);
        let min = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -NEGATIVE_EIGEN_TOL * scale {
            return Err(Error::validation(format!(
                "covariance is not positive semi-definite (eigenvalue {min})"
            )));
        }
        let cov = if min < 0.0 {
            eig.reconstruct_with(|l| l.max(0.0))
        } else {
            symmetrize(&cov)
        };
        Ok(FullGaussian { mean, cov })
    }

    /// Empirical mean and covariance (divisor n).
    pub fn fit(x: ArrayView2<'_, f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::validation("cannot fit a Gaussian to zero samples"));
        }
        let mean = x.mean_axis(Axis(0)).expect("n > 0");
        let centered = &x - &mean;
        let cov = centered.t().dot(&centered) / n as f64;
        FullGaussian::new(mean, symmetrize(&cov))
    }

    pub fn from_diag(g: &DiagGaussian) -> Self {
        FullGaussian {
            mean: g.mean.clone(),
            cov: Array2::from_diag(&g.var),
        }
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &Array2<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Linear part of an affine map. Maps between diagonal Gaussians stay
/// diagonal and cost O(d) to apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearPart {
    Diagonal(Array1<f64>),
    Dense(Array2<f64>),
}

impl LinearPart {
    pub fn dim(&self) -> usize {
        match self {
            LinearPart::Diagonal(a) => a.len(),
            LinearPart::Dense(a) => a.nrows(),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            LinearPart::Diagonal(a) => Array2::from_diag(a),
            LinearPart::Dense(a) => a.clone(),
        }
    }
}

/// `x ↦ A x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub a: LinearPart,
    pub b: Array1<f64>,
}

impl AffineMap {
    pub fn identity(d: usize) -> Self {
        AffineMap {
            a: LinearPart::Diagonal(Array1::ones(d)),
            b: Array1::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn apply_point(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        match &self.a {
            LinearPart::Diagonal(a) => a * &x + &self.b,
            LinearPart::Dense(a) => a.dot(&x) + &self.b,
        }
    }

    /// Maps each row of `x`.
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::validation(format!(
                "map has d={} but points have d={}",
                self.dim(),
                x.ncols()
            )));
        }
        Ok(match &self.a {
            LinearPart::Diagonal(a) => &x * a + &self.b,
            LinearPart::Dense(a) => x.dot(&a.t()) + &self.b,
        })
    }

    /// `other ∘ self`: first `self`, then `other`.
    pub fn then(&self, other: &AffineMap) -> AffineMap {
        let b = other.apply_point(self.b.view());
        let a = match (&self.a, &other.a) {
            (LinearPart::Diagonal(a1), LinearPart::Diagonal(a2)) => LinearPart::Diagonal(a2 * a1),
            (a1, a2) => LinearPart::Dense(a2.to_dense().dot(&a1.to_dense())),
        };
        AffineMap { a, b }
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::validation(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// Squared W2 between diagonal Gaussians:
/// `‖μP − μQ‖² + Σ_l (√varP_l − √varQ_l)²`.
pub fn w2_diag_squared(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    check_dims(p.dim(), q.dim())?;
    let mut s = 0.0;
    for l in 0..p.dim() {
        let dm = p.mean[l] - q.mean[l];
        let ds = p.var[l].sqrt() - q.var[l].sqrt();
        s += dm * dm + ds * ds;
    }
    Ok(s)
}

pub fn w2_diag(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    Ok(w2_diag_squared(p, q)?.sqrt())
}

/// Monge map between diagonal Gaussians: `A = diag(√(varQ/varP))`,
/// `b = μQ − A μP`.
pub fn monge_map_diag(p: &DiagGaussian, q: &DiagGaussian) -> Result<AffineMap> {
    check_dims(p.dim(), q.dim())?;
    let a = Array1::from_iter((0..p.dim()).map(|l| (q.var[l] / p.var[l]).sqrt()));
    let b = &q.mean - &(&a * &p.mean);
    Ok(AffineMap {
        a: LinearPart::Diagonal(a),
        b,
    })
}

fn max_abs(m: &Array2<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

fn check_symmetric(m: &Array2<f64>, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(Error::validation("matrix is not square"));
    }
    let scale = max_abs(m).max(1.0);
    let d = m.nrows();
    for i in 0..d {
        for j in i + 1..d {
            if (m[[i, j]] - m[[j, i]]).abs() > tol * scale {
                return Err(Error::validation(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Principal square root of a symmetric PSD matrix via Jacobi
/// eigendecomposition; negative eigenvalues are clamped to zero.
pub fn sym_sqrt(m: &Array2<f64>) -> Result<Array2<f64>> {
    check_symmetric(m, SQRT_SYMMETRY_TOL)?;
    Ok(sym_eigen(m).reconstruct_with(|l| l.max(0.0).sqrt()))
}

/// `trace(ΣP + ΣQ − 2(ΣP^½ ΣQ ΣP^½)^½)`; the cross term is computed as
/// a square root of a PSD product so the result stays real.
pub fn w2_full_squared(p: &FullGaussian, q: &FullGaussian) -> Result<f64> {
    check_dims(p.dim(), q.dim())?;
    let dm = &p.mean - &q.mean;
    let sp = sym_sqrt(&p.cov)?;
    let cross = sym_sqrt(&symmetrize(&sp.dot(&q.cov).dot(&sp)))?;
    let tr = p.cov.diag().sum() + q.cov.diag().sum() - 2.0 * cross.diag().sum();
    Ok((dm.dot(&dm) + tr).max(0.0))
}

pub fn w2_full(p: &FullGaussian, q: &FullGaussian) -> Result<f64> {
    Ok(w2_full_squared(p, q)?.sqrt())
}

/// Monge map between full Gaussians:
/// `A = ΣP^−½ (ΣP^½ ΣQ ΣP^½)^½ ΣP^−½`, `b = μQ − A μP`.
///
/// A ridge `reg·I` is added to both covariances; `None` picks
/// `1e-6 · trace(ΣP)/d`. `Some(0.0)` disables it.
pub fn monge_map_full(p: &FullGaussian, q: &FullGaussian, reg: Option<f64>) -> Result<AffineMap> {
    let d = p.dim();
    check_dims(d, q.dim())?;
    let reg = reg.unwrap_or(DEFAULT_RIDGE * p.cov.diag().sum() / d as f64);
    if !(reg >= 0.0 && reg.is_finite()) {
        return Err(Error::validation(format!("ridge must be nonnegative, got {reg}")));
    }
    let eye = Array2::<f64>::eye(d);
    let cp = &p.cov + &(&eye * reg);
    let cq = &q.cov + &(&eye * reg);

    let eig = sym_eigen(&cp);
    let min = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.values.iter().copied().fold(0.0f64, f64::max);
    if !(min > 1e-14 * max.max(f64::MIN_POSITIVE)) {
        return Err(Error::validation(
            "source covariance is singular; use a positive ridge",
        ));
    }
    let sp = eig.reconstruct_with(f64::sqrt);
    let sp_inv = eig.reconstruct_with(|l| 1.0 / l.sqrt());
    let middle = sym_sqrt(&symmetrize(&sp.dot(&cq).dot(&sp)))?;
    let a = symmetrize(&sp_inv.dot(&middle).dot(&sp_inv));
    let b = &q.mean - &a.dot(&p.mean);
    Ok(AffineMap {
        a: LinearPart::Dense(a),
        b,
    })
}
