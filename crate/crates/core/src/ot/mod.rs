//! Discrete optimal transport with squared Euclidean ground cost.
//!
//! Two solvers share the [`TransportPlan`] output type: the exact network
//! simplex ([`solve_exact`]) and log-domain entropic Sinkhorn
//! ([`solve_sinkhorn`]). Costs are never rescaled internally, so the Sinkhorn
//! `epsilon` is in the units of the cost matrix.

mod network_simplex;
mod sinkhorn;

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

pub use network_simplex::{solve_exact, MASS_TOLERANCE};
pub use sinkhorn::{solve_sinkhorn, SinkhornConfig};

use crate::error::{Error, Result};
use crate::io::{write_atomic, write_json};

/// Nonnegative weights over atoms. Built with [`Histogram::new`] the total is
/// one (within 1e-12); [`Histogram::with_mass`] accepts any positive total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    w: Vec<f64>,
}

impl Histogram {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        let h = Self::with_mass(w)?;
        let total = h.total();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!(
                "histogram sums to {total}, expected 1"
            )));
        }
        Ok(h)
    }

    pub fn with_mass(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::validation("histogram must have at least one atom"));
        }
        if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::validation(
                "histogram weights must be finite and nonnegative",
            ));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::validation("histogram has zero total mass"));
        }
        Ok(Histogram { w })
    }

    /// Divides by the total so the weights sum to one.
    pub fn normalized(w: Vec<f64>) -> Result<Self> {
        let h = Self::with_mass(w)?;
        let total = h.total();
        Ok(Histogram {
            w: h.w.into_iter().map(|v| v / total).collect(),
        })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("histogram must have at least one atom"));
        }
        Ok(Histogram {
            w: vec![1.0 / n as f64; n],
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.w.iter().sum()
    }
}

/// Ground costs `C[i, j]` between source atom `i` and target atom `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    c: Array2<f64>,
}

impl CostMatrix {
    pub fn new(c: Array2<f64>) -> Result<Self> {
        if c.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::validation(
                "cost entries must be finite and nonnegative",
            ));
        }
        Ok(CostMatrix { c })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.c.dim()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.c[[i, j]]
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.c
    }

    pub fn mean(&self) -> f64 {
        self.c.mean().unwrap_or(0.0)
    }
}

/// `C[i, j] = ‖x_i − y_j‖²`.
pub fn squared_euclidean_cost(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<CostMatrix> {
    if x.ncols() != y.ncols() {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {}",
            x.ncols(),
            y.ncols()
        )));
    }
    let d = x.ncols();
    let y = y.as_standard_layout();
    let ys = y.as_slice().expect("standard layout");
    let mut c = Array2::<f64>::zeros((x.nrows(), y.nrows()));
    Zip::from(c.rows_mut())
        .and(x.rows())
        .par_for_each(|mut row, xi| {
            let xi = xi.to_vec();
            let row = row.as_slice_mut().expect("rows of a fresh matrix are contiguous");
            for (cij, yj) in row.iter_mut().zip(ys.chunks_exact(d.max(1))) {
                *cij = xi
                    .iter()
                    .zip(yj)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
            }
        });
    CostMatrix::new(c)
}

/// A coupling between two histograms and its transport cost `Σ γ_ij C_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub gamma: Array2<f64>,
    pub cost: f64,
    pub converged: bool,
    /// Largest absolute deviation of a row or column sum from its marginal.
    pub violation: f64,
}

/// Summary written alongside an exported plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDiagnostics {
    pub cost: f64,
    pub n_positive_entries: usize,
    pub converged: bool,
    pub marginal_violation: f64,
}

impl TransportPlan {
    pub(crate) fn from_gamma(
        gamma: Array2<f64>,
        cost: &CostMatrix,
        p: &Histogram,
        q: &Histogram,
        converged: bool,
    ) -> Self {
        let total = gamma
            .iter()
            .zip(cost.c.iter())
            .map(|(g, c)| g * c)
            .sum();
        let mut plan = TransportPlan {
            gamma,
            cost: total,
            converged,
            violation: 0.0,
        };
        plan.violation = plan.marginal_violation(p, q);
        plan
    }

    /// Largest absolute marginal error against `p` (rows) and `q` (columns).
    pub fn marginal_violation(&self, p: &Histogram, q: &Histogram) -> f64 {
        let rows = self.gamma.sum_axis(Axis(1));
        let cols = self.gamma.sum_axis(Axis(0));
        let r = rows
            .iter()
            .zip(p.weights())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let c = cols
            .iter()
            .zip(q.weights())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        r.max(c)
    }

    pub fn n_positive(&self) -> usize {
        self.gamma.iter().filter(|&&g| g > 0.0).count()
    }

    pub fn diagnostics(&self) -> PlanDiagnostics {
        PlanDiagnostics {
            cost: self.cost,
            n_positive_entries: self.n_positive(),
            converged: self.converged,
            marginal_violation: self.violation,
        }
    }

    /// Dense CSV of γ (no header) plus `<path>.json` diagnostics.
    pub fn export(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for row in self.gamma.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())?;
        let mut json = path.as_os_str().to_owned();
        json.push(".json");
        write_json(Path::new(&json), &self.diagnostics())
    }
}

/// Row-wise barycentric projection: row `i` is `Σ_j γ_ij y_j / Σ_j γ_ij`.
pub fn barycentric_map(gamma: &Array2<f64>, y_target: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if gamma.ncols() != y_target.nrows() {
        return Err(Error::validation(format!(
            "plan has {} columns but there are {} target points",
            gamma.ncols(),
            y_target.nrows()
        )));
    }
    let row_mass = gamma.sum_axis(Axis(1));
    if let Some(i) = row_mass.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::validation(format!("plan row {i} has zero mass")));
    }
    let mut out = gamma.dot(&y_target);
    for (mut row, m) in out.rows_mut().into_iter().zip(row_mass.iter()) {
        row /= *m;
    }
    Ok(out)
}

/// Plug-in 2-Wasserstein distance between two uniformly weighted point clouds.
pub fn w2_empirical(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<f64> {
    let c = squared_euclidean_cost(x, y)?;
    let p = Histogram::uniform(x.nrows())?;
    let q = Histogram::uniform(y.nrows())?;
    let plan = solve_exact(&p, &q, &c)?;
    Ok(plan.cost.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn cost_examples() {
        let x = array![[1.0, 2.0]];
        assert_eq!(squared_euclidean_cost(x.view(), x.view()).unwrap().c, array![[0.0]]);
        let c = squared_euclidean_cost(array![[0.0, 0.0]].view(), array![[3.0, 4.0]].view())
            .unwrap();
        assert_eq!(c.get(0, 0), 25.0);
        assert!(squared_euclidean_cost(x.view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn cost_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_points(&mut rng, 4, 3);
        let y = random_points(&mut rng, 5, 3);
        let c = squared_euclidean_cost(x.view(), y.view()).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += (x[[i, k]] - y[[j, k]]).powi(2);
                }
                assert!((c.get(i, j) - s).abs() < 1e-10);
            }
        }
        let cxx = squared_euclidean_cost(x.view(), x.view()).unwrap();
        for i in 0..4 {
            assert_eq!(cxx.get(i, i), 0.0);
            for j in 0..4 {
                assert_eq!(cxx.get(i, j), cxx.get(j, i));
            }
        }
    }

    #[test]
    fn barycentric_examples() {
        let y = array![[1.0, 0.0], [0.0, 1.0], [5.0, 5.0]];
        let perm = array![[0.0, 0.0, 1.0 / 3.0], [1.0 / 3.0, 0.0, 0.0], [0.0, 1.0 / 3.0, 0.0]];
        let out = barycentric_map(&perm, y.view()).unwrap();
        assert_eq!(out, array![[5.0, 5.0], [1.0, 0.0], [0.0, 1.0]]);

        let half = array![[0.25, 0.25, 0.0]];
        let out = barycentric_map(&half, y.view()).unwrap();
        assert_eq!(out, array![[0.5, 0.5]]);

        let zero = array![[0.0, 0.0, 0.0]];
        assert!(matches!(barycentric_map(&zero, y.view()), Err(Error::Validation(_))));
    }

    #[test]
    fn barycentric_matches_weighted_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gamma = Array2::from_shape_fn((3, 4), |_| rng.random_range(0.0..1.0));
        let y = random_points(&mut rng, 4, 2);
        let out = barycentric_map(&gamma, y.view()).unwrap();
        for i in 0..3 {
            let mass: f64 = (0..4).map(|j| gamma[[i, j]]).sum();
            for k in 0..2 {
                let v: f64 = (0..4).map(|j| gamma[[i, j]] * y[[j, k]]).sum::<f64>() / mass;
                assert!((out[[i, k]] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn w2_examples() {
        let x = array![[0.0, 1.0], [2.0, 3.0]];
        assert_eq!(w2_empirical(x.view(), x.view()).unwrap(), 0.0);
        let a = array![[0.0, 0.0]];
        let b = array![[3.0, 4.0]];
        assert!((w2_empirical(a.view(), b.view()).unwrap() - 5.0).abs() < 1e-12);
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn w2_matches_permutation_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let x = random_points(&mut rng, 6, 2);
            let y = random_points(&mut rng, 6, 2);
            let best = permutations(6)
                .iter()
                .map(|perm| {
                    perm.iter()
                        .enumerate()
                        .map(|(i, &j)| {
                            (x[[i, 0]] - y[[j, 0]]).powi(2) + (x[[i, 1]] - y[[j, 1]]).powi(2)
                        })
                        .sum::<f64>()
                        / 6.0
                })
                .fold(f64::INFINITY, f64::min);
            let w = w2_empirical(x.view(), y.view()).unwrap();
            assert!((w - best.sqrt()).abs() < 1e-9, "{w} vs {}", best.sqrt());
        }
    }

    #[test]
    fn histogram_validation() {
        assert!(Histogram::new(vec![0.5, 0.5]).is_ok());
        assert!(Histogram::new(vec![0.5, 0.6]).is_err());
        assert!(Histogram::new(vec![-0.5, 1.5]).is_err());
        assert!(Histogram::new(vec![]).is_err());
        let h = Histogram::normalized(vec![1.0, 3.0]).unwrap();
        assert_eq!(h.weights(), &[0.25, 0.75]);
    }

    #[test]
    fn export_writes_csv_and_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let p = Histogram::uniform(2).unwrap();
        let plan = solve_exact(&p, &p, &c).unwrap();
        let path = dir.path().join("plan.csv");
        plan.export(&path).unwrap();
        let csv = std::fs::read_to_string(&path).unwrap();
        assert_eq!(csv, "0.5,0.0\n0.0,0.5\n");
        let diag: PlanDiagnostics =
            crate::io::read_json(&dir.path().join("plan.csv.json")).unwrap();
        assert_eq!(diag.n_positive_entries, 2);
        assert!(diag.converged);
    }
}
