//! Comparison methods: empirical OT with the barycentric map (exact or
//! entropic) and the linear Gaussian Monge map.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gaussian::{monge_map_full, FullGaussian};
use crate::ot::{
    barycentric_map, solve_exact, solve_sinkhorn, squared_euclidean_cost, Histogram,
    SinkhornConfig,
};
use crate::otda::{AdaptationResult, Method};

/// Largest `n·m` the empirical solvers accept without an explicit override.
pub const MAX_PLAN_ENTRIES: usize = 4_000_000;
/// Default entropic strength, relative to the mean ground cost.
pub const DEFAULT_EPSILON_FACTOR: f64 = 0.01;
/// Marginal tolerance of the entropic baseline.
pub const SINKHORN_TOL: f64 = 1e-6;
pub const SINKHORN_MAX_ITER: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmpiricalSolver {
    Exact,
    /// `epsilon: None` uses `0.01 · mean(C)`.
    Sinkhorn {
        epsilon: Option<f64>,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
}

fn default_max_iter() -> usize {
    SINKHORN_MAX_ITER
}

fn default_tol() -> f64 {
    SINKHORN_TOL
}

impl EmpiricalSolver {
    pub fn sinkhorn(epsilon: Option<f64>) -> Self {
        EmpiricalSolver::Sinkhorn {
            epsilon,
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }
}

fn check_pair(source: &Dataset, target: &Dataset) -> Result<()> {
    source.require_labels("source domain")?;
    if source.dim() != target.dim() {
        return Err(Error::validation(format!(
            "source has d={} but target has d={}",
            source.dim(),
            target.dim()
        )));
    }
    Ok(())
}

/// Transports labeled source points onto the target cloud with a plan
/// between uniform empirical measures and the barycentric map.
///
/// Refuses problems with more than [`MAX_PLAN_ENTRIES`] plan entries unless
/// `allow_large` is set.
pub fn otda_empirical(
    source: &Dataset,
    target: &Dataset,
    solver: EmpiricalSolver,
    allow_large: bool,
) -> Result<AdaptationResult> {
    check_pair(source, target)?;
    let (n, m) = (source.n_samples(), target.n_samples());
    if !allow_large && n.saturating_mul(m) > MAX_PLAN_ENTRIES {
        return Err(Error::validation(format!(
            "{n}x{m} empirical plan exceeds {MAX_PLAN_ENTRIES} entries; subsample or override"
        )));
    }
    let xs = source.features().view();
    let xt = target.features().view();
    let cost = squared_euclidean_cost(xs, xt)?;
    let p = Histogram::uniform(n)?;
    let q = Histogram::uniform(m)?;
    let (plan, method) = match solver {
        EmpiricalSolver::Exact => (solve_exact(&p, &q, &cost)?, Method::OtdaEmd),
        EmpiricalSolver::Sinkhorn {
            epsilon,
            max_iter,
            tol,
        } => {
            let mean = cost.mean();
            let epsilon = match epsilon {
                Some(e) => e,
                // all points coincide: any positive epsilon gives the same plan
                None if mean == 0.0 => 1.0,
                None => DEFAULT_EPSILON_FACTOR * mean,
            };
            let config = SinkhornConfig {
                epsilon,
                max_iter,
                tol,
            };
            (solve_sinkhorn(&p, &q, &cost, &config)?, Method::OtdaSinkhorn)
        }
    };
    let mapped = barycentric_map(&plan.gamma, xt)?;
    let labels = source.require_labels("source domain")?.to_vec();
    let points = Dataset::labeled(mapped, labels, source.n_classes())?;
    let mut result = AdaptationResult::points(method, points);
    result.diagnostics.converged = Some(plan.converged);
    Ok(result)
}

/// Fits a full Gaussian to each domain and pushes every source point
/// through the Gaussian Monge map. `reg: None` uses the default ridge.
pub fn otda_linear(source: &Dataset, target: &Dataset, reg: Option<f64>) -> Result<AdaptationResult> {
    check_pair(source, target)?;
    if source.n_samples() < 2 || target.n_samples() < 2 {
        return Err(Error::validation(
            "linear mapping needs at least two samples per domain",
        ));
    }
    let p = FullGaussian::fit(source.features().view())?;
    let q = FullGaussian::fit(target.features().view())?;
    let map = monge_map_full(&p, &q, reg)?;
    let mapped = map.apply(source.features().view())?;
    let labels = source.require_labels("source domain")?.to_vec();
    let points = Dataset::labeled(mapped, labels, source.n_classes())?;
    Ok(AdaptationResult::points(Method::OtdaLinear, points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_cloud(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng))
    }

    fn labeled(x: Array2<f64>) -> Dataset {
        let n = x.nrows();
        Dataset::labeled(x, (0..n).map(|i| i % 2).collect(), 2).unwrap()
    }

    #[test]
    fn emd_identical_domains_is_identity() {
        let x = gaussian_cloud(30, 2, 1);
        let src = labeled(x.clone());
        let res = otda_empirical(&src, &src.without_labels(), EmpiricalSolver::Exact, false)
            .unwrap();
        let out = res.transported.unwrap();
        for (a, b) in out.features().iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(out.labels(), src.labels());
        assert_eq!(res.diagnostics.strategy, Method::OtdaEmd);
    }

    #[test]
    fn single_source_point_goes_to_target_mean() {
        let src = Dataset::labeled(array![[7.0, -2.0]], vec![0], 1).unwrap();
        let tgt = Dataset::unlabeled(gaussian_cloud(9, 2, 4)).unwrap();
        let mean = tgt.features().mean_axis(ndarray::Axis(0)).unwrap();
        for solver in [EmpiricalSolver::Exact, EmpiricalSolver::sinkhorn(None)] {
            let out = otda_empirical(&src, &tgt, solver, false).unwrap().transported.unwrap();
            for (a, b) in out.features().row(0).iter().zip(mean.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn size_guard_can_be_overridden() {
        let src = labeled(Array2::zeros((2001, 1)));
        let tgt = Dataset::unlabeled(Array2::zeros((2001, 1))).unwrap();
        let err = otda_empirical(&src, &tgt, EmpiricalSolver::Exact, false).unwrap_err();
        assert!(err.to_string().contains("exceeds"));
    }

    #[test]
    fn linear_identical_domains_is_identity() {
        let x = gaussian_cloud(200, 3, 2);
        let src = labeled(x.clone());
        let out = otda_linear(&src, &src.without_labels(), None).unwrap().transported.unwrap();
        for (a, b) in out.features().iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_shift_is_a_translation() {
        let x = gaussian_cloud(2000, 2, 3);
        let v = array![3.0, -1.5];
        let src = labeled(x.clone());
        let tgt = Dataset::unlabeled(&x + &v).unwrap();
        let p = FullGaussian::fit(x.view()).unwrap();
        let q = FullGaussian::fit(tgt.features().view()).unwrap();
        let map = monge_map_full(&p, &q, None).unwrap();
        let a = map.a.to_dense();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((a[[i, j]] - want).abs() < 1e-3);
            }
            assert!((map.b[i] - v[i]).abs() < 1e-3);
        }
        let out = otda_linear(&src, &tgt, None).unwrap().transported.unwrap();
        for (row, orig) in out.features().rows().into_iter().zip(x.rows()) {
            assert!(((row[0] - orig[0]) - 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn linear_contracts_variance() {
        let x = gaussian_cloud(5000, 1, 5) * 2.0;
        let y = gaussian_cloud(5000, 1, 6);
        let src = labeled(x.clone());
        let tgt = Dataset::unlabeled(y).unwrap();
        let out = otda_linear(&src, &tgt, None).unwrap().transported.unwrap();
        let ratio = out.features().std(0.0) / x.std(0.0);
        assert!((ratio - 0.5).abs() < 0.03, "{ratio}");
    }

    #[test]
    fn linear_needs_two_samples() {
        let src = labeled(array![[1.0]]);
        let tgt = Dataset::unlabeled(array![[1.0], [2.0]]).unwrap();
        assert!(otda_linear(&src, &tgt, None).is_err());
    }

    #[test]
    fn solver_json_shape() {
        let s: EmpiricalSolver =
            serde_json::from_str(r#"{"kind":"sinkhorn","epsilon":0.5}"#).unwrap();
        assert_eq!(s, EmpiricalSolver::sinkhorn(Some(0.5)));
        let e: EmpiricalSolver = serde_json::from_str(r#"{"kind":"exact"}"#).unwrap();
        assert_eq!(e, EmpiricalSolver::Exact);
    }
}
