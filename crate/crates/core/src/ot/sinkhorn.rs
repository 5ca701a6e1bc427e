//! Entropic optimal transport by Sinkhorn iterations on dual potentials.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{CostMatrix, Histogram, TransportPlan};
use crate::error::{Error, Result};

/// First annealing stage starts at this fraction of the largest cost.
const ANNEAL_START: f64 = 1.0;
/// Ratio between consecutive ε stages.
const ANNEAL_FACTOR: f64 = 0.5;
/// Marginal error at which an intermediate stage hands over to the next.
const STAGE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    /// Stop once the largest marginal error drops below this.
    pub tol: f64,
}

impl SinkhornConfig {
    pub fn new(epsilon: f64) -> Self {
        SinkhornConfig {
            epsilon,
            max_iter: 100_000,
            tol: 1e-9,
        }
    }
}

/// Log-domain Sinkhorn for the kernel `exp(−C/ε)`.
///
/// Works on the potentials `f`, `g` with `γ_ij = exp((f_i + g_j − C_ij)/ε)`
/// so that small `ε` never overflows. After each `g` update the column
/// marginals are exact; convergence is measured on the rows. The reported
/// cost is `Σ γ_ij C_ij` without the entropy term. When `max_iter` is hit the
/// plan comes back with `converged = false` and its achieved violation.
pub fn solve_sinkhorn(
    p: &Histogram,
    q: &Histogram,
    cost: &CostMatrix,
    config: &SinkhornConfig,
) -> Result<TransportPlan> {
    let (n, m) = cost.dim();
    if n != p.len() || m != q.len() {
        return Err(Error::validation(format!(
            "cost matrix is {n}x{m} but histograms have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    let eps = config.epsilon;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::validation(format!("epsilon must be positive, got {eps}")));
    }
    let log_p: Vec<f64> = p.weights().iter().map(|w| w.ln()).collect();
    let log_q: Vec<f64> = q.weights().iter().map(|w| w.ln()).collect();
    let c_max = cost.matrix().iter().fold(0.0_f64, |a, &c| a.max(c));

    // u = f/ε, v = g/ε
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut buf = vec![0.0; n.max(m)];
    let mut k = vec![0.0; n * m];
    let mut kt = vec![0.0; n * m];
    let mut converged = false;
    let mut budget = config.max_iter.max(1);

    // ε-scaling: warm-start from coarser problems, the last stage is the target ε
    let mut stage_eps = eps;
    let mut stages = vec![eps];
    while stage_eps < c_max * ANNEAL_START {
        stage_eps *= 1.0 / ANNEAL_FACTOR;
        stages.push(stage_eps);
    }
    stages.reverse();
    let mut prev_eps = stages[0];
    for (s, &e) in stages.iter().enumerate() {
        let last = s + 1 == stages.len();
        let rescale = prev_eps / e;
        for x in u.iter_mut().chain(v.iter_mut()) {
            *x *= rescale;
        }
        prev_eps = e;
        // scaled costs C/ε, row-major and column-major
        for (kk, c) in k.iter_mut().zip(cost.matrix().iter()) {
            *kk = c / e;
        }
        for i in 0..n {
            for j in 0..m {
                kt[j * n + i] = k[i * m + j];
            }
        }
        let stage_tol = if last { config.tol } else { config.tol.max(STAGE_TOL) };
        let mut it = 0;
        while budget > 0 {
            half_step(&mut u, &v, &k, &log_p, &mut buf);
            half_step(&mut v, &u, &kt, &log_q, &mut buf);
            budget -= 1;
            it += 1;
            if it % 10 == 0 || budget == 0 {
                if row_violation(&u, &v, &k, p.weights()) < stage_tol {
                    converged = last;
                    break;
                }
            }
        }
        if budget == 0 && !last {
            // out of iterations: finish on the target ε so γ is for the right problem
            let rescale = prev_eps / eps;
            for x in u.iter_mut().chain(v.iter_mut()) {
                *x *= rescale;
            }
            for (kk, c) in k.iter_mut().zip(cost.matrix().iter()) {
                *kk = c / eps;
            }
            half_step(&mut u, &v, &k, &log_p, &mut buf);
            for i in 0..n {
                for j in 0..m {
                    kt[j * n + i] = k[i * m + j];
                }
            }
            half_step(&mut v, &u, &kt, &log_q, &mut buf);
            break;
        }
    }

    let gamma = Array2::from_shape_fn((n, m), |(i, j)| {
        let x = u[i] + v[j] - k[i * m + j];
        if x == f64::NEG_INFINITY {
            0.0
        } else {
            x.exp()
        }
    });
    Ok(TransportPlan::from_gamma(gamma, cost, p, q, converged))
}

/// `out_i = log a_i − logsumexp_j(other_j − K_ij)` with `K` stored by rows of `out`.
fn half_step(out: &mut [f64], other: &[f64], k: &[f64], log_a: &[f64], buf: &mut [f64]) {
    let m = other.len();
    let buf = &mut buf[..m];
    for (i, o) in out.iter_mut().enumerate() {
        *o = if log_a[i] == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            let row = &k[i * m..(i + 1) * m];
            for ((b, &w), &c) in buf.iter_mut().zip(other).zip(row) {
                *b = w - c;
            }
            log_a[i] - log_sum_exp(buf)
        };
    }
}

fn row_violation(u: &[f64], v: &[f64], k: &[f64], p: &[f64]) -> f64 {
    let m = v.len();
    let mut worst: f64 = 0.0;
    for i in 0..u.len() {
        let mut s = 0.0;
        if u[i] != f64::NEG_INFINITY {
            let row = &k[i * m..(i + 1) * m];
            for (&w, &c) in v.iter().zip(row) {
                if w != f64::NEG_INFINITY {
                    s += (u[i] + w - c).exp();
                }
            }
        }
        worst = worst.max((s - p[i]).abs());
    }
    worst
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
