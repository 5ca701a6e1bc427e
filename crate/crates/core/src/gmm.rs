//! Diagonal-covariance Gaussian mixtures: k-means++ initialization, EM,
//! responsibilities, sampling and labeling of components from labeled data.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};

/// Relative variance floor: each component variance is kept above this
/// fraction of the per-dimension data variance.
pub const VARIANCE_FLOOR_FACTOR: f64 = 1e-6;
/// Absolute lower bound on the floor, for constant dimensions.
pub const MIN_VARIANCE: f64 = 1e-12;
const LLOYD_ITERS: usize = 25;
const EMPTY_COMPONENT_MASS: f64 = 1e-12;

/// Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Array1<f64>, var: Array1<f64>) -> Result<Self> {
        if mean.len() != var.len() || mean.is_empty() {
            return Err(Error::validation(format!(
                "mean has length {} but var has length {}",
                mean.len(),
                var.len()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) || var.iter().any(|&v| !(v > 0.0 && v.is_finite()))
        {
            return Err(Error::validation(
                "Gaussian needs a finite mean and strictly positive finite variances",
            ));
        }
        Ok(DiagGaussian { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, x: ArrayView1<'_, f64>) -> f64 {
        let mut acc = 0.0;
        for j in 0..x.len() {
            let v = self.var[j];
            let r = x[j] - self.mean[j];
            acc += (2.0 * PI * v).ln() + r * r / v;
        }
        -0.5 * acc
    }
}

/// Finite mixture of diagonal Gaussians, optionally carrying a row-stochastic
/// K × n_classes matrix of class probabilities per component.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    weights: Vec<f64>,
    components: Vec<DiagGaussian>,
    label_dist: Option<Array2<f64>>,
}

impl Gmm {
    pub fn new(weights: Vec<f64>, components: Vec<DiagGaussian>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::validation(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::validation("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!("mixture weights sum to {total}")));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::validation("components have different dimensions"));
        }
        Ok(Gmm {
            weights,
            components,
            label_dist: None,
        })
    }

    /// Attaches P(Y | K = k). Rows must sum to one within 1e-9.
    pub fn with_label_dist(mut self, label_dist: Array2<f64>) -> Result<Self> {
        if label_dist.nrows() != self.n_components() || label_dist.ncols() == 0 {
            return Err(Error::validation(format!(
                "label distribution is {}x{} for {} components",
                label_dist.nrows(),
                label_dist.ncols(),
                self.n_components()
            )));
        }
        for (k, row) in label_dist.rows().into_iter().enumerate() {
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::validation(format!(
                    "label distribution row {k} has entries outside [0, 1]"
                )));
            }
            let s = row.sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::validation(format!(
                    "label distribution row {k} sums to {s}"
                )));
            }
        }
        self.label_dist = Some(label_dist);
        Ok(self)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[DiagGaussian] {
        &self.components
    }

    pub fn label_dist(&self) -> Option<&Array2<f64>> {
        self.label_dist.as_ref()
    }

    pub fn require_label_dist(&self) -> Result<&Array2<f64>> {
        self.label_dist
            .as_ref()
            .ok_or_else(|| Error::validation("mixture components are not labeled"))
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::validation(format!(
                "dimension mismatch: mixture has d={}, data has d={d}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// `log π_k + log N(x_i | μ_k, Σ_k)` for every row and component.
    fn log_joint(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let log_w: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        let mut out = Array2::<f64>::zeros((x.nrows(), self.n_components()));
        Zip::from(out.rows_mut())
            .and(x.rows())
            .par_for_each(|mut row, xi| {
                for (k, comp) in self.components.iter().enumerate() {
                    row[k] = if log_w[k] == f64::NEG_INFINITY {
                        f64::NEG_INFINITY
                    } else {
                        log_w[k] + comp.log_density(xi)
                    };
                }
            });
        out
    }

    /// Normalizes log-joint rows in place into responsibilities, returning the
    /// per-row log densities.
    fn normalize_rows(log_joint: &mut Array2<f64>) -> Array1<f64> {
        let mut lse = Array1::zeros(log_joint.nrows());
        Zip::from(log_joint.rows_mut())
            .and(&mut lse)
            .par_for_each(|mut row, l| {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = row.iter().map(|v| (v - max).exp()).sum();
                *l = max + s.ln();
                row.mapv_inplace(|v| (v - *l).exp());
            });
        lse
    }

    /// Posterior component probabilities, n × K, computed with log-sum-exp.
    pub fn responsibilities(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        let mut lj = self.log_joint(x);
        Self::normalize_rows(&mut lj);
        Ok(lj)
    }

    /// Mean log density of the rows of `x`.
    pub fn log_likelihood(&self, x: ArrayView2<'_, f64>) -> Result<f64> {
        self.check_dim(x.ncols())?;
        if x.nrows() == 0 {
            return Err(Error::validation("log-likelihood of an empty sample"));
        }
        let mut lj = self.log_joint(x);
        let lse = Self::normalize_rows(&mut lj);
        Ok(lse.sum() / x.nrows() as f64)
    }

    /// Draws `n` points; the component of each draw is returned alongside.
    pub fn sample(&self, n: usize, seed: u64) -> Result<(Array2<f64>, Vec<usize>)> {
        if n == 0 {
            return Err(Error::validation("sample size must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim();
        let mut x = Array2::zeros((n, d));
        let mut ids = Vec::with_capacity(n);
        for i in 0..n {
            let k = categorical(&mut rng, &self.weights);
            let comp = &self.components[k];
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[[i, j]] = comp.mean[j] + comp.var[j].sqrt() * z;
            }
            ids.push(k);
        }
        Ok((x, ids))
    }

    /// Fills P(Y | K = k) by the total law of probability:
    /// `Σ_i r_ik · onehot(y_i) / Σ_i r_ik`.
    ///
    /// A component with total responsibility below 1e-12 gets the global label
    /// frequency; the indices of such components are returned.
    pub fn label_components(&self, data: &Dataset) -> Result<(Gmm, Vec<usize>)> {
        let labels = data.require_labels("labeling mixture components")?;
        let resp = self.responsibilities(data.features().view())?;
        let onehot = data.one_hot()?;
        let mass = resp.sum_axis(Axis(0));
        let mut dist = resp.t().dot(&onehot);
        let n_classes = data.n_classes();
        let mut global = Array1::<f64>::zeros(n_classes);
        for &y in labels {
            global[y] += 1.0;
        }
        global /= labels.len() as f64;
        let mut fallback = Vec::new();
        for (k, mut row) in dist.rows_mut().into_iter().enumerate() {
            if mass[k] < EMPTY_COMPONENT_MASS {
                row.assign(&global);
                fallback.push(k);
            } else {
                row /= mass[k];
                // guard the row sum against rounding
                let s = row.sum();
                row /= s;
            }
        }
        Ok((self.clone().with_label_dist(dist)?, fallback))
    }

    /// Most probable class per component (lowest index on ties).
    pub fn hard_component_labels(&self) -> Result<Vec<usize>> {
        Ok(self
            .require_label_dist()?
            .rows()
            .into_iter()
            .map(|r| argmax(r.iter().copied()))
            .collect())
    }

    /// Bayesian information criterion of the mixture on `x`.
    pub fn bic(&self, x: ArrayView2<'_, f64>) -> Result<f64> {
        let ll = self.log_likelihood(x)?;
        let n = x.nrows() as f64;
        let k = self.n_components() as f64;
        let params = (k - 1.0) + 2.0 * k * self.dim() as f64;
        Ok(-2.0 * n * ll + params * n.ln())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        write_json(path, &GmmJson::from(self))
    }

    pub fn load_json(path: &Path) -> Result<Gmm> {
        let json: GmmJson = read_json(path)?;
        Gmm::try_from(json).map_err(|e| e.in_stage(format!("loading {}", path.display())))
    }
}

/// Serialized form: `{weights, means, vars, label_dist?}` in that order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmJson {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_dist: Option<Vec<Vec<f64>>>,
}

impl From<&Gmm> for GmmJson {
    fn from(g: &Gmm) -> Self {
        GmmJson {
            weights: g.weights.clone(),
            means: g.components.iter().map(|c| c.mean.to_vec()).collect(),
            vars: g.components.iter().map(|c| c.var.to_vec()).collect(),
            label_dist: g
                .label_dist
                .as_ref()
                .map(|m| m.rows().into_iter().map(|r| r.to_vec()).collect()),
        }
    }
}

impl TryFrom<GmmJson> for Gmm {
    type Error = Error;

    fn try_from(j: GmmJson) -> Result<Gmm> {
        if j.means.len() != j.vars.len() {
            return Err(Error::validation("means and vars have different lengths"));
        }
        let components = j
            .means
            .into_iter()
            .zip(j.vars)
            .map(|(m, v)| DiagGaussian::new(Array1::from(m), Array1::from(v)))
            .collect::<Result<Vec<_>>>()?;
        let gmm = Gmm::new(j.weights, components)?;
        match j.label_dist {
            None => Ok(gmm),
            Some(rows) => {
                let k = rows.len();
                let c = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != c) {
                    return Err(Error::validation("ragged label distribution"));
                }
                let flat: Vec<f64> = rows.into_iter().flatten().collect();
                let m = Array2::from_shape_vec((k, c), flat)
                    .map_err(|e| Error::validation(e.to_string()))?;
                gmm.with_label_dist(m)
            }
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Draws an index with probability proportional to `weights`.
pub(crate) fn categorical(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = k;
            if u < acc {
                return k;
            }
        }
    }
    last_positive
}

/// Per-dimension variance floor for a data matrix.
pub fn variance_floor(x: ArrayView2<'_, f64>) -> Array1<f64> {
    let var = x.var_axis(Axis(0), 0.0);
    var.mapv(|v| (VARIANCE_FLOOR_FACTOR * v).max(MIN_VARIANCE))
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by at most 25 Lloyd iterations, turned into a
/// mixture: cluster proportions, centroids and floored per-cluster variances.
pub fn kmeans_pp_init(data: &Dataset, k: usize, seed: u64) -> Result<Gmm> {
    let x = data.features().view();
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::validation(format!(
            "number of components must be in 1..={n}, got {k}"
        )));
    }
    let floor = variance_floor(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && u < acc {
                    pick = Some(i);
                    break;
                }
            }
            // rounding at the top end: last point with positive weight
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, row) in x.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(row, x.row(next)));
        }
    }

    let d = x.ncols();
    let mut centers = Array2::<f64>::zeros((k, d));
    for (c, &i) in chosen.iter().enumerate() {
        centers.row_mut(c).assign(&x.row(i));
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..LLOYD_ITERS {
        let mut changed = false;
        for (i, row) in x.rows().into_iter().enumerate() {
            let a = nearest(row, &centers);
            if a != assign[i] {
                assign[i] = a;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, row) in x.rows().into_iter().enumerate() {
            let mut s = sums.row_mut(assign[i]);
            s += &row;
            counts[assign[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mut s = sums.row_mut(c);
                s /= counts[c] as f64;
                centers.row_mut(c).assign(&s);
            }
        }
    }

    let mut var = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (i, row) in x.rows().into_iter().enumerate() {
        let c = assign[i];
        counts[c] += 1;
        for j in 0..d {
            let r = row[j] - centers[[c, j]];
            var[[c, j]] += r * r;
        }
    }
    let data_var = x.var_axis(Axis(0), 0.0);
    let mut components = Vec::with_capacity(k);
    for c in 0..k {
        let v = if counts[c] > 0 {
            Array1::from_iter((0..d).map(|j| (var[[c, j]] / counts[c] as f64).max(floor[j])))
        } else {
            data_var.mapv(|v| v.max(MIN_VARIANCE))
        };
        components.push(DiagGaussian::new(centers.row(c).to_owned(), v)?);
    }
    let weights = normalize_weights(counts.iter().map(|&c| c as f64 / n as f64).collect());
    Gmm::new(weights, components)
}

fn nearest(row: ArrayView1<'_, f64>, centers: &Array2<f64>) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.rows().into_iter().enumerate() {
        let dd = sq_dist(row, center);
        if dd < best_d {
            best_d = dd;
            best = c;
        }
    }
    best
}

/// Rescales so the weights sum to one exactly as far as rounding allows.
fn normalize_weights(mut w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Convergence threshold on the change of mean log-likelihood.
    pub tol: f64,
    pub seed: u64,
    pub n_restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 300,
            tol: 1e-5,
            seed: 0,
            n_restarts: 3,
        }
    }
}

/// Result of [`em_fit`]: the winning mixture and its per-iteration mean
/// log-likelihood.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub gmm: Gmm,
    pub trace: Vec<f64>,
}

impl EmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }
}

/// Fits a K-component diagonal mixture by EM, keeping the best of
/// `n_restarts` runs seeded `seed, seed + 1, …`.
pub fn em_fit(data: &Dataset, k: usize, config: &EmConfig) -> Result<EmFit> {
    if config.max_iter == 0 {
        return Err(Error::validation("max_iter must be at least 1"));
    }
    if !(config.tol > 0.0) {
        return Err(Error::validation("tol must be positive"));
    }
    let mut best: Option<EmFit> = None;
    for r in 0..config.n_restarts.max(1) {
        let fit = em_single(data, k, config, config.seed.wrapping_add(r as u64))?;
        let better = match &best {
            None => true,
            Some(b) => fit.final_log_likelihood() > b.final_log_likelihood(),
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn em_single(data: &Dataset, k: usize, config: &EmConfig, seed: u64) -> Result<EmFit> {
    let x = data.features().view();
    let (n, d) = x.dim();
    let floor = variance_floor(x);
    let mut gmm = kmeans_pp_init(data, k, seed)?;
    let mut trace = Vec::new();
    for it in 0..config.max_iter {
        let mut resp = gmm.log_joint(x);
        let lse = Gmm::normalize_rows(&mut resp);
        let ll = lse.sum() / n as f64;
        let done = trace
            .last()
            .is_some_and(|prev: &f64| (ll - prev).abs() < config.tol);
        trace.push(ll);
        if done || it + 1 == config.max_iter {
            break;
        }

        // M-step
        let mass = resp.sum_axis(Axis(0));
        let weighted = resp.t().dot(&x);
        let mut components = Vec::with_capacity(k);
        for c in 0..k {
            if mass[c] < EMPTY_COMPONENT_MASS {
                components.push(gmm.components[c].clone());
                continue;
            }
            let mean = weighted.row(c).to_owned() / mass[c];
            let mut var = Array1::<f64>::zeros(d);
            // two-pass variance; E[x²] − μ² loses precision far from the origin
            for (i, row) in x.rows().into_iter().enumerate() {
                let r = resp[[i, c]];
                if r > 0.0 {
                    for j in 0..d {
                        let dv = row[j] - mean[j];
                        var[j] += r * dv * dv;
                    }
                }
            }
            for j in 0..d {
                var[j] = (var[j] / mass[c]).max(floor[j]);
            }
            components.push(DiagGaussian { mean, var });
        }
        let weights = normalize_weights(mass.iter().map(|m| m / n as f64).collect());
        gmm = Gmm {
            weights,
            components,
            label_dist: None,
        };
    }
    Ok(EmFit { gmm, trace })
}

/// Fits every K in `ks` and keeps the lowest BIC. Returns the winner and the
/// `(K, BIC)` pairs in order.
pub fn select_k_bic(
    data: &Dataset,
    ks: impl IntoIterator<Item = usize>,
    config: &EmConfig,
) -> Result<(EmFit, Vec<(usize, f64)>)> {
    let mut best: Option<(f64, EmFit)> = None;
    let mut scores = Vec::new();
    for k in ks {
        let fit = em_fit(data, k, config)?;
        let bic = fit.gmm.bic(data.features().view())?;
        scores.push((k, bic));
        if best.as_ref().is_none_or(|(b, _)| bic < *b) {
            best = Some((bic, fit));
        }
    }
    let (_, fit) = best.ok_or_else(|| Error::validation("empty K range"))?;
    Ok((fit, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn gauss(mean: &[f64], var: &[f64]) -> DiagGaussian {
        DiagGaussian::new(Array1::from(mean.to_vec()), Array1::from(var.to_vec())).unwrap()
    }

    fn normal_1d(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 1), |_| StandardNormal.sample(&mut rng));
        Dataset::unlabeled(x).unwrap()
    }

    #[test]
    fn kmeans_single_component_is_data_moments() {
        let ds = normal_1d(50, 1);
        let g = kmeans_pp_init(&ds, 1, 0).unwrap();
        let x = ds.features();
        let mean = x.mean_axis(Axis(0)).unwrap();
        let var = x.var_axis(Axis(0), 0.0);
        assert!((g.components()[0].mean[0] - mean[0]).abs() < 1e-12);
        assert!((g.components()[0].var[0] - var[0]).abs() < 1e-12);
        assert_eq!(g.weights(), &[1.0]);
    }

    #[test]
    fn kmeans_one_component_per_point() {
        let ds = Dataset::unlabeled(array![[0.0, 0.0], [1.0, 0.0], [0.0, 3.0], [5.0, 5.0]])
            .unwrap();
        let g = kmeans_pp_init(&ds, 4, 7).unwrap();
        let floor = variance_floor(ds.features().view());
        assert!(g.weights().iter().all(|&w| (w - 0.25).abs() < 1e-15));
        for c in g.components() {
            assert_eq!(c.var, floor);
        }
        let mut means: Vec<Vec<f64>> = g.components().iter().map(|c| c.mean.to_vec()).collect();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(means[0], vec![0.0, 0.0]);
        assert!(kmeans_pp_init(&ds, 5, 0).is_err());
    }

    #[test]
    fn kmeans_is_deterministic() {
        let ds = normal_1d(100, 3);
        assert_eq!(kmeans_pp_init(&ds, 3, 5).unwrap(), kmeans_pp_init(&ds, 3, 5).unwrap());
    }

    #[test]
    fn em_single_gaussian_is_mle() {
        let ds = normal_1d(1000, 11);
        let fit = em_fit(&ds, 1, &EmConfig::default()).unwrap();
        let c = &fit.gmm.components()[0];
        assert!(c.mean[0].abs() < 0.1);
        assert!((c.var[0] - 1.0).abs() < 0.15);
        let x = ds.features();
        assert!((c.mean[0] - x.mean().unwrap()).abs() < 1e-10);
        assert!((c.var[0] - x.var(0.0)).abs() < 1e-10);
        assert!(fit.trace.len() <= 3);
    }

    #[test]
    fn em_identical_points_floor_variance() {
        let ds = Dataset::unlabeled(Array2::from_elem((10, 2), 3.0)).unwrap();
        let fit = em_fit(&ds, 3, &EmConfig::default()).unwrap();
        for c in fit.gmm.components() {
            assert!(c.var.iter().all(|&v| v == MIN_VARIANCE));
        }
    }

    #[test]
    fn em_rejects_bad_config() {
        let ds = normal_1d(10, 0);
        let mut cfg = EmConfig::default();
        cfg.max_iter = 0;
        assert!(em_fit(&ds, 1, &cfg).is_err());
        let mut cfg = EmConfig::default();
        cfg.tol = 0.0;
        assert!(em_fit(&ds, 1, &cfg).is_err());
        assert!(em_fit(&ds, 11, &EmConfig::default()).is_err());
    }

    #[test]
    fn responsibilities_examples() {
        let one = Gmm::new(vec![1.0], vec![gauss(&[0.0], &[1.0])]).unwrap();
        let r = one.responsibilities(array![[0.3], [-9.0]].view()).unwrap();
        assert_eq!(r, array![[1.0], [1.0]]);

        let two = Gmm::new(
            vec![0.5, 0.5],
            vec![gauss(&[-1.0, 0.0], &[2.0, 1.0]), gauss(&[1.0, 0.0], &[2.0, 1.0])],
        )
        .unwrap();
        let r = two.responsibilities(array![[0.0, 5.0]].view()).unwrap();
        assert!((r[[0, 0]] - 0.5).abs() < 1e-15);

        let far = Gmm::new(
            vec![0.5, 0.5],
            vec![gauss(&[0.0], &[1.0]), gauss(&[20.0], &[1.0])],
        )
        .unwrap();
        let r = far.responsibilities(array![[0.0]].view()).unwrap();
        // density ratio exp(-200) / (1 + exp(-200))
        let other = (-200.0f64).exp();
        assert!(r[[0, 0]] > 1.0 - 1e-9);
        assert!((r[[0, 1]] - other / (1.0 + other)).abs() < 1e-300);
        assert!(far.responsibilities(array![[0.0, 1.0]].view()).is_err());
    }

    #[test]
    fn log_likelihood_examples() {
        let std = Gmm::new(vec![1.0], vec![gauss(&[0.0], &[1.0])]).unwrap();
        let ll = std.log_likelihood(array![[0.0]].view()).unwrap();
        assert!((ll + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);

        let mix = Gmm::new(
            vec![0.3, 0.7],
            vec![gauss(&[0.0, 1.0], &[1.0, 2.0]), gauss(&[2.0, -1.0], &[0.5, 1.5])],
        )
        .unwrap();
        let pts = array![[0.0, 0.0], [1.0, 1.0], [-1.0, 2.0], [3.0, -2.0], [0.5, 0.5]];
        let direct: f64 = pts
            .rows()
            .into_iter()
            .map(|p| {
                let dens = |m: [f64; 2], v: [f64; 2]| {
                    (0..2)
                        .map(|j| {
                            (-(p[j] - m[j]).powi(2) / (2.0 * v[j])).exp()
                                / (2.0 * PI * v[j]).sqrt()
                        })
                        .product::<f64>()
                };
                (0.3 * dens([0.0, 1.0], [1.0, 2.0]) + 0.7 * dens([2.0, -1.0], [0.5, 1.5])).ln()
            })
            .sum::<f64>()
            / 5.0;
        let ll = mix.log_likelihood(pts.view()).unwrap();
        assert!((ll - direct).abs() < 1e-12);

        let padded = Gmm::new(
            vec![0.3, 0.7, 0.0],
            vec![
                gauss(&[0.0, 1.0], &[1.0, 2.0]),
                gauss(&[2.0, -1.0], &[0.5, 1.5]),
                gauss(&[9.0, 9.0], &[1.0, 1.0]),
            ],
        )
        .unwrap();
        assert_eq!(padded.log_likelihood(pts.view()).unwrap(), ll);
    }

    #[test]
    fn sample_examples() {
        let floor = MIN_VARIANCE;
        let tight = Gmm::new(vec![1.0], vec![gauss(&[2.0, -1.0], &[floor, floor])]).unwrap();
        let (x, _) = tight.sample(500, 1).unwrap();
        for row in x.rows() {
            assert!((row[0] - 2.0).abs() < 6.0 * floor.sqrt());
            assert!((row[1] + 1.0).abs() < 6.0 * floor.sqrt());
        }
        let lopsided = Gmm::new(
            vec![1.0, 0.0],
            vec![gauss(&[0.0], &[1.0]), gauss(&[5.0], &[1.0])],
        )
        .unwrap();
        let (_, ids) = lopsided.sample(1000, 2).unwrap();
        assert!(ids.iter().all(|&k| k == 0));
        assert_eq!(lopsided.sample(10, 3).unwrap(), lopsided.sample(10, 3).unwrap());
        assert!(lopsided.sample(0, 3).is_err());
    }

    #[test]
    fn label_components_examples() {
        let g = Gmm::new(
            vec![0.5, 0.5],
            vec![gauss(&[0.0], &[1.0]), gauss(&[50.0], &[1.0])],
        )
        .unwrap();
        let ds = Dataset::labeled(array![[0.1], [-0.2], [49.0], [51.0]], vec![1, 1, 0, 0], 2)
            .unwrap();
        let (lab, fallback) = g.label_components(&ds).unwrap();
        assert!(fallback.is_empty());
        let dist = lab.label_dist().unwrap();
        assert!((dist[[0, 1]] - 1.0).abs() < 1e-12 && dist[[0, 0]] < 1e-12);
        assert!((dist[[1, 0]] - 1.0).abs() < 1e-12 && dist[[1, 1]] < 1e-12);
        assert_eq!(lab.hard_component_labels().unwrap(), vec![1, 0]);

        let single = Gmm::new(vec![1.0], vec![gauss(&[0.0], &[1.0])]).unwrap();
        let ds = Dataset::labeled(array![[0.0], [1.0], [2.0], [3.0]], vec![0, 1, 0, 1], 2)
            .unwrap();
        let (lab, _) = single.label_components(&ds).unwrap();
        assert_eq!(lab.label_dist().unwrap(), &array![[0.5, 0.5]]);

        let unlabeled = ds.without_labels();
        assert!(single.label_components(&unlabeled).is_err());
    }

    #[test]
    fn label_components_falls_back_for_empty_components() {
        let g = Gmm::new(
            vec![0.5, 0.5],
            vec![gauss(&[0.0], &[1.0]), gauss(&[1e6], &[1.0])],
        )
        .unwrap();
        let ds = Dataset::labeled(array![[0.0], [1.0], [0.5], [0.2]], vec![0, 0, 0, 1], 2)
            .unwrap();
        let (lab, fallback) = g.label_components(&ds).unwrap();
        assert_eq!(fallback, vec![1]);
        assert_eq!(lab.label_dist().unwrap().row(1).to_vec(), vec![0.75, 0.25]);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let g = Gmm::new(
            vec![0.1, 0.9],
            vec![
                gauss(&[1.0 / 3.0, -2.5e-7], &[0.7, 1e-12]),
                gauss(&[std::f64::consts::E, 4.0], &[2.0, 3.0]),
            ],
        )
        .unwrap()
        .with_label_dist(array![[0.25, 0.75], [1.0, 0.0]])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        g.save_json(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let order: Vec<usize> = ["weights", "means", "vars", "label_dist"]
            .iter()
            .map(|k| text.find(k).unwrap())
            .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(Gmm::load_json(&path).unwrap(), g);

        let unlabeled = Gmm::new(vec![1.0], vec![gauss(&[0.0], &[1.0])]).unwrap();
        unlabeled.save_json(&path).unwrap();
        assert!(!std::fs::read_to_string(&path).unwrap().contains("label_dist"));
    }

    #[test]
    fn invalid_mixtures_are_rejected() {
        assert!(Gmm::new(vec![0.5, 0.4], vec![gauss(&[0.0], &[1.0]), gauss(&[0.0], &[1.0])])
            .is_err());
        assert!(Gmm::new(vec![1.0], vec![]).is_err());
        assert!(DiagGaussian::new(array![0.0], array![0.0]).is_err());
        let g = Gmm::new(vec![1.0], vec![gauss(&[0.0], &[1.0])]).unwrap();
        assert!(g.clone().with_label_dist(array![[0.5, 0.6]]).is_err());
        assert!(g.with_label_dist(array![[0.5, 0.5], [1.0, 0.0]]).is_err());
    }

    #[test]
    fn bic_prefers_true_component_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((400, 1), |(i, _)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            if i % 2 == 0 { z } else { z + 12.0 }
        });
        let ds = Dataset::unlabeled(x).unwrap();
        let (fit, scores) = select_k_bic(&ds, 1..=4, &EmConfig::default()).unwrap();
        assert_eq!(fit.gmm.n_components(), 2, "{scores:?}");
        assert_eq!(scores.len(), 4);
    }
}
