//! Optimal transport between Gaussian mixtures and the three mixture-based
//! adaptation strategies: MAP labeling, labeled sampling and the mixture
//! transport map.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{save_csv, Dataset};
use crate::error::{Error, Result};
use crate::gaussian::{monge_map_diag, w2_diag_squared, AffineMap, LinearPart};
use crate::gmm::{argmax, categorical, Gmm};
use crate::io::{write_atomic, write_json};
use crate::ot::{solve_exact, CostMatrix, Histogram};

/// Discrete plan between mixture components together with the Gaussian maps
/// on its support.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePlan {
    pub gamma: Array2<f64>,
    pub mw2_squared: f64,
    /// Keyed by `(source component, target component)` for every `γ_ij > 0`.
    pub component_maps: BTreeMap<(usize, usize), AffineMap>,
}

impl MixturePlan {
    pub fn support_size(&self) -> usize {
        self.component_maps.len()
    }

    pub fn mw2(&self) -> f64 {
        self.mw2_squared.sqrt()
    }
}

/// Solves the K₁ × K₂ transport problem between mixture weights with
/// pairwise squared W2 between components as cost.
pub fn mixture_plan(src: &Gmm, tgt: &Gmm) -> Result<MixturePlan> {
    if src.dim() != tgt.dim() {
        return Err(Error::validation(format!(
            "source mixture has d={} but target has d={}",
            src.dim(),
            tgt.dim()
        )));
    }
    let (k1, k2) = (src.n_components(), tgt.n_components());
    let mut c = Array2::zeros((k1, k2));
    for (i, p) in src.components().iter().enumerate() {
        for (j, q) in tgt.components().iter().enumerate() {
            c[[i, j]] = w2_diag_squared(p, q)?;
        }
    }
    let cost = CostMatrix::new(c)?;
    let p = Histogram::new(src.weights().to_vec())?;
    let q = Histogram::new(tgt.weights().to_vec())?;
    let plan = solve_exact(&p, &q, &cost)?;
    let mut component_maps = BTreeMap::new();
    for ((i, j), &g) in plan.gamma.indexed_iter() {
        if g > 0.0 {
            let map = monge_map_diag(&src.components()[i], &tgt.components()[j])?;
            component_maps.insert((i, j), map);
        }
    }
    Ok(MixturePlan {
        gamma: plan.gamma,
        mw2_squared: plan.cost,
        component_maps,
    })
}

pub fn mw2_distance(src: &Gmm, tgt: &Gmm) -> Result<f64> {
    Ok(mixture_plan(src, tgt)?.mw2())
}

/// Labels target components by pushing the source label distribution
/// through the plan: `Q(y | j) = Σ_i γ_ij P(y | i) / Σ_i γ_ij`.
///
/// Target components that receive no mass get the global source class
/// frequency `Σ_i π_i P(y | i)`; their indices are returned.
pub fn transfer_component_labels(
    plan: &MixturePlan,
    src: &Gmm,
    tgt: &Gmm,
) -> Result<(Gmm, Vec<usize>)> {
    let src_dist = src.require_label_dist()?;
    let (k1, k2) = plan.gamma.dim();
    if k1 != src.n_components() || k2 != tgt.n_components() {
        return Err(Error::validation(format!(
            "plan is {k1}x{k2} but mixtures have {} and {} components",
            src.n_components(),
            tgt.n_components()
        )));
    }
    let pi = Array1::from(src.weights().to_vec());
    let global = pi.dot(src_dist);
    let mass = plan.gamma.sum_axis(ndarray::Axis(0));
    let mut dist = plan.gamma.t().dot(src_dist);
    let mut fallback = Vec::new();
    for (j, mut row) in dist.rows_mut().into_iter().enumerate() {
        if mass[j] > 0.0 {
            row /= mass[j];
            let s = row.sum();
            row /= s;
        } else {
            row.assign(&global);
            fallback.push(j);
        }
    }
    Ok((tgt.clone().with_label_dist(dist)?, fallback))
}

/// Which adaptation produced a result. The first three are mixture based,
/// the rest are the empirical and linear baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "source-only")]
    SourceOnly,
    #[serde(rename = "otda-emd")]
    OtdaEmd,
    #[serde(rename = "otda-sinkhorn")]
    OtdaSinkhorn,
    #[serde(rename = "otda-linear")]
    OtdaLinear,
    #[serde(rename = "gmm-otda-m")]
    GmmOtdaM,
    #[serde(rename = "gmm-otda-e")]
    GmmOtdaE,
    #[serde(rename = "gmm-otda-t")]
    GmmOtdaT,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::SourceOnly,
        Method::OtdaEmd,
        Method::OtdaSinkhorn,
        Method::OtdaLinear,
        Method::GmmOtdaM,
        Method::GmmOtdaE,
        Method::GmmOtdaT,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SourceOnly => "source-only",
            Method::OtdaEmd => "otda-emd",
            Method::OtdaSinkhorn => "otda-sinkhorn",
            Method::OtdaLinear => "otda-linear",
            Method::GmmOtdaM => "gmm-otda-m",
            Method::GmmOtdaE => "gmm-otda-e",
            Method::GmmOtdaT => "gmm-otda-t",
        }
    }

    pub fn uses_mixtures(self) -> bool {
        matches!(self, Method::GmmOtdaM | Method::GmmOtdaE | Method::GmmOtdaT)
    }

    pub fn list() -> String {
        Method::ALL.map(Method::name).join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::validation(format!(
                    "unknown method '{s}'; expected one of: {}",
                    Method::list()
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationDiagnostics {
    pub strategy: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mw2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan_support: Option<usize>,
    /// Number of predicted or produced points per class.
    pub class_counts: Vec<usize>,
    /// Components whose label distribution fell back to global frequencies.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallback_components: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

/// Output of one adaptation: labels for the target samples (MAP strategy)
/// or a labeled point set to train on (every other strategy).
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationResult {
    pub predicted_labels: Option<Vec<usize>>,
    pub transported: Option<Dataset>,
    pub diagnostics: AdaptationDiagnostics,
}

pub(crate) fn class_counts(labels: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}

impl AdaptationResult {
    pub(crate) fn labels(strategy: Method, labels: Vec<usize>, n_classes: usize) -> Self {
        let class_counts = class_counts(&labels, n_classes);
        AdaptationResult {
            predicted_labels: Some(labels),
            transported: None,
            diagnostics: AdaptationDiagnostics {
                strategy,
                mw2: None,
                plan_support: None,
                class_counts,
                fallback_components: Vec::new(),
                converged: None,
            },
        }
    }

    pub(crate) fn points(strategy: Method, points: Dataset) -> Self {
        let class_counts = class_counts(
            points.labels().expect("transported points are labeled"),
            points.n_classes(),
        );
        AdaptationResult {
            predicted_labels: None,
            transported: Some(points),
            diagnostics: AdaptationDiagnostics {
                strategy,
                mw2: None,
                plan_support: None,
                class_counts,
                fallback_components: Vec::new(),
                converged: None,
            },
        }
    }

    /// Records the mixture plan's distance and support size.
    pub fn with_plan(mut self, plan: &MixturePlan) -> Self {
        self.diagnostics.mw2 = Some(plan.mw2());
        self.diagnostics.plan_support = Some(plan.support_size());
        self
    }

    pub fn with_fallback(mut self, components: Vec<usize>) -> Self {
        self.diagnostics.fallback_components = components;
        self
    }

    /// Writes the points (or a single `label` column for MAP results) to
    /// `path` as CSV and the diagnostics to `<path>.json`.
    pub fn export(&self, path: &Path) -> Result<()> {
        if let Some(ds) = &self.transported {
            save_csv(ds, path)?;
        } else if let Some(labels) = &self.predicted_labels {
            let mut out = String::from("label\n");
            for y in labels {
                out.push_str(&format!("{y}\n"));
            }
            write_atomic(path, out.as_bytes())?;
        }
        write_json(&diagnostics_path(path), &self.diagnostics)
    }
}

pub fn diagnostics_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// MAP labeling: `ŷ(x) = argmax_y Σ_k resp(x, k) Q(y | k)`, lowest class on
/// ties.
pub fn adapt_map(tgt: &Gmm, x_target: ArrayView2<'_, f64>) -> Result<AdaptationResult> {
    let dist = tgt.require_label_dist()?;
    let resp = tgt.responsibilities(x_target)?;
    let scores = resp.dot(dist);
    let labels: Vec<usize> = scores
        .rows()
        .into_iter()
        .map(|r| argmax(r.iter().copied()))
        .collect();
    Ok(AdaptationResult::labels(Method::GmmOtdaM, labels, dist.ncols()))
}

/// Labeled sampling: `n` draws from the target mixture, each labeled by a
/// categorical draw from its component's label distribution.
pub fn adapt_sample(tgt: &Gmm, n: usize, seed: u64) -> Result<AdaptationResult> {
    let dist = tgt.require_label_dist()?;
    let (x, ids) = tgt.sample(n, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let labels: Vec<usize> = ids
        .iter()
        .map(|&k| {
            let row = dist.row(k);
            categorical(&mut rng, row.as_slice().expect("standard layout"))
        })
        .collect();
    let points = Dataset::labeled(x, labels, dist.ncols())?;
    Ok(AdaptationResult::points(Method::GmmOtdaE, points))
}

/// Mixture transport map: each source point goes to
/// `Σ_{i,j} resp(x, i) · γ_ij / π_i · T_ij(x)` and keeps its label.
pub fn adapt_transport(
    plan: &MixturePlan,
    src: &Gmm,
    source: &Dataset,
) -> Result<AdaptationResult> {
    let labels = source.require_labels("mixture transport")?.to_vec();
    let x = source.features().view();
    if plan.gamma.nrows() != src.n_components() {
        return Err(Error::validation(format!(
            "plan has {} rows but the source mixture has {} components",
            plan.gamma.nrows(),
            src.n_components()
        )));
    }
    let resp = src.responsibilities(x)?;
    let (n, d) = x.dim();
    let mut out = Array2::<f64>::zeros((n, d));
    let mut total = Array1::<f64>::zeros(n);
    for (&(i, j), map) in &plan.component_maps {
        let scale = plan.gamma[[i, j]] / src.weights()[i];
        let w = resp.column(i).mapv(|r| r * scale);
        Zip::from(out.rows_mut())
            .and(x.rows())
            .and(&w)
            .and(&mut total)
            .par_for_each(|mut o, xi, &wi, t| {
                if wi > 0.0 {
                    *t += wi;
                    match &map.a {
                        LinearPart::Diagonal(a) => {
                            for l in 0..d {
                                o[l] += wi * (a[l] * xi[l] + map.b[l]);
                            }
                        }
                        LinearPart::Dense(a) => {
                            let y = a.dot(&xi) + &map.b;
                            o.scaled_add(wi, &y);
                        }
                    }
                }
            });
    }
    if let Some(i) = total.iter().position(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::validation(format!(
            "source point {i} has no responsibility mass on the plan support"
        )));
    }
    // weights sum to one up to rounding; renormalize the remainder away
    Zip::from(out.rows_mut())
        .and(&total)
        .for_each(|mut o, &t| o /= t);
    let points = Dataset::labeled(out, labels, source.n_classes())?;
    Ok(AdaptationResult::points(Method::GmmOtdaT, points).with_plan(plan))
}
