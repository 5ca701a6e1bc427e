//! Inputs shared by the benchmarks.

use gmm_otda::data::make_shifted_blobs;
use gmm_otda::ot::squared_euclidean_cost;
use gmm_otda::{CostMatrix, Dataset, Histogram};

/// Source and target of the shifted-blobs task with `n_per_class` points per
/// class in each domain.
pub fn blobs(n_per_class: usize) -> (Dataset, Dataset) {
    make_shifted_blobs(n_per_class, 3, 2, &[5.0, 0.0], std::f64::consts::FRAC_PI_4, 1.0, 0)
        .expect("valid generator parameters")
}

/// Uniform histograms and the squared Euclidean cost between the two domains.
pub fn transport_problem(n_per_class: usize) -> (Histogram, Histogram, CostMatrix) {
    let (src, tgt) = blobs(n_per_class);
    let cost = squared_euclidean_cost(src.features().view(), tgt.features().view())
        .expect("matching dimensions");
    let p = Histogram::uniform(src.n_samples()).expect("non-empty");
    let q = Histogram::uniform(tgt.n_samples()).expect("non-empty");
    (p, q, cost)
}
