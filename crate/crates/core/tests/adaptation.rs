mod common;

use std::f64::consts::FRAC_PI_4;

use common::*;
use gmm_otda::data::{make_shifted_blobs, save_csv};
use gmm_otda::eval::{desk_scale_task, run_experiment, ExperimentConfig};
use gmm_otda::ot::{solve_exact, squared_euclidean_cost, Histogram};
use gmm_otda::otda::Method;
use gmm_otda::{otda_empirical, otda_linear, Dataset, EmpiricalSolver};
use ndarray::{Array2, Axis};
use rand::Rng;

fn cloud(seed: u64, n: usize) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((n, 2), |_| r.random_range(-3.0..3.0))
}

#[test]
fn five_point_transport_is_the_best_permutation() {
    for seed in 0..20 {
        let xs = cloud(seed, 5);
        let xt = cloud(1000 + seed, 5);
        let c = squared_euclidean_cost(xs.view(), xt.view()).unwrap();
        let best = permutations(5)
            .into_iter()
            .min_by(|a, b| {
                let cost = |p: &Vec<usize>| (0..5).map(|i| c.get(i, p[i])).sum::<f64>();
                cost(a).total_cmp(&cost(b))
            })
            .unwrap();
        let src = Dataset::labeled(xs, vec![0, 1, 0, 1, 0], 2).unwrap();
        let tgt = Dataset::unlabeled(xt.clone()).unwrap();
        let out = otda_empirical(&src, &tgt, EmpiricalSolver::Exact, false)
            .unwrap()
            .transported
            .unwrap();
        for i in 0..5 {
            for l in 0..2 {
                assert!((out.features()[[i, l]] - xt[[best[i], l]]).abs() < 1e-12);
            }
        }
    }
}

/// Convex hull by monotone chain, counter-clockwise.
fn hull(points: &Array2<f64>) -> Vec<[f64; 2]> {
    let mut p: Vec<[f64; 2]> = points.rows().into_iter().map(|r| [r[0], r[1]]).collect();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut h: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = h.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for &q in iter {
            while h.len() >= start + 2 && cross(h[h.len() - 2], h[h.len() - 1], q) <= 0.0 {
                h.pop();
            }
            h.push(q);
        }
        h.pop();
    }
    h
}

#[test]
fn class_means_stay_inside_the_target_hull() {
    let (src, tgt) = make_shifted_blobs(40, 3, 2, &[2.0, -1.0], 0.7, 1.0, 4).unwrap();
    let tgt = tgt.without_labels();
    let h = hull(tgt.features());
    for solver in [EmpiricalSolver::Exact, EmpiricalSolver::sinkhorn(None)] {
        let out = otda_empirical(&src, &tgt, solver, false).unwrap().transported.unwrap();
        let labels = out.labels().unwrap();
        for c in 0..3 {
            let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let m = out.features().select(Axis(0), &rows).mean_axis(Axis(0)).unwrap();
            for k in 0..h.len() {
                let (a, b) = (h[k], h[(k + 1) % h.len()]);
                let side = (b[0] - a[0]) * (m[1] - a[1]) - (b[1] - a[1]) * (m[0] - a[0]);
                assert!(side >= -1e-9, "class {c} mean outside the hull");
            }
        }
    }
}

#[test]
fn baselines_keep_every_source_point_and_label() {
    let (src, tgt) = make_shifted_blobs(30, 2, 3, &[1.0, 0.0, -1.0], 0.3, 1.0, 8).unwrap();
    let tgt = tgt.without_labels();
    let results = [
        otda_empirical(&src, &tgt, EmpiricalSolver::Exact, false).unwrap(),
        otda_empirical(&src, &tgt, EmpiricalSolver::sinkhorn(None), false).unwrap(),
        otda_linear(&src, &tgt, None).unwrap(),
    ];
    for res in results {
        let out = res.transported.unwrap();
        assert_eq!(out.n_samples(), src.n_samples());
        assert_eq!(out.labels(), src.labels());
        assert_eq!(res.diagnostics.class_counts, vec![30, 30]);
    }
}

/// Under a 45° rotation of three blobs the cheapest coupling of the point
/// clouds is not the class-preserving one, so barycentric transport mixes
/// classes whatever the solver accuracy.
#[test]
fn rotated_blobs_are_cheaper_to_couple_across_classes() {
    let (src, tgt) = make_shifted_blobs(100, 3, 2, &[5.0, 0.0], FRAC_PI_4, 1.0, 0).unwrap();
    let n = src.n_samples();
    let uniform = Histogram::uniform(n).unwrap();
    let c = squared_euclidean_cost(src.features().view(), tgt.features().view()).unwrap();
    let global = solve_exact(&uniform, &uniform, &c).unwrap().cost;
    let mut per_class = 0.0;
    for k in 0..3 {
        let pick = |ds: &Dataset| -> Vec<usize> {
            (0..n).filter(|&i| ds.labels().unwrap()[i] == k).collect()
        };
        let xs = src.features().select(Axis(0), &pick(&src));
        let xt = tgt.features().select(Axis(0), &pick(&tgt));
        let ck = squared_euclidean_cost(xs.view(), xt.view()).unwrap();
        let h = Histogram::uniform(xs.nrows()).unwrap();
        per_class += solve_exact(&h, &h, &ck).unwrap().cost * xs.nrows() as f64 / n as f64;
    }
    assert!(global < 0.95 * per_class, "{global} vs {per_class}");
}

#[test]
fn mixture_map_beats_source_only_on_shifted_blobs() {
    let cfg = ExperimentConfig {
        methods: vec![Method::SourceOnly, Method::GmmOtdaM],
        ..ExperimentConfig::new(vec![desk_scale_task(5.0, FRAC_PI_4)])
    };
    let rep = run_experiment(&cfg).unwrap();
    let acc = |m| rep.get("blobs", m).unwrap().accuracy;
    assert!(acc(Method::SourceOnly) <= 0.75);
    assert!(acc(Method::GmmOtdaM) >= 0.95);
    assert_eq!(rep.results[1].k_src, Some(3));
}

#[test]
fn csv_tasks_run_from_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt) = make_shifted_blobs(40, 2, 3, &[0.5, 0.0, 0.0], 0.0, 1.0, 2).unwrap();
    save_csv(&src, dir.path().join("src.csv")).unwrap();
    save_csv(&tgt, dir.path().join("tgt.csv")).unwrap();
    let config = r#"{
        "schema": 1,
        "tasks": [{"name": "csv", "data": {"kind": "csv", "source": "src.csv", "target": "tgt.csv"}}],
        "methods": ["source-only", "otda-linear", "gmm-otda-t"],
        "classifier": {"kind": "logreg"}
    }"#;
    let path = dir.path().join("grid.json");
    std::fs::write(&path, config).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    let rep = run_experiment(&cfg).unwrap();
    assert_eq!(rep.results.len(), 3);
    for r in &rep.results {
        assert!((0.0..=1.0).contains(&r.accuracy));
        assert!(r.accuracy >= 0.9, "{} {}", r.method, r.accuracy);
        assert_eq!(r.classifier.as_deref(), Some("logreg"));
    }
    let out = dir.path().join("out");
    rep.write(&out).unwrap();
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 + 3);
}
