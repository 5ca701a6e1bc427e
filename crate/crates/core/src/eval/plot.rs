//! Scatter data for domain plots: 2D coordinates (PCA beyond two dimensions),
//! a CSV table and an optional standalone SVG.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io::{write_atomic, write_json};

pub const POWER_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Target,
    Transported,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Source => "source",
            Role::Target => "target",
            Role::Transported => "transported",
        })
    }
}

/// Sidecar written next to the scatter CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionInfo {
    /// `identity` for data with at most two dimensions, `pca` otherwise.
    pub projection: String,
    pub input_dim: usize,
    /// Share of total variance in the plotted coordinates.
    pub variance_captured: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mean: Vec<f64>,
}

pub struct Projection {
    pub coords: Array2<f64>,
    pub info: ProjectionInfo,
}

/// Projects rows to two coordinates: unchanged for d = 2, zero-padded for
/// d = 1, otherwise onto the top two principal axes found by power iteration
/// with deflation.
pub fn project_2d(x: &Array2<f64>) -> Projection {
    let (n, d) = x.dim();
    if d <= 2 || n == 0 {
        let mut coords = Array2::zeros((n, 2));
        coords.slice_mut(ndarray::s![.., ..d.min(2)]).assign(&x.slice(ndarray::s![.., ..d.min(2)]));
        return Projection {
            coords,
            info: ProjectionInfo {
                projection: "identity".into(),
                input_dim: d,
                variance_captured: 1.0,
                components: Vec::new(),
                mean: Vec::new(),
            },
        };
    }
    let mean = x.mean_axis(Axis(0)).expect("n > 0");
    let centered = x - &mean;
    let mut cov = centered.t().dot(&centered) / n as f64;
    let total = cov.diag().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut comps = Vec::new();
    let mut captured = 0.0;
    for _ in 0..2 {
        let mut v = Array1::from_shape_fn(d, |_| rng.random_range(-1.0f64..1.0));
        v /= v.dot(&v).sqrt();
        for _ in 0..POWER_ITERATIONS {
            let w = cov.dot(&v);
            let norm = w.dot(&w).sqrt();
            if norm == 0.0 {
                break;
            }
            v = w / norm;
        }
        let lambda = v.dot(&cov.dot(&v));
        captured += lambda;
        let outer = v
            .view()
            .insert_axis(Axis(1))
            .dot(&v.view().insert_axis(Axis(0)));
        cov.scaled_add(-lambda, &outer);
        comps.push(v);
    }
    let mut coords = Array2::zeros((n, 2));
    for (k, v) in comps.iter().enumerate() {
        coords.column_mut(k).assign(&centered.dot(v));
    }
    Projection {
        coords,
        info: ProjectionInfo {
            projection: "pca".into(),
            input_dim: d,
            variance_captured: if total > 0.0 { captured / total } else { 1.0 },
            components: comps.iter().map(|v| v.to_vec()).collect(),
            mean: mean.to_vec(),
        },
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `x,y,label,role` rows for every point of every set, the projection
/// sidecar at `<path>.json`, and an SVG scatter when `svg` is given.
/// Unlabeled points get an empty label field.
pub fn emit_plot_data(
    sets: &[(Role, &Dataset)],
    path: &Path,
    svg: Option<&Path>,
) -> Result<ProjectionInfo> {
    let d = sets.first().map_or(2, |(_, ds)| ds.dim());
    if sets.iter().any(|(_, ds)| ds.dim() != d) {
        return Err(Error::validation("point sets have different dimensions"));
    }
    let n: usize = sets.iter().map(|(_, ds)| ds.n_samples()).sum();
    let mut all = Array2::zeros((n, d));
    let mut rows = Vec::with_capacity(n);
    let mut at = 0;
    for (role, ds) in sets {
        let k = ds.n_samples();
        all.slice_mut(ndarray::s![at..at + k, ..]).assign(ds.features());
        for i in 0..k {
            rows.push((*role, ds.labels().map(|l| l[i])));
        }
        at += k;
    }
    let proj = project_2d(&all);
    let mut csv = String::from("x,y,label,role\n");
    for (i, (role, label)) in rows.iter().enumerate() {
        let label = label.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{:?},{:?},{label},{role}",
            proj.coords[[i, 0]],
            proj.coords[[i, 1]]
        );
    }
    write_atomic(path, csv.as_bytes())?;
    write_json(&sidecar_path(path), &proj.info)?;
    if let Some(svg_path) = svg {
        write_atomic(svg_path, render_svg(&proj.coords, &rows).as_bytes())?;
    }
    Ok(proj.info)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn render_svg(coords: &Array2<f64>, rows: &[(Role, Option<usize>)]) -> String {
    let (w, h, pad) = (640.0, 480.0, 20.0);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    if coords.nrows() > 0 {
        let col = |k: usize| {
            let c = coords.column(k);
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, (hi - lo).max(1e-12))
        };
        let (x0, xr) = col(0);
        let (y0, yr) = col(1);
        for (i, (role, label)) in rows.iter().enumerate() {
            let px = pad + (coords[[i, 0]] - x0) / xr * (w - 2.0 * pad);
            let py = h - pad - (coords[[i, 1]] - y0) / yr * (h - 2.0 * pad);
            let color = label.map_or("#000000", |l| PALETTE[l % PALETTE.len()]);
            let _ = match role {
                Role::Source => writeln!(
                    out,
                    "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"{color}\" fill-opacity=\"0.6\"/>"
                ),
                Role::Target => writeln!(
                    out,
                    "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"none\" stroke=\"{color}\"/>"
                ),
                Role::Transported => writeln!(
                    out,
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"5\" height=\"5\" fill=\"{color}\" fill-opacity=\"0.6\"/>",
                    px - 2.5,
                    py - 2.5
                ),
            };
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn two_dimensional_input_passes_through() {
        let ds = Dataset::labeled(array![[1.5, -2.0], [0.25, 3.0]], vec![0, 1], 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let info = emit_plot_data(&[(Role::Source, &ds)], &path, None).unwrap();
        assert_eq!(info.projection, "identity");
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "x,y,label,role\n1.5,-2.0,0,source\n0.25,3.0,1,source\n"
        );
    }

    #[test]
    fn empty_input_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        emit_plot_data(&[], &path, None).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "x,y,label,role\n");
    }

    #[test]
    fn pca_finds_dominant_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scales = [5.0, 3.0, 0.1, 0.1, 0.1];
        let x = Array2::from_shape_fn((2000, 5), |(_, j)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scales[j]
        });
        let p = project_2d(&x);
        let var: f64 = scales.iter().map(|s| s * s).sum();
        assert!((p.info.variance_captured - 34.0 / var).abs() < 0.01);
        let c = &p.info.components;
        assert!(c[0][0].abs() > 0.99 && c[1][1].abs() > 0.99);
        // captured variance equals the variance of the projected coordinates
        let proj_var = p.coords.var_axis(Axis(0), 0.0).sum();
        let total = x.var_axis(Axis(0), 0.0).sum();
        assert!((proj_var / total - p.info.variance_captured).abs() < 1e-9);
    }

    #[test]
    fn isotropic_pca_preserves_in_plane_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((300, 4), |_| StandardNormal.sample(&mut rng));
        let p = project_2d(&x);
        // projections never stretch distances
        for i in 0..20 {
            let j = i + 1;
            let full = (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum();
            let proj = (&p.coords.row(i) - &p.coords.row(j)).mapv(|v| v * v).sum();
            assert!(proj <= full + 1e-9);
        }
        assert!(p.info.variance_captured > 0.4 && p.info.variance_captured < 0.7);
    }

    #[test]
    fn svg_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let a = Dataset::labeled(array![[0.0, 0.0], [1.0, 1.0]], vec![0, 1], 2).unwrap();
        let b = Dataset::unlabeled(array![[0.5, 0.2]]).unwrap();
        let svg = dir.path().join("p.svg");
        emit_plot_data(
            &[(Role::Source, &a), (Role::Target, &b)],
            &dir.path().join("p.csv"),
            Some(&svg),
        )
        .unwrap();
        let text = std::fs::read_to_string(&svg).unwrap();
        assert!(text.starts_with("<svg"));
        assert_eq!(text.matches("<circle").count(), 3);
    }
}
