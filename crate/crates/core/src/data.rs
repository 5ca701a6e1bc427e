//! Datasets, CSV ingestion, standardization and synthetic shifted domains.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Smallest admissible standardization scale.
pub const SCALE_FLOOR: f64 = 1e-12;

/// A feature matrix (rows are samples) with optional class labels in `0..n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    n_classes: usize,
}

impl Dataset {
    /// Builds a labeled dataset. `n_classes` must exceed every label.
    pub fn labeled(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let ds = Dataset {
            features,
            labels: Some(labels),
            n_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn unlabeled(features: Array2<f64>) -> Result<Self> {
        let ds = Dataset {
            features,
            labels: None,
            n_classes: 1,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let (n, d) = self.features.dim();
        if n == 0 || d == 0 {
            return Err(Error::validation(format!(
                "dataset must have at least one row and one column, got {n}x{d}"
            )));
        }
        if let Some((idx, _)) = self
            .features
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
        {
            return Err(Error::validation(format!(
                "non-finite feature at row {}, column {}",
                idx / d,
                idx % d
            )));
        }
        if self.n_classes == 0 {
            return Err(Error::validation("n_classes must be positive"));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::validation(format!(
                    "{} labels for {n} rows",
                    labels.len()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&y| y >= self.n_classes) {
                return Err(Error::validation(format!(
                    "label {bad} out of range for {} classes",
                    self.n_classes
                )));
            }
        }
        Ok(())
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Labels, or a validation error naming `what` when absent.
    pub fn require_labels(&self, what: &str) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::validation(format!("{what} requires labeled data")))
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Same features, labels dropped.
    pub fn without_labels(&self) -> Dataset {
        Dataset {
            features: self.features.clone(),
            labels: None,
            n_classes: 1,
        }
    }

    /// One-hot encoding of the labels, n × n_classes.
    pub fn one_hot(&self) -> Result<Array2<f64>> {
        let labels = self.require_labels("one-hot encoding")?;
        let mut out = Array2::zeros((labels.len(), self.n_classes));
        for (i, &y) in labels.iter().enumerate() {
            out[[i, y]] = 1.0;
        }
        Ok(out)
    }

    /// Rows at the given indices, in order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let features = self.features.select(Axis(0), rows);
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&r| l[r]).collect());
        Dataset {
            features,
            labels,
            n_classes: self.n_classes,
        }
    }

    fn with_features(&self, features: Array2<f64>) -> Dataset {
        Dataset {
            features,
            labels: self.labels.clone(),
            n_classes: self.n_classes,
        }
    }
}

/// Dataset shape written next to exported CSV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub d: usize,
    pub n_classes: usize,
}

/// Loads a headered CSV. When `label_column` is given that column becomes the
/// labels, remapped to `0..n_classes` in sorted order of the original values.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset> {
    read_csv(path.as_ref(), label_column, &[])
}

/// Loads only the feature columns, skipping `ignore` columns without parsing them.
pub fn load_csv_features(path: impl AsRef<Path>, ignore: &[&str]) -> Result<Dataset> {
    read_csv(path.as_ref(), None, ignore)
}

fn read_csv(path: &Path, label_column: Option<&str>, ignore: &[&str]) -> Result<Dataset> {
    let parse_err = |row: usize, column: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(0, "-", e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let label_idx = match label_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::validation(format!("label column {name:?} not found")))?,
        ),
        None => None,
    };
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|&c| Some(c) != label_idx && !ignore.contains(&headers[c].as_str()))
        .collect();
    if feature_idx.is_empty() {
        return Err(Error::validation("CSV has no feature columns"));
    }

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    let mut n = 0usize;
    for (r, record) in reader.records().enumerate() {
        // header is row 1
        let row = r + 2;
        let record = record.map_err(|e| parse_err(row, "-", e.to_string()))?;
        for &c in &feature_idx {
            let cell = record.get(c).unwrap_or("").trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(row, &headers[c], format!("cannot parse {cell:?}")))?;
            if !v.is_finite() {
                return Err(Error::validation(format!(
                    "non-finite value {cell:?} at row {row}, column {}",
                    headers[c]
                )));
            }
            values.push(v);
        }
        if let Some(li) = label_idx {
            raw_labels.push(record.get(li).unwrap_or("").trim().to_string());
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::validation(format!("{} has no data rows", path.display())));
    }
    let features = Array2::from_shape_vec((n, feature_idx.len()), values)
        .map_err(|e| Error::validation(e.to_string()))?;
    match label_idx {
        None => Dataset::unlabeled(features),
        Some(_) => {
            let (labels, n_classes) = remap_labels(&raw_labels);
            Dataset::labeled(features, labels, n_classes)
        }
    }
}

/// Maps raw label strings onto `0..n_classes`. Numeric labels sort numerically
/// (so "5" and "5.0" are one class), anything else lexicographically.
fn remap_labels(raw: &[String]) -> (Vec<usize>, usize) {
    let numeric: Option<Vec<f64>> = raw.iter().map(|s| s.parse::<f64>().ok()).collect();
    match numeric {
        Some(values) => {
            let mut distinct = values.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let labels = values
                .iter()
                .map(|v| distinct.partition_point(|d| d < v))
                .collect();
            (labels, distinct.len())
        }
        None => {
            let mut distinct: Vec<&str> = raw.iter().map(String::as_str).collect();
            distinct.sort_unstable();
            distinct.dedup();
            let labels = raw
                .iter()
                .map(|s| distinct.binary_search(&s.as_str()).expect("present"))
                .collect();
            (labels, distinct.len())
        }
    }
}

/// Writes `ds` as CSV with columns `x0..x{d-1}` (plus `label`) and a sidecar
/// `<path>.meta.json` holding `{n, d, n_classes}`.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
    out.push_str(&header.join(","));
    if ds.labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (i, row) in ds.features.rows().into_iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        if let Some(labels) = &ds.labels {
            out.push_str(&format!(",{}", labels[i]));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())?;
    let meta = DatasetMeta {
        n: ds.n_samples(),
        d: ds.dim(),
        n_classes: ds.n_classes,
    };
    let meta_json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_atomic(&meta_path(path), meta_json.as_bytes())
}

/// Location of the metadata sidecar for an exported dataset.
pub fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    name.into()
}

/// Per-dimension affine normalization fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl StandardizationParams {
    /// Population (divisor n) mean and standard deviation of each column.
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let n = x.nrows() as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(x.ncols());
        for row in x.rows() {
            for j in 0..row.len() {
                let c = row[j] - mean[j];
                var[j] += c * c;
            }
        }
        let scale = var.mapv(|v| (v / n).sqrt().max(SCALE_FLOOR));
        StandardizationParams { mean, scale }
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        Ok((&x - &self.mean) / &self.scale)
    }

    pub fn invert(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(z.ncols())?;
        Ok(&z * &self.scale + &self.mean)
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.mean.len() {
            return Err(Error::validation(format!(
                "dimension mismatch: params have d={}, data has d={d}",
                self.mean.len()
            )));
        }
        Ok(())
    }
}

/// Fits standardization on `train` and applies it to `train` followed by `others`.
pub fn standardize(
    train: &Dataset,
    others: &[&Dataset],
) -> Result<(StandardizationParams, Dataset, Vec<Dataset>)> {
    let params = StandardizationParams::fit(train.features.view());
    let train_t = train.with_features(params.apply(train.features.view())?);
    let others_t = others
        .iter()
        .map(|ds| Ok(ds.with_features(params.apply(ds.features.view())?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((params, train_t, others_t))
}

/// Parameters of the synthetic two-domain generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobsSpec {
    pub n_per_class: usize,
    pub n_classes: usize,
    pub dim: usize,
    /// Translation applied to the target domain; empty means zero.
    #[serde(default)]
    pub shift: Vec<f64>,
    /// Rotation of the target domain in the first two dimensions, radians.
    #[serde(default)]
    pub rotation: f64,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_spread() -> f64 {
    1.0
}

impl BlobsSpec {
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        let shift = if self.shift.is_empty() {
            vec![0.0; self.dim]
        } else {
            self.shift.clone()
        };
        make_shifted_blobs(
            self.n_per_class,
            self.n_classes,
            self.dim,
            &shift,
            self.rotation,
            self.spread,
            self.seed,
        )
    }
}

/// Class means of [`make_shifted_blobs`]: evenly spaced on a circle of radius
/// `4 * spread` in the first two dimensions.
pub fn blob_means(n_classes: usize, dim: usize, spread: f64) -> Array2<f64> {
    let radius = 4.0 * spread;
    let mut means = Array2::zeros((n_classes, dim));
    for c in 0..n_classes {
        let angle = std::f64::consts::TAU * c as f64 / n_classes as f64;
        means[[c, 0]] = radius * angle.cos();
        means[[c, 1]] = radius * angle.sin();
    }
    means
}

/// Isotropic Gaussian blobs for a labeled source and a rotated, translated target.
///
/// Both domains are drawn from the same class-conditional blobs; the target
/// sample is then rotated by `rotation_angle` in the first two dimensions and
/// translated by `shift`. Target labels are kept for scoring only.
pub fn make_shifted_blobs(
    n_per_class: usize,
    n_classes: usize,
    d: usize,
    shift: &[f64],
    rotation_angle: f64,
    spread: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if n_per_class == 0 || n_classes == 0 || d < 2 {
        return Err(Error::validation(format!(
            "need n_per_class >= 1, n_classes >= 1, d >= 2 (got {n_per_class}, {n_classes}, {d})"
        )));
    }
    if shift.len() != d {
        return Err(Error::validation(format!(
            "shift has length {}, expected {d}",
            shift.len()
        )));
    }
    if !(spread > 0.0 && spread.is_finite()) || !rotation_angle.is_finite() {
        return Err(Error::validation("spread must be positive and rotation finite"));
    }
    let means = blob_means(n_classes, d, spread);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let n = n_per_class * n_classes;
        let mut x = Array2::zeros((n, d));
        let mut y = Vec::with_capacity(n);
        for c in 0..n_classes {
            for k in 0..n_per_class {
                let i = c * n_per_class + k;
                for j in 0..d {
                    let z: f64 = StandardNormal.sample(rng);
                    x[[i, j]] = means[[c, j]] + spread * z;
                }
                y.push(c);
            }
        }
        (x, y)
    };
    let (xs, ys) = draw(&mut rng);
    let (mut xt, yt) = draw(&mut rng);
    let (s, c) = rotation_angle.sin_cos();
    for mut row in xt.rows_mut() {
        let (a, b) = (row[0], row[1]);
        row[0] = c * a - s * b;
        row[1] = s * a + c * b;
        for j in 0..d {
            row[j] += shift[j];
        }
    }
    Ok((
        Dataset::labeled(xs, ys, n_classes)?,
        Dataset::labeled(xt, yt, n_classes)?,
    ))
}
