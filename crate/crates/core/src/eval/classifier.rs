//! Downstream classifiers trained on adapted points.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, StandardizationParams};
use crate::error::{Error, Result};
use crate::gmm::argmax;

pub const LOGREG_STEPS: usize = 500;
pub const LOGREG_STEP_SIZE: f64 = 0.1;
pub const LOGREG_L2: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierSpec {
    Knn { k: usize },
    Logreg,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec::Knn { k: 1 }
    }
}

impl fmt::Display for ClassifierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierSpec::Knn { k } => write!(f, "knn({k})"),
            ClassifierSpec::Logreg => f.write_str("logreg"),
        }
    }
}

/// Accepts `logreg`, `knn`, `knn(k)` and `knn:k`.
impl FromStr for ClassifierSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "logreg" {
            return Ok(ClassifierSpec::Logreg);
        }
        if s == "knn" {
            return Ok(ClassifierSpec::default());
        }
        let inner = s
            .strip_prefix("knn(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("knn:"));
        match inner.and_then(|k| k.parse::<usize>().ok()) {
            Some(k) if k >= 1 => Ok(ClassifierSpec::Knn { k }),
            _ => Err(Error::validation(format!(
                "unknown classifier '{s}'; expected knn(k) or logreg"
            ))),
        }
    }
}

/// A trained classifier. Classes absent from the training labels are never
/// predicted.
#[derive(Debug, Clone)]
pub enum Classifier {
    Knn {
        k: usize,
        x: Array2<f64>,
        y: Vec<usize>,
        n_classes: usize,
    },
    Logreg {
        params: StandardizationParams,
        /// (d + 1) × C, bias in the last row.
        weights: Array2<f64>,
        present: Vec<bool>,
    },
}

impl Classifier {
    pub fn train(data: &Dataset, spec: ClassifierSpec) -> Result<Classifier> {
        let y = data.require_labels("classifier training")?;
        let n = data.n_samples();
        match spec {
            ClassifierSpec::Knn { k } => {
                if k == 0 || k > n {
                    return Err(Error::validation(format!(
                        "k must be in 1..={n}, got {k}"
                    )));
                }
                Ok(Classifier::Knn {
                    k,
                    x: data.features().clone(),
                    y: y.to_vec(),
                    n_classes: data.n_classes(),
                })
            }
            ClassifierSpec::Logreg => train_logreg(data),
        }
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        match self {
            Classifier::Knn {
                k,
                x: train,
                y,
                n_classes,
            } => {
                check_dim(train.ncols(), x.ncols())?;
                let mut out = Array1::<usize>::zeros(x.nrows());
                Zip::from(&mut out).and(x.rows()).par_for_each(|o, q| {
                    let mut d: Vec<(f64, usize)> = train
                        .rows()
                        .into_iter()
                        .enumerate()
                        .map(|(i, r)| {
                            let s = r.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                            (s, i)
                        })
                        .collect();
                    if *k < d.len() {
                        d.select_nth_unstable_by(*k - 1, |a, b| {
                            a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
                        });
                    }
                    let mut votes = vec![0usize; *n_classes];
                    for &(_, i) in &d[..*k] {
                        votes[y[i]] += 1;
                    }
                    *o = argmax(votes.iter().map(|&v| v as f64));
                });
                Ok(out.to_vec())
            }
            Classifier::Logreg {
                params,
                weights,
                present,
            } => {
                let z = params.apply(x)?;
                let scores = z.dot(&weights.slice(ndarray::s![..-1, ..])) + weights.row(weights.nrows() - 1);
                Ok(scores
                    .rows()
                    .into_iter()
                    .map(|r| {
                        argmax(r.iter().zip(present).map(|(&s, &p)| {
                            if p {
                                s
                            } else {
                                f64::NEG_INFINITY
                            }
                        }))
                    })
                    .collect())
            }
        }
    }
}

fn check_dim(want: usize, got: usize) -> Result<()> {
    if want != got {
        return Err(Error::validation(format!(
            "classifier was trained on d={want} but got d={got}"
        )));
    }
    Ok(())
}

/// Multinomial logistic regression by full-batch gradient descent from zero
/// weights on standardized features; L2 penalty on the weights, not the bias.
fn train_logreg(data: &Dataset) -> Result<Classifier> {
    let params = StandardizationParams::fit(data.features().view());
    let z = params.apply(data.features().view())?;
    let (n, d) = z.dim();
    let c = data.n_classes();
    let onehot = data.one_hot()?;
    let mut present = vec![false; c];
    for &y in data.require_labels("classifier training")? {
        present[y] = true;
    }
    let mut w = Array2::<f64>::zeros((d, c));
    let mut b = Array1::<f64>::zeros(c);
    for _ in 0..LOGREG_STEPS {
        let mut p = z.dot(&w) + &b;
        for mut row in p.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|s| (s - max).exp());
            let s = row.sum();
            row /= s;
        }
        let err = (p - &onehot) / n as f64;
        let gw = z.t().dot(&err) + &(&w * LOGREG_L2);
        let gb = err.sum_axis(Axis(0));
        w.scaled_add(-LOGREG_STEP_SIZE, &gw);
        b.scaled_add(-LOGREG_STEP_SIZE, &gb);
    }
    let mut weights = Array2::zeros((d + 1, c));
    weights.slice_mut(ndarray::s![..d, ..]).assign(&w);
    weights.row_mut(d).assign(&b);
    Ok(Classifier::Logreg {
        params,
        weights,
        present,
    })
}

/// Fraction of positions where `pred` equals `truth`.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::validation("accuracy of an empty prediction"));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn two_blobs(n: usize, gap: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((2 * n, 2), |(i, j)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            if j == 0 && i >= n {
                z + gap
            } else {
                z
            }
        });
        let y = (0..2 * n).map(|i| usize::from(i >= n)).collect();
        Dataset::labeled(x, y, 2).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert!(accuracy(&[0], &[0, 1]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn one_nn_memorizes_training_set() {
        let ds = two_blobs(100, 1.0, 1);
        let clf = Classifier::train(&ds, ClassifierSpec::Knn { k: 1 }).unwrap();
        let pred = clf.predict(ds.features().view()).unwrap();
        assert_eq!(accuracy(&pred, ds.labels().unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn knn_ties_go_to_lowest_index() {
        let ds = Dataset::labeled(array![[-1.0], [1.0]], vec![1, 0], 2).unwrap();
        let one = Classifier::train(&ds, ClassifierSpec::Knn { k: 1 }).unwrap();
        assert_eq!(one.predict(array![[0.0]].view()).unwrap(), vec![1]);
        let two = Classifier::train(&ds, ClassifierSpec::Knn { k: 2 }).unwrap();
        assert_eq!(two.predict(array![[0.9]].view()).unwrap(), vec![0]);
        assert!(Classifier::train(&ds, ClassifierSpec::Knn { k: 3 }).is_err());
    }

    #[test]
    fn logreg_separates_distant_blobs() {
        let ds = two_blobs(200, 8.0, 2);
        let clf = Classifier::train(&ds, ClassifierSpec::Logreg).unwrap();
        let pred = clf.predict(ds.features().view()).unwrap();
        assert!(accuracy(&pred, ds.labels().unwrap()).unwrap() >= 0.99);
    }

    #[test]
    fn absent_classes_are_never_predicted() {
        let ds = Dataset::labeled(array![[0.0], [1.0], [2.0]], vec![0, 2, 2], 3).unwrap();
        for spec in [ClassifierSpec::Logreg, ClassifierSpec::Knn { k: 3 }] {
            let clf = Classifier::train(&ds, spec).unwrap();
            let pred = clf.predict(array![[-5.0], [0.5], [10.0]].view()).unwrap();
            assert!(pred.iter().all(|&y| y != 1), "{spec}");
        }
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("knn(5)".parse::<ClassifierSpec>().unwrap(), ClassifierSpec::Knn { k: 5 });
        assert_eq!("knn:2".parse::<ClassifierSpec>().unwrap(), ClassifierSpec::Knn { k: 2 });
        assert_eq!("knn".parse::<ClassifierSpec>().unwrap(), ClassifierSpec::Knn { k: 1 });
        assert_eq!("logreg".parse::<ClassifierSpec>().unwrap(), ClassifierSpec::Logreg);
        assert!("svm".parse::<ClassifierSpec>().is_err());
        assert!("knn(0)".parse::<ClassifierSpec>().is_err());
        assert_eq!(ClassifierSpec::Knn { k: 3 }.to_string(), "knn(3)");
    }
}
