//! Built-in classifiers, out-of-fold probabilities, loss corrections and
//! transition-matrix estimators.

mod classifier;
mod loss;
mod transition;

use ndarray::Array2;

use crate::error::{Error, Result};

pub use classifier::{
    cross_val_proba, margin, predict_proba, train_classifier, ClassifierKind, ClassifierSpec, Layer,
    Standardizer, TrainedModel, TrainingDynamics, DEFAULT_LOGIT_CAP,
};
pub use loss::{corrected_loss, corrected_loss_gradient, cross_entropy_loss, LossCorrection};
pub use transition::{estimate_t_anchor, estimate_t_clusterability};

/// N×M predicted class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix(Array2<f64>);

impl ProbMatrix {
    /// Rows must be in `[0, 1]` and sum to 1 within 1e-9.
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        if probs.ncols() < 2 {
            return Err(Error::arg("probability matrix needs at least 2 columns"));
        }
        for (i, row) in probs.outer_iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::arg(format!("row {i} has an entry outside [0, 1]")));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::arg(format!("row {i} sums to {sum}")));
            }
        }
        Ok(ProbMatrix(probs))
    }

    pub(crate) fn from_validated(probs: Array2<f64>) -> Self {
        debug_assert!(probs
            .outer_iter()
            .all(|r| (r.sum() - 1.0).abs() <= 1e-9));
        ProbMatrix(probs)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn num_samples(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.0.row(i)
    }

    /// Row-wise argmax, ties toward the lower class.
    pub fn argmax(&self) -> Vec<usize> {
        self.0.outer_iter().map(|row| argmax(row.iter().copied())).collect()
    }
}

pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (j, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = j;
            best_v = v;
        }
    }
    best
}

/// `counts[i][j]` = samples labeled `i` whose argmax prediction is `j`.
pub fn confusion_matrix(probs: &ProbMatrix, labels: &[usize]) -> Result<Vec<Vec<usize>>> {
    if probs.num_samples() != labels.len() {
        return Err(Error::arg("probabilities and labels differ in length"));
    }
    let m = probs.num_classes();
    let mut counts = vec![vec![0; m]; m];
    for (pred, &y) in probs.argmax().into_iter().zip(labels) {
        if y >= m {
            return Err(Error::arg(format!("label {y} outside [0, {m})")));
        }
        counts[y][pred] += 1;
    }
    Ok(counts)
}
