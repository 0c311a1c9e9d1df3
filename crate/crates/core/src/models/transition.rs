//! Transition-matrix estimation from model outputs or feature geometry.

use ndarray::Array2;

use super::ProbMatrix;
use crate::error::{Error, Result};
use crate::neighbors::{majority_label, CosineIndex};
use crate::noise::TransitionMatrix;

/// Anchor-point estimate: the sample with the highest predicted probability
/// for class `i` supplies row `i`.
pub fn estimate_t_anchor(probs: &ProbMatrix, labels: &[usize]) -> Result<TransitionMatrix> {
    let m = probs.num_classes();
    if probs.num_samples() != labels.len() {
        return Err(Error::arg("probabilities and labels differ in length"));
    }
    let mut counts = vec![0usize; m];
    for &y in labels {
        if y >= m {
            return Err(Error::arg(format!("label {y} outside [0, {m})")));
        }
        counts[y] += 1;
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Estimation(format!("class {class} has no samples")));
    }
    let p = probs.as_array();
    let rows = (0..m)
        .map(|i| {
            let anchor = super::argmax(p.column(i).iter().copied());
            p.row(anchor).to_vec()
        })
        .collect();
    TransitionMatrix::from_unnormalized(rows)
}

/// Pseudo-true labels from the k-NN majority vote, then
/// `T̂[i][j] = #{ŷ* = i, y = j} / #{ŷ* = i}`. Empty rows become identity rows.
pub fn estimate_t_clusterability(
    features: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
    k: usize,
) -> Result<TransitionMatrix> {
    let n = labels.len();
    if features.nrows() != n {
        return Err(Error::arg("features and labels differ in length"));
    }
    if k == 0 || n <= k {
        return Err(Error::arg(format!("need N > k >= 1, got N = {n}, k = {k}")));
    }
    let index = CosineIndex::new(features);
    let pseudo: Vec<usize> = index
        .all_neighbors(k)
        .into_iter()
        .map(|nn| majority_label(nn.iter().map(|&(j, _)| labels[j]), num_classes).expect("k >= 1"))
        .collect();
    let mut counts = vec![vec![0.0; num_classes]; num_classes];
    for (&t, &y) in pseudo.iter().zip(labels) {
        counts[t][y] += 1.0;
    }
    TransitionMatrix::from_unnormalized(counts)
}
