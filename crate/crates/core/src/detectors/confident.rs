//! Confident learning: the confident joint and prune-by-noise-rate.

use serde::{Deserialize, Serialize};

use super::DetectionReport;
use crate::error::{Error, Result};
use crate::models::ProbMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfidentConfig {
    /// Folds for the out-of-fold probabilities.
    pub folds: usize,
}

impl Default for ConfidentConfig {
    fn default() -> Self {
        ConfidentConfig { folds: 5 }
    }
}

/// `counts[observed][latent]` with per-class thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidentJoint {
    pub counts: Vec<Vec<usize>>,
    pub thresholds: Vec<f64>,
}

impl ConfidentJoint {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn off_diagonal(&self) -> usize {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, c)| c).sum::<usize>())
            .sum()
    }
}

/// `t_j` is the mean predicted probability of class `j` over samples labeled
/// `j`. A sample is counted at the most probable class among those meeting
/// their threshold, or not at all.
pub fn compute_confident_joint(probs: &ProbMatrix, labels: &[usize]) -> Result<ConfidentJoint> {
    let m = probs.num_classes();
    if probs.num_samples() != labels.len() {
        return Err(Error::arg("probabilities and labels differ in length"));
    }
    let p = probs.as_array();
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for (i, &y) in labels.iter().enumerate() {
        if y >= m {
            return Err(Error::arg(format!("label {y} outside [0, {m})")));
        }
        sums[y] += p[[i, y]];
        counts[y] += 1;
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Estimation(format!("class {class} has no samples")));
    }
    let thresholds: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();

    let mut joint = vec![vec![0usize; m]; m];
    for (i, &y) in labels.iter().enumerate() {
        let row = p.row(i);
        let mut best: Option<usize> = None;
        for j in 0..m {
            if row[j] >= thresholds[j] && best.is_none_or(|b| row[j] > row[b]) {
                best = Some(j);
            }
        }
        if let Some(j) = best {
            joint[y][j] += 1;
        }
    }
    Ok(ConfidentJoint {
        counts: joint,
        thresholds,
    })
}

/// Flag as many samples as the confident joint has off-diagonal mass,
/// choosing those with the lowest self-confidence.
pub fn detect_confident_learning(probs: &ProbMatrix, labels: &[usize]) -> Result<DetectionReport> {
    let joint = compute_confident_joint(probs, labels)?;
    let n_flag = joint.off_diagonal();
    let scores: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| 1.0 - probs.as_array()[[i, y]])
        .collect();
    let mut report = DetectionReport::top_k("confident", scores, n_flag);
    report.metadata.threshold = report
        .flagged_indices()
        .iter()
        .map(|&i| report.scores[i])
        .min_by(f64::total_cmp);
    Ok(report)
}
