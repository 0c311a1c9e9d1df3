//! Area under the margin.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Artifacts, DetectionReport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{margin, train_classifier, TrainingDynamics};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AumStrategy {
    /// Flag the `⌈alpha·N⌉` lowest-AUM samples.
    AlphaQuantile,
    /// Flag samples whose AUM falls below the 99th percentile of samples
    /// deliberately relabeled into an extra class.
    ThresholdSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AumConfig {
    pub alpha: f64,
    pub strategy: AumStrategy,
    /// Percentile of threshold-sample AUMs used as the cut.
    pub threshold_percentile: f64,
}

impl Default for AumConfig {
    fn default() -> Self {
        AumConfig {
            alpha: 0.01,
            strategy: AumStrategy::AlphaQuantile,
            threshold_percentile: 99.0,
        }
    }
}

/// Mean margin over epochs for every sample.
fn area_under_margin(dynamics: &TrainingDynamics, labels: &[usize]) -> Result<Vec<f64>> {
    if labels.len() != dynamics.num_samples {
        return Err(Error::arg(format!(
            "dynamics cover {} samples, got {} labels",
            dynamics.num_samples,
            labels.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= dynamics.num_classes) {
        return Err(Error::arg(format!("label {y} outside the model's classes")));
    }
    let epochs = dynamics.epochs.max(1) as f64;
    match &dynamics.logits {
        Some(per_epoch) => {
            let mut sums = vec![0.0; labels.len()];
            for logits in per_epoch {
                for (i, row) in logits.outer_iter().enumerate() {
                    sums[i] += margin(row, labels[i]);
                }
            }
            Ok(sums.into_iter().map(|s| s / epochs).collect())
        }
        None if labels == dynamics.labels.as_slice() => {
            Ok(dynamics.margin_sums.iter().map(|s| s / epochs).collect())
        }
        None => Err(Error::Config(
            "logits were not recorded; AUM is only available for the training labels".into(),
        )),
    }
}

/// Linear-interpolation percentile of unsorted values.
fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (pct / 100.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Score each sample by `-AUM` and flag according to `cfg.strategy`.
///
/// Under [`AumStrategy::ThresholdSamples`] the dynamics must come from a
/// model trained with threshold samples (see [`prepare_threshold_samples`]);
/// `labels` then carry the extra class for those samples. Threshold samples
/// themselves are never flagged and score `-inf`; real samples score
/// `cut - AUM`, so a sample is flagged exactly when its score is positive.
pub fn detect_aum(dynamics: &TrainingDynamics, labels: &[usize], cfg: &super::AumConfig) -> Result<DetectionReport> {
    let aum = area_under_margin(dynamics, labels)?;
    let n = aum.len();
    match cfg.strategy {
        AumStrategy::AlphaQuantile => {
            let k = ((cfg.alpha * n as f64) - 1e-9).ceil().max(0.0) as usize;
            let scores: Vec<f64> = aum.iter().map(|a| -a).collect();
            let mut report = DetectionReport::top_k("aum", scores, k.min(n));
            report.metadata.threshold = report
                .flagged_indices()
                .iter()
                .map(|&i| aum[i])
                .max_by(f64::total_cmp);
            Ok(report)
        }
        AumStrategy::ThresholdSamples => {
            let mask = dynamics.threshold_mask.as_ref().ok_or_else(|| {
                Error::Config("threshold_samples strategy needs dynamics trained with threshold samples".into())
            })?;
            let thr: Vec<f64> = (0..n).filter(|&i| mask[i]).map(|i| aum[i]).collect();
            if thr.is_empty() {
                return Err(Error::Config("no threshold samples in dynamics".into()));
            }
            let cut = percentile(&thr, cfg.threshold_percentile);
            let scores: Vec<f64> = (0..n)
                .map(|i| if mask[i] { f64::NEG_INFINITY } else { cut - aum[i] })
                .collect();
            let flags = scores.iter().map(|&s| s > 0.0).collect();
            let mut report = DetectionReport::new("aum", scores, flags);
            report.metadata.threshold = Some(cut);
            Ok(report)
        }
    }
}

/// Relabel `⌈N/(M+1)⌉` samples (excluding `exclude`) into a new class `M`.
pub fn prepare_threshold_samples(train: &Dataset, exclude: &[bool], seed: u64) -> Result<(Dataset, Vec<bool>)> {
    let n = train.len();
    let m = train.num_classes;
    let count = n.div_ceil(m + 1);
    let mut candidates: Vec<usize> = (0..n).filter(|&i| !exclude.get(i).copied().unwrap_or(false)).collect();
    if candidates.len() < count {
        return Err(Error::Config(format!(
            "need {count} threshold samples but only {} are available",
            candidates.len()
        )));
    }
    candidates.shuffle(&mut rng::stream(seed, "aum/threshold", 0));
    let mut mask = vec![false; n];
    let mut labels = train.labels.clone();
    for &i in &candidates[..count] {
        mask[i] = true;
        labels[i] = m;
    }
    let mut ds = train.clone();
    ds.num_classes = m + 1;
    ds.labels = labels;
    ds.true_labels = None;
    ds.validate()?;
    Ok((ds, mask))
}

/// Two training runs with disjoint threshold sets so that every sample is
/// scored by a run in which it kept its own label.
pub(super) fn detect_aum_two_pass(artifacts: &Artifacts<'_>, cfg: &AumConfig) -> Result<DetectionReport> {
    let train = artifacts.train;
    let n = train.len();
    let mut scores = vec![0.0; n];
    let mut flags = vec![false; n];
    let mut cuts = Vec::new();
    let mut previous = vec![false; n];
    for pass in 0..2u64 {
        let (ds, mask) = prepare_threshold_samples(train, &previous, rng::derive_seed(artifacts.seed, "aum/pass", pass))?;
        let (_, mut dynamics) = train_classifier(&ds, &artifacts.spec)?;
        dynamics.threshold_mask = Some(mask.clone());
        let report = detect_aum(&dynamics, &ds.labels, cfg)?;
        cuts.push(report.metadata.threshold.unwrap_or(f64::NAN));
        for i in 0..n {
            // First pass scores everyone outside its threshold set; second
            // pass fills in the first pass's threshold samples.
            let take = if pass == 0 { !mask[i] } else { previous[i] };
            if take {
                scores[i] = report.scores[i];
                flags[i] = report.flags[i];
            }
        }
        previous = mask;
    }
    let mut report = DetectionReport::new("aum", scores, flags);
    report.metadata.threshold = Some(cuts.iter().sum::<f64>() / cuts.len() as f64);
    Ok(report)
}
