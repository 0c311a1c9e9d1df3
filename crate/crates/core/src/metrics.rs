//! Predictive and detection metrics.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::models::ProbMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Metric bundle shared by downstream evaluation and detection scoring.
///
/// `roc_auc` and `pr_auc` are `None` when no class has a defined curve. The
/// `error_*` fields are only set by [`detection_metrics`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub error_rate: f64,
    pub error_precision: Option<f64>,
    pub error_recall: Option<f64>,
    pub error_f1: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub const FIELDS: [&'static str; 10] = [
        "weighted_f1",
        "accuracy",
        "weighted_precision",
        "weighted_recall",
        "roc_auc",
        "pr_auc",
        "error_rate",
        "error_precision",
        "error_recall",
        "error_f1",
    ];

    /// Scalar fields in [`Self::FIELDS`] order.
    pub fn values(&self) -> [Option<f64>; 10] {
        [
            Some(self.weighted_f1),
            Some(self.accuracy),
            Some(self.weighted_precision),
            Some(self.weighted_recall),
            self.roc_auc,
            self.pr_auc,
            Some(self.error_rate),
            self.error_precision,
            self.error_recall,
            self.error_f1,
        ]
    }

    /// Flat record: scalar fields, then `f1_class{c}` / `support_class{c}`
    /// per class and a `;`-joined `warnings` string.
    pub fn flat_record(&self) -> Map<String, Value> {
        let mut map = Map::new();
        for (name, v) in Self::FIELDS.iter().zip(self.values()) {
            map.insert((*name).to_string(), v.map_or(Value::Null, Value::from));
        }
        for c in &self.per_class {
            map.insert(format!("f1_class{}", c.class), Value::from(c.f1));
            map.insert(format!("support_class{}", c.class), Value::from(c.support));
        }
        map.insert("warnings".into(), Value::from(self.warnings.join(";")));
        map
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn per_class(preds: &[usize], labels: &[usize], m: usize) -> Vec<ClassMetrics> {
    let mut tp = vec![0usize; m];
    let mut predicted = vec![0usize; m];
    let mut support = vec![0usize; m];
    for (&p, &y) in preds.iter().zip(labels) {
        predicted[p] += 1;
        support[y] += 1;
        if p == y {
            tp[y] += 1;
        }
    }
    (0..m)
        .map(|c| {
            let precision = ratio(tp[c], predicted[c]);
            let recall = ratio(tp[c], support[c]);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                class: c,
                support: support[c],
                precision,
                recall,
                f1,
            }
        })
        .collect()
}

/// Area under the ROC curve by the rank statistic, ties counting one half.
/// `None` unless both classes are present.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of average ranks of positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].total_cmp(&scores[order[i]]).is_eq() {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Step-wise average precision, `Σ (R_k − R_{k−1}) P_k` over distinct score
/// thresholds in descending order. `None` without positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].total_cmp(&scores[order[i]]).is_eq() {
            j += 1;
        }
        tp += order[i..=j].iter().filter(|&&k| positive[k]).count();
        seen += j - i + 1;
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
        i = j + 1;
    }
    Some(ap)
}

fn weighted(per_class: &[ClassMetrics], f: impl Fn(&ClassMetrics) -> f64) -> f64 {
    let total: usize = per_class.iter().map(|c| c.support).sum();
    per_class.iter().map(|c| c.support as f64 * f(c)).sum::<f64>() / total as f64
}

fn base_report(preds: &[usize], labels: &[usize], m: usize) -> MetricReport {
    let per_class = per_class(preds, labels, m);
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    let accuracy = ratio(correct, labels.len());
    MetricReport {
        weighted_f1: weighted(&per_class, |c| c.f1),
        accuracy,
        weighted_precision: weighted(&per_class, |c| c.precision),
        weighted_recall: weighted(&per_class, |c| c.recall),
        roc_auc: None,
        pr_auc: None,
        error_rate: 1.0 - accuracy,
        error_precision: None,
        error_recall: None,
        error_f1: None,
        per_class,
        warnings: Vec::new(),
    }
}

/// Downstream metrics from class probabilities.
///
/// Multi-class curve metrics are support-weighted one-vs-rest averages;
/// classes absent from `labels` are skipped with a warning.
pub fn classification_metrics(probs: &ProbMatrix, labels: &[usize]) -> Result<MetricReport> {
    let n = labels.len();
    let m = probs.num_classes();
    if probs.num_samples() != n {
        return Err(Error::Evaluation(format!(
            "{} probability rows for {n} labels",
            probs.num_samples()
        )));
    }
    if n == 0 {
        return Err(Error::Evaluation("no samples to evaluate".into()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= m) {
        return Err(Error::Evaluation(format!("label {y} outside [0, {m})")));
    }
    let mut report = base_report(&probs.argmax(), labels, m);
    let p = probs.as_array();

    if m == 2 {
        let scores: Vec<f64> = p.column(1).to_vec();
        let positive: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
        report.roc_auc = roc_auc(&scores, &positive);
        report.pr_auc = average_precision(&scores, &positive);
        if report.roc_auc.is_none() {
            report.warnings.push("single class in labels; curve metrics undefined".into());
        }
        return Ok(report);
    }

    let (mut roc_sum, mut ap_sum, mut weight) = (0.0, 0.0, 0usize);
    for c in 0..m {
        let support = report.per_class[c].support;
        let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        let scores: Vec<f64> = p.column(c).to_vec();
        match (roc_auc(&scores, &positive), average_precision(&scores, &positive)) {
            (Some(roc), Some(ap)) => {
                roc_sum += support as f64 * roc;
                ap_sum += support as f64 * ap;
                weight += support;
            }
            _ => report
                .warnings
                .push(format!("class {c} curve undefined (support {support}); excluded")),
        }
    }
    if weight > 0 {
        report.roc_auc = Some(roc_sum / weight as f64);
        report.pr_auc = Some(ap_sum / weight as f64);
    }
    Ok(report)
}

/// Detection quality with `{clean, corrupted}` as a binary task: flags are the
/// predictions, scores the ranking and corrupted the positive (error) class.
pub fn detection_metrics(flags: &[bool], scores: &[f64], corruption_mask: &[bool]) -> Result<MetricReport> {
    let n = corruption_mask.len();
    if flags.len() != n || scores.len() != n {
        return Err(Error::Evaluation(format!(
            "lengths differ: {} flags, {} scores, {n} mask entries",
            flags.len(),
            scores.len()
        )));
    }
    if n == 0 {
        return Err(Error::Evaluation("no samples to evaluate".into()));
    }
    let preds: Vec<usize> = flags.iter().map(|&f| usize::from(f)).collect();
    let labels: Vec<usize> = corruption_mask.iter().map(|&c| usize::from(c)).collect();
    let mut report = base_report(&preds, &labels, 2);
    let err = &report.per_class[1];
    report.error_precision = Some(err.precision);
    report.error_recall = Some(err.recall);
    report.error_f1 = Some(err.f1);
    report.roc_auc = roc_auc(scores, corruption_mask);
    report.pr_auc = average_precision(scores, corruption_mask);
    if report.roc_auc.is_none() {
        let what = if report.per_class[1].support == 0 { "no" } else { "only" };
        report.warnings.push(format!("{what} corrupted samples; roc_auc undefined"));
    }
    Ok(report)
}
