//! Margin inspector with counter-example negotiators.

use std::collections::HashMap;
use std::sync::Mutex;

use ndarray::ArrayView1;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::DetectionReport;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{argmax, ProbMatrix, TrainedModel};
use crate::neighbors::CosineIndex;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Negotiator {
    Random,
    Nearest,
    Fisher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CincerConfig {
    pub threshold: f64,
    pub negotiator: Negotiator,
    pub fisher_damping: f64,
    pub seed: u64,
}

impl Default for CincerConfig {
    fn default() -> Self {
        CincerConfig {
            threshold: 0.25,
            negotiator: Negotiator::Random,
            fisher_damping: 0.1,
            seed: rng::DEFAULT_SEED,
        }
    }
}

/// Top-1 minus top-2 probability.
pub fn cincer_margin(probs: ArrayView1<f64>) -> f64 {
    let mut top = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &p in probs {
        if p > top {
            second = top;
            top = p;
        } else if p > second {
            second = p;
        }
    }
    top - second
}

/// Probability of the observed label minus the largest other probability.
/// Equals [`cincer_margin`] when the model predicts the observed label and is
/// negative otherwise.
pub fn signed_margin(probs: ArrayView1<f64>, label: usize) -> f64 {
    let other = probs
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label)
        .map(|(_, p)| *p)
        .fold(f64::NEG_INFINITY, f64::max);
    probs[label] - other
}

/// Picks counter-examples from a training set for a fixed model.
///
/// The candidate pool for a suspicious sample is every other training sample
/// whose observed label equals the model's prediction for it.
pub struct CounterexampleFinder<'a> {
    model: &'a TrainedModel,
    train: &'a Dataset,
    predictions: Vec<usize>,
    cfg: CincerConfig,
    index: Option<CosineIndex>,
    gradients: Mutex<HashMap<usize, Vec<f64>>>,
}

impl<'a> CounterexampleFinder<'a> {
    pub fn new(model: &'a TrainedModel, train: &'a Dataset, cfg: &CincerConfig) -> Result<Self> {
        let probs = model.predict_proba(&train.features)?;
        Ok(Self::with_probs(model, train, &probs, cfg))
    }

    pub fn with_probs(model: &'a TrainedModel, train: &'a Dataset, probs: &ProbMatrix, cfg: &CincerConfig) -> Self {
        CounterexampleFinder {
            model,
            train,
            predictions: probs.argmax(),
            cfg: cfg.clone(),
            index: (cfg.negotiator == Negotiator::Nearest).then(|| CosineIndex::new(&train.features)),
            gradients: Mutex::new(HashMap::new()),
        }
    }

    pub fn pool(&self, suspicious: usize) -> Vec<usize> {
        let target = self.predictions[suspicious];
        (0..self.train.len())
            .filter(|&j| j != suspicious && self.train.labels[j] == target)
            .collect()
    }

    fn gradient(&self, i: usize) -> Vec<f64> {
        if let Some(g) = self.gradients.lock().expect("gradient cache").get(&i) {
            return g.clone();
        }
        let g = self.model.last_layer_gradient(self.train.features.row(i), self.train.labels[i]);
        self.gradients.lock().expect("gradient cache").insert(i, g.clone());
        g
    }

    /// Influence score `gᵀ F⁻¹ g'` of each pool member, with the damped
    /// diagonal empirical Fisher computed over the pool.
    pub fn fisher_scores(&self, suspicious: usize, pool: &[usize]) -> Vec<f64> {
        let g = self.gradient(suspicious);
        let grads: Vec<Vec<f64>> = pool.iter().map(|&j| self.gradient(j)).collect();
        let mut fisher = vec![0.0; g.len()];
        for gj in &grads {
            for (f, v) in fisher.iter_mut().zip(gj) {
                *f += v * v;
            }
        }
        let count = grads.len().max(1) as f64;
        fisher.iter_mut().for_each(|f| *f = *f / count + self.cfg.fisher_damping);
        grads
            .iter()
            .map(|gj| g.iter().zip(gj).zip(&fisher).map(|((a, b), f)| a * b / f).sum())
            .collect()
    }

    /// Counter-example for one suspicious sample, `None` when the pool is
    /// empty.
    pub fn select(&self, suspicious: usize, negotiator: Negotiator) -> Option<usize> {
        let pool = self.pool(suspicious);
        if pool.is_empty() {
            return None;
        }
        let best_of = |scores: Vec<f64>| {
            let pos = argmax(scores);
            pool[pos]
        };
        Some(match negotiator {
            Negotiator::Random => {
                let mut r = rng::stream(self.cfg.seed, "cincer/random", suspicious as u64);
                pool[r.random_range(0..pool.len())]
            }
            Negotiator::Nearest => {
                let scores = match &self.index {
                    Some(index) => pool.iter().map(|&j| index.similarity(suspicious, j)).collect(),
                    None => {
                        let index = CosineIndex::new(&self.train.features);
                        pool.iter().map(|&j| index.similarity(suspicious, j)).collect()
                    }
                };
                best_of(scores)
            }
            Negotiator::Fisher => best_of(self.fisher_scores(suspicious, &pool)),
        })
    }
}

pub fn select_counterexample(
    model: &TrainedModel,
    train: &Dataset,
    suspicious: usize,
    negotiator: Negotiator,
    cfg: &CincerConfig,
) -> Result<Option<usize>> {
    if suspicious >= train.len() {
        return Err(Error::arg(format!("suspicious index {suspicious} out of range")));
    }
    let cfg = CincerConfig {
        negotiator,
        ..cfg.clone()
    };
    Ok(CounterexampleFinder::new(model, train, &cfg)?.select(suspicious, negotiator))
}

/// Flag samples whose margin is under the threshold or whose prediction
/// disagrees with the observed label.
///
/// Scores are `threshold - signed_margin`, so every flagged sample has a
/// positive score and every unflagged one a non-positive score.
pub fn detect_cincer(model: &TrainedModel, train: &Dataset, cfg: &CincerConfig) -> Result<DetectionReport> {
    let probs = model.predict_proba(&train.features)?;
    let preds = probs.argmax();
    let mut scores = Vec::with_capacity(train.len());
    let mut flags = Vec::with_capacity(train.len());
    for (i, &y) in train.labels.iter().enumerate() {
        let row = probs.row(i);
        let sm = signed_margin(row, y);
        scores.push(cfg.threshold - sm);
        flags.push(cincer_margin(row) < cfg.threshold || preds[i] != y);
    }
    let mut report = DetectionReport::new("cincer", scores, flags);
    report.metadata.threshold = Some(cfg.threshold);

    let finder = CounterexampleFinder::with_probs(model, train, &probs, cfg);
    report.metadata.counterexamples = report
        .flagged_indices()
        .into_iter()
        .map(|i| (i, finder.select(i, cfg.negotiator)))
        .collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{train_classifier, ClassifierSpec};
    use ndarray::{array, Array2};

    #[test]
    fn margins() {
        assert!((cincer_margin(array![0.6, 0.4].view()) - 0.2).abs() < 1e-15);
        assert!((cincer_margin(array![0.9, 0.05, 0.05].view()) - 0.85).abs() < 1e-15);
        assert_eq!(cincer_margin(array![0.25, 0.25, 0.25, 0.25].view()), 0.0);
        assert!((signed_margin(array![0.6, 0.4].view(), 1) + 0.2).abs() < 1e-15);
    }

    fn toy() -> (Dataset, TrainedModel) {
        let x = array![[-2.0, 0.0], [-1.8, 0.3], [-2.2, -0.1], [2.0, 0.1], [1.9, -0.2], [2.1, 0.0], [-1.9, 0.1]];
        let ds = Dataset::new((0..7).collect(), x, vec![0, 0, 0, 1, 1, 1, 1], None, None, 2).unwrap();
        let (model, _) = train_classifier(&ds, &ClassifierSpec { epochs: 100, ..ClassifierSpec::default() }).unwrap();
        (ds, model)
    }

    #[test]
    fn single_member_pool() {
        // Only sample 0 carries label 0 apart from the suspicious sample 1.
        let x = array![[-2.0], [-2.1], [2.0], [2.2]];
        let ds = Dataset::new((0..4).collect(), x, vec![0, 0, 1, 1], None, None, 2).unwrap();
        let (model, _) = train_classifier(&ds, &ClassifierSpec { epochs: 100, ..ClassifierSpec::default() }).unwrap();
        for negotiator in [Negotiator::Random, Negotiator::Nearest, Negotiator::Fisher] {
            let c = select_counterexample(&model, &ds, 1, negotiator, &CincerConfig::default()).unwrap();
            assert_eq!(c, Some(0), "{negotiator:?}");
        }
    }

    #[test]
    fn nearest_picks_duplicate() {
        let (mut ds, _) = toy();
        ds.features.row_mut(3).assign(&array![-1.8, 0.3]);
        ds.labels[3] = 0;
        let (model, _) = train_classifier(&ds, &ClassifierSpec::default()).unwrap();
        let c = select_counterexample(&model, &ds, 1, Negotiator::Nearest, &CincerConfig::default()).unwrap();
        assert_eq!(c, Some(3));
    }

    #[test]
    fn fisher_matches_enumeration() {
        let (ds, model) = toy();
        let cfg = CincerConfig {
            negotiator: Negotiator::Fisher,
            ..CincerConfig::default()
        };
        let suspicious = 6;
        let finder = CounterexampleFinder::new(&model, &ds, &cfg).unwrap();
        let pool = finder.pool(suspicious);
        assert_eq!(pool, vec![0, 1, 2]);

        // Independent gradient: explicit softmax and outer product.
        let layer = &model.layers[0];
        let grad = |i: usize| -> Vec<f64> {
            let x: Vec<f64> = (0..2)
                .map(|k| (ds.features[[i, k]] - model.standardizer.mean[k]) / model.standardizer.std[k])
                .collect();
            let z: Vec<f64> = (0..2)
                .map(|c| layer.bias[c] + x[0] * layer.weights[[0, c]] + x[1] * layer.weights[[1, c]])
                .collect();
            let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
            let s: f64 = e.iter().sum();
            let delta: Vec<f64> = (0..2).map(|c| e[c] / s - f64::from(u8::from(c == ds.labels[i]))).collect();
            let mut g = Vec::new();
            for xk in &x {
                for d in &delta {
                    g.push(xk * d);
                }
            }
            g.extend(&delta);
            g
        };
        let g = grad(suspicious);
        let pool_grads: Vec<Vec<f64>> = pool.iter().map(|&j| grad(j)).collect();
        let fisher: Vec<f64> = (0..g.len())
            .map(|k| pool_grads.iter().map(|gj| gj[k] * gj[k]).sum::<f64>() / pool.len() as f64 + 0.1)
            .collect();
        let expected: Vec<f64> = pool_grads
            .iter()
            .map(|gj| (0..g.len()).map(|k| g[k] * gj[k] / fisher[k]).sum())
            .collect();
        let got = finder.fisher_scores(suspicious, &pool);
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
        let best = pool[argmax(expected.iter().copied())];
        assert_eq!(finder.select(suspicious, Negotiator::Fisher), Some(best));
    }

    #[test]
    fn flags_low_margin_or_disagreement() {
        let (ds, model) = toy();
        let report = detect_cincer(&model, &ds, &CincerConfig::default()).unwrap();
        assert!(report.flags[6]);
        for i in 0..ds.len() {
            assert_eq!(report.flags[i], report.scores[i] > 0.0);
        }
        assert!(report.metadata.counterexamples[&6].is_some());
    }

    #[test]
    fn confident_agreeing_model_flags_nothing() {
        let x = Array2::from_shape_fn((40, 1), |(i, _)| if i < 20 { -5.0 - i as f64 * 0.01 } else { 5.0 + i as f64 * 0.01 });
        let labels = (0..40).map(|i| usize::from(i >= 20)).collect();
        let ds = Dataset::new((0..40).collect(), x, labels, None, None, 2).unwrap();
        let (model, _) = train_classifier(&ds, &ClassifierSpec { epochs: 200, ..ClassifierSpec::default() }).unwrap();
        assert_eq!(detect_cincer(&model, &ds, &CincerConfig::default()).unwrap().num_flagged(), 0);
    }
}
