//! Label-error detectors.
//!
//! Every detector maps dataset artifacts to a per-sample suspicion score
//! (higher is more suspicious) and a boolean flag. Detectors are registered
//! by name in a [`DetectorRegistry`] and pull the artifacts they need
//! (training dynamics, out-of-fold probabilities, a fitted model) from a
//! shared, lazily filled [`Artifacts`] cache.

mod aum;
mod cincer;
mod confident;
mod simifeat;

use std::collections::BTreeMap;

use once_cell::sync::OnceCell;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{cross_val_proba, train_classifier, ClassifierSpec, ProbMatrix, TrainedModel, TrainingDynamics};
use crate::rng;

pub use aum::{detect_aum, prepare_threshold_samples, AumConfig, AumStrategy};
pub use cincer::{
    cincer_margin, detect_cincer, select_counterexample, signed_margin, CincerConfig, CounterexampleFinder,
    Negotiator,
};
pub use confident::{compute_confident_joint, detect_confident_learning, ConfidentConfig, ConfidentJoint};
pub use simifeat::{detect_simifeat, SimiFeatConfig, SimiFeatMode};

/// Hyper-parameters for all four detectors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub aum: AumConfig,
    pub confident: ConfidentConfig,
    pub simifeat: SimiFeatConfig,
    pub cincer: CincerConfig,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("aum.alpha", self.aum.alpha)?;
        unit("simifeat.min_similarity", self.simifeat.min_similarity)?;
        unit("simifeat.feature_fraction", self.simifeat.feature_fraction)?;
        unit("cincer.threshold", self.cincer.threshold)?;
        if self.simifeat.k == 0 {
            return Err(Error::Config("simifeat.k must be at least 1".into()));
        }
        if self.simifeat.rounds == 0 {
            return Err(Error::Config("simifeat.rounds must be at least 1".into()));
        }
        if self.confident.folds < 2 {
            return Err(Error::Config("confident.folds must be at least 2".into()));
        }
        if !(self.cincer.fisher_damping > 0.0) {
            return Err(Error::Config("cincer.fisher_damping must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportMetadata {
    /// The score or statistic cut used to flag, when there is a single one.
    pub threshold: Option<f64>,
    pub num_flagged: usize,
    /// Samples that could not be scored (e.g. no admissible neighbors).
    pub unscored: usize,
    /// Flagged sample index → counterexample index, for detectors that
    /// explain their suspicion.
    pub counterexamples: BTreeMap<usize, Option<usize>>,
}

/// Output of one detector run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub method: String,
    pub scores: Vec<f64>,
    pub flags: Vec<bool>,
    pub metadata: ReportMetadata,
}

impl DetectionReport {
    pub(crate) fn new(method: &str, scores: Vec<f64>, flags: Vec<bool>) -> Self {
        let num_flagged = flags.iter().filter(|&&f| f).count();
        DetectionReport {
            method: method.to_string(),
            scores,
            flags,
            metadata: ReportMetadata {
                num_flagged,
                ..Default::default()
            },
        }
    }

    /// Report flagging the `k` highest scores.
    pub(crate) fn top_k(method: &str, scores: Vec<f64>, k: usize) -> Self {
        let flags = top_k_flags(&scores, k);
        Self::new(method, scores, flags)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn num_flagged(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn flagged_indices(&self) -> Vec<usize> {
        (0..self.flags.len()).filter(|&i| self.flags[i]).collect()
    }
}

/// Sample indices ordered by descending score, ties toward lower index.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Flags for the `k` highest scores.
pub fn top_k_flags(scores: &[f64], k: usize) -> Vec<bool> {
    let mut flags = vec![false; scores.len()];
    for &i in rank_by_score(scores).iter().take(k) {
        flags[i] = true;
    }
    flags
}

/// Model outputs shared between detectors and computed at most once.
pub struct Artifacts<'a> {
    pub train: &'a Dataset,
    pub spec: ClassifierSpec,
    pub folds: usize,
    pub seed: u64,
    trained: OnceCell<(TrainedModel, TrainingDynamics)>,
    cv_probs: OnceCell<ProbMatrix>,
}

impl<'a> Artifacts<'a> {
    pub fn new(train: &'a Dataset, spec: ClassifierSpec, folds: usize, seed: u64) -> Self {
        Artifacts {
            train,
            spec,
            folds,
            seed,
            trained: OnceCell::new(),
            cv_probs: OnceCell::new(),
        }
    }

    /// Classifier fitted on the full (noisy) training set, with dynamics.
    pub fn trained(&self) -> Result<&(TrainedModel, TrainingDynamics)> {
        self.trained.get_or_try_init(|| train_classifier(self.train, &self.spec))
    }

    pub fn model(&self) -> Result<&TrainedModel> {
        Ok(&self.trained()?.0)
    }

    pub fn dynamics(&self) -> Result<&TrainingDynamics> {
        Ok(&self.trained()?.1)
    }

    /// Out-of-fold probabilities.
    pub fn cv_probs(&self) -> Result<&ProbMatrix> {
        self.cv_probs.get_or_try_init(|| {
            cross_val_proba(
                self.train,
                &self.spec,
                self.folds,
                rng::derive_seed(self.seed, "artifacts/cv", 0),
            )
        })
    }
}

/// A label-error detection method.
pub trait Detector: Send + Sync {
    fn name(&self) -> &'static str;

    fn detect(&self, artifacts: &Artifacts<'_>, cfg: &DetectorConfig) -> Result<DetectionReport>;
}

struct Aum;

impl Detector for Aum {
    fn name(&self) -> &'static str {
        "aum"
    }

    fn detect(&self, artifacts: &Artifacts<'_>, cfg: &DetectorConfig) -> Result<DetectionReport> {
        match cfg.aum.strategy {
            AumStrategy::AlphaQuantile => {
                detect_aum(artifacts.dynamics()?, &artifacts.train.labels, &cfg.aum)
            }
            AumStrategy::ThresholdSamples => aum::detect_aum_two_pass(artifacts, &cfg.aum),
        }
    }
}

struct Confident;

impl Detector for Confident {
    fn name(&self) -> &'static str {
        "confident"
    }

    fn detect(&self, artifacts: &Artifacts<'_>, _cfg: &DetectorConfig) -> Result<DetectionReport> {
        detect_confident_learning(artifacts.cv_probs()?, &artifacts.train.labels)
    }
}

struct SimiFeat;

impl Detector for SimiFeat {
    fn name(&self) -> &'static str {
        "simifeat"
    }

    fn detect(&self, artifacts: &Artifacts<'_>, cfg: &DetectorConfig) -> Result<DetectionReport> {
        detect_simifeat(
            &artifacts.train.features,
            &artifacts.train.labels,
            artifacts.train.num_classes,
            &cfg.simifeat,
        )
    }
}

struct Cincer;

impl Detector for Cincer {
    fn name(&self) -> &'static str {
        "cincer"
    }

    fn detect(&self, artifacts: &Artifacts<'_>, cfg: &DetectorConfig) -> Result<DetectionReport> {
        detect_cincer(artifacts.model()?, artifacts.train, &cfg.cincer)
    }
}

/// Detectors by name.
pub struct DetectorRegistry {
    detectors: BTreeMap<&'static str, Box<dyn Detector>>,
}

impl DetectorRegistry {
    pub fn empty() -> Self {
        DetectorRegistry {
            detectors: BTreeMap::new(),
        }
    }

    /// `aum`, `cincer`, `confident` and `simifeat`.
    pub fn standard() -> Self {
        let mut reg = Self::empty();
        reg.register(Box::new(Aum));
        reg.register(Box::new(Confident));
        reg.register(Box::new(SimiFeat));
        reg.register(Box::new(Cincer));
        reg
    }

    pub fn register(&mut self, detector: Box<dyn Detector>) {
        self.detectors.insert(detector.name(), detector);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Detector> {
        self.detectors
            .get(name)
            .map(|d| d.as_ref())
            .ok_or_else(|| Error::Unknown {
                kind: "detector",
                name: name.to_string(),
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.detectors.keys().copied()
    }
}

impl Default for DetectorRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_breaks_ties_by_index() {
        assert_eq!(top_k_flags(&[0.5, 0.9, 0.5, 0.1], 2), vec![true, true, false, false]);
        assert_eq!(top_k_flags(&[0.5, 0.9], 0), vec![false, false]);
        assert_eq!(top_k_flags(&[0.5, 0.9], 5), vec![true, true]);
    }

    #[test]
    fn registry_has_four_detectors() {
        let reg = DetectorRegistry::standard();
        assert_eq!(reg.names().collect::<Vec<_>>(), vec!["aum", "cincer", "confident", "simifeat"]);
        assert!(matches!(reg.get("non"), Err(Error::Unknown { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::default().validate().is_ok());
        let mut cfg = DetectorConfig::default();
        cfg.simifeat.k = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = DetectorConfig::default();
        cfg.cincer.threshold = 1.5;
        assert!(cfg.validate().is_err());
    }
}
