//! Review session state, independent of the HTTP layer.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use labelbench::data::Dataset;
use labelbench::detectors::{detect_cincer, signed_margin, CincerConfig};
use labelbench::harness::DatasetSource;
use labelbench::models::{train_classifier, ClassifierSpec, ProbMatrix, TrainedModel};
use labelbench::noise::{inject, NoiseSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("no active session")]
    NoSession,
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    #[error("a retrain is already running")]
    Busy,
    #[error("{0}")]
    Internal(String),
    #[error(transparent)]
    Core(#[from] labelbench::Error),
    #[error("decision log {path}: {source}")]
    Log {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn default_seed() -> u64 {
    labelbench::rng::DEFAULT_SEED
}

/// What `serve --config` reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub dataset: DatasetSource,
    /// Optional synthetic corruption applied before the session starts.
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub classifier: ClassifierSpec,
    #[serde(default)]
    pub cincer: CincerConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Append-only JSONL file of accepted decisions.
    #[serde(default)]
    pub decisions_log: Option<PathBuf>,
    /// Directory with the UI bundle served at `/`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
}

impl SessionConfig {
    pub fn from_json(text: &str) -> Result<Self, SessionError> {
        serde_json::from_str(text).map_err(|e| SessionError::Invalid(format!("session config: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Keep,
    Relabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub id: u64,
    pub action: Action,
    #[serde(default)]
    pub new_label: Option<usize>,
    /// Milliseconds since the Unix epoch; filled in by the server if absent.
    #[serde(default)]
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub reviewed: usize,
    pub keeps: usize,
    pub relabels: usize,
    /// Share of reviewed items the reviewer relabeled; absent before the
    /// first decision.
    pub precision: Option<f64>,
    /// Undecided queue items as a fraction of the dataset.
    pub estimated_remaining_noise: f64,
    pub queue_length: usize,
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub dataset: String,
    pub num_samples: usize,
    pub num_classes: usize,
    pub num_features: usize,
    pub threshold: f64,
    pub negotiator: labelbench::detectors::Negotiator,
    pub revision: u64,
    pub stats: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub id: u64,
    pub label: usize,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub id: u64,
    pub margin: f64,
    pub observed_label: usize,
    pub predicted_label: usize,
    pub probabilities: Vec<f64>,
    pub features: Vec<f64>,
    pub counterexample: Option<Counterexample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuePage {
    pub revision: u64,
    pub total: usize,
    pub items: Vec<QueueItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionOutcome {
    pub duplicate: bool,
    pub stats: Stats,
}

#[derive(Debug, Clone, PartialEq)]
struct QueueEntry {
    index: usize,
    margin: f64,
    predicted: usize,
    counterexample: Option<usize>,
}

/// Model, probabilities and queue built from one training run.
pub struct Fitted {
    model: TrainedModel,
    probs: ProbMatrix,
    queue: Vec<QueueEntry>,
}

/// Train on `dataset` and queue the flagged samples that have no decision
/// yet, most suspicious (lowest signed margin) first.
pub fn fit(
    dataset: &Dataset,
    spec: &ClassifierSpec,
    cincer: &CincerConfig,
    decided: &dyn Fn(usize) -> bool,
) -> Result<Fitted, SessionError> {
    let (model, _) = train_classifier(dataset, spec)?;
    let probs = model.predict_proba(&dataset.features)?;
    let report = detect_cincer(&model, dataset, cincer)?;
    let preds = probs.argmax();
    let mut queue: Vec<QueueEntry> = report
        .flagged_indices()
        .into_iter()
        .filter(|&i| !decided(i))
        .map(|i| QueueEntry {
            index: i,
            margin: signed_margin(probs.row(i), dataset.labels[i]),
            predicted: preds[i],
            counterexample: report.metadata.counterexamples.get(&i).copied().flatten(),
        })
        .collect();
    queue.sort_by(|a, b| a.margin.total_cmp(&b.margin).then(a.index.cmp(&b.index)));
    Ok(Fitted { model, probs, queue })
}

/// One reviewer working through a CINCER-style suspicion queue.
pub struct Session {
    name: String,
    dataset: Dataset,
    spec: ClassifierSpec,
    cincer: CincerConfig,
    fitted: Fitted,
    by_id: HashMap<u64, usize>,
    decided: BTreeMap<usize, Decision>,
    keeps: usize,
    relabels: usize,
    revision: u64,
    log: Option<PathBuf>,
}

impl Session {
    pub fn start(cfg: &SessionConfig) -> Result<Self, SessionError> {
        let mut dataset = cfg.dataset.load(cfg.seed)?;
        if let Some(noise) = &cfg.noise {
            let injection = inject(&dataset, noise)?;
            if dataset.true_labels.is_none() {
                dataset.true_labels = Some(dataset.labels.clone());
            }
            dataset = dataset.with_labels(injection.labels)?;
        }
        let mut spec = cfg.classifier.clone();
        spec.seed = cfg.seed;
        let mut cincer = cfg.cincer.clone();
        cincer.seed = cfg.seed;
        Self::from_dataset(cfg.dataset.name(), dataset, spec, cincer, cfg.decisions_log.clone())
    }

    pub fn from_dataset(
        name: &str,
        dataset: Dataset,
        spec: ClassifierSpec,
        cincer: CincerConfig,
        log: Option<PathBuf>,
    ) -> Result<Self, SessionError> {
        let fitted = fit(&dataset, &spec, &cincer, &|_| false)?;
        let by_id = dataset.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Ok(Session {
            name: name.to_string(),
            dataset,
            spec,
            cincer,
            fitted,
            by_id,
            decided: BTreeMap::new(),
            keeps: 0,
            relabels: 0,
            revision: 0,
            log,
        })
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn model(&self) -> &TrainedModel {
        &self.fitted.model
    }

    pub fn stats(&self) -> Stats {
        let reviewed = self.keeps + self.relabels;
        Stats {
            reviewed,
            keeps: self.keeps,
            relabels: self.relabels,
            precision: (reviewed > 0).then(|| self.relabels as f64 / reviewed as f64),
            estimated_remaining_noise: self.fitted.queue.len() as f64 / self.dataset.len() as f64,
            queue_length: self.fitted.queue.len(),
            revision: self.revision,
        }
    }

    pub fn info(&self) -> SessionInfo {
        SessionInfo {
            dataset: self.name.clone(),
            num_samples: self.dataset.len(),
            num_classes: self.dataset.num_classes,
            num_features: self.dataset.num_features(),
            threshold: self.cincer.threshold,
            negotiator: self.cincer.negotiator,
            revision: self.revision,
            stats: self.stats(),
        }
    }

    /// Ids in queue order.
    pub fn queue_ids(&self) -> Vec<u64> {
        self.fitted.queue.iter().map(|e| self.dataset.ids[e.index]).collect()
    }

    pub fn queue_page(&self, limit: usize) -> QueuePage {
        let items = self
            .fitted
            .queue
            .iter()
            .take(limit)
            .map(|e| {
                let i = e.index;
                QueueItem {
                    id: self.dataset.ids[i],
                    margin: e.margin,
                    observed_label: self.dataset.labels[i],
                    predicted_label: e.predicted,
                    probabilities: self.fitted.probs.row(i).to_vec(),
                    features: self.dataset.features.row(i).to_vec(),
                    counterexample: e.counterexample.map(|c| Counterexample {
                        id: self.dataset.ids[c],
                        label: self.dataset.labels[c],
                        features: self.dataset.features.row(c).to_vec(),
                    }),
                }
            })
            .collect();
        QueuePage {
            revision: self.revision,
            total: self.fitted.queue.len(),
            items,
        }
    }

    /// Apply a decision. A second decision for an already decided id
    /// changes nothing and reports `duplicate`.
    pub fn submit(&mut self, mut decision: Decision) -> Result<DecisionOutcome, SessionError> {
        let index = *self
            .by_id
            .get(&decision.id)
            .ok_or_else(|| SessionError::NotFound(format!("unknown id {}", decision.id)))?;
        if self.decided.contains_key(&index) {
            return Ok(DecisionOutcome {
                duplicate: true,
                stats: self.stats(),
            });
        }
        let pos = self
            .fitted
            .queue
            .iter()
            .position(|e| e.index == index)
            .ok_or_else(|| SessionError::NotFound(format!("id {} is not in the queue", decision.id)))?;
        let current = self.dataset.labels[index];
        match decision.action {
            Action::Keep => decision.new_label = None,
            Action::Relabel => match decision.new_label {
                None => return Err(SessionError::Invalid("relabel needs new_label".into())),
                Some(l) if l >= self.dataset.num_classes => {
                    return Err(SessionError::Invalid(format!(
                        "new_label {l} outside [0, {})",
                        self.dataset.num_classes
                    )))
                }
                Some(l) if l == current => {
                    return Err(SessionError::Invalid(format!("new_label {l} equals the current label")))
                }
                Some(_) => {}
            },
        }
        if decision.timestamp.is_none() {
            let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
            decision.timestamp = Some(now);
        }
        self.append_log(&decision)?;

        match decision.action {
            Action::Keep => self.keeps += 1,
            Action::Relabel => {
                self.relabels += 1;
                self.dataset.labels[index] = decision.new_label.expect("validated");
            }
        }
        self.fitted.queue.remove(pos);
        self.decided.insert(index, decision);
        self.revision += 1;
        Ok(DecisionOutcome {
            duplicate: false,
            stats: self.stats(),
        })
    }

    fn append_log(&self, decision: &Decision) -> Result<(), SessionError> {
        let Some(path) = &self.log else { return Ok(()) };
        let line = serde_json::to_string(decision).expect("decision serializes");
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| writeln!(f, "{line}"))
            .map_err(|source| SessionError::Log {
                path: path.clone(),
                source,
            })
    }

    /// Inputs for a retrain that can run without holding the session.
    pub fn retrain_inputs(&self) -> (Dataset, ClassifierSpec, CincerConfig) {
        (self.dataset.clone(), self.spec.clone(), self.cincer.clone())
    }

    /// Install a model trained on an earlier snapshot. Samples decided since
    /// the snapshot are dropped from the new queue.
    pub fn install(&mut self, mut fitted: Fitted) {
        fitted.queue.retain(|e| !self.decided.contains_key(&e.index));
        self.fitted = fitted;
        self.revision += 1;
    }

    /// Refit on the current labels and rebuild the queue.
    pub fn retrain(&mut self) -> Result<Stats, SessionError> {
        let fitted = fit(&self.dataset, &self.spec, &self.cincer, &|i| self.decided.contains_key(&i))?;
        self.install(fitted);
        Ok(self.stats())
    }

    pub fn decisions(&self) -> impl Iterator<Item = &Decision> {
        self.decided.values()
    }
}
