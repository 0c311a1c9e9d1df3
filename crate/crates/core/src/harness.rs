//! Config-driven experiment grid: inject, detect, clean, retrain, evaluate.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    load_dataset_csv, make_blobs, simulate_annotators, train_test_split, write_data_card, CsvSchema, DataCard,
    Dataset, MethodColumns,
};
use crate::detectors::{Artifacts, DetectionReport, DetectorConfig, DetectorRegistry};
use crate::error::{Error, Result};
use crate::metrics::{classification_metrics, detection_metrics, MetricReport};
use crate::models::{confusion_matrix, train_classifier, ClassifierSpec};
use crate::noise::{NoiseContext, NoiseKind, NoiseRegistry, DEFAULT_PROPENSITY_STD};
use crate::rng;

/// Environment variable holding the worker-thread count for [`run_grid`].
pub const WORKERS_ENV: &str = "LABELBENCH_WORKERS";

/// Name of the no-cleaning baseline in results.
pub const BASELINE: &str = "non";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotatorSpec {
    pub count: usize,
    pub error_rate: f64,
    pub missing_rate: f64,
}

impl Default for AnnotatorSpec {
    fn default() -> Self {
        AnnotatorSpec {
            count: 3,
            error_rate: 0.2,
            missing_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        name: String,
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
    Blobs {
        name: String,
        n: usize,
        d: usize,
        classes: usize,
        separation: f64,
        #[serde(default)]
        annotators: Option<AnnotatorSpec>,
    },
}

impl DatasetSource {
    pub fn name(&self) -> &str {
        match self {
            DatasetSource::Csv { name, .. } | DatasetSource::Blobs { name, .. } => name,
        }
    }

    /// Synthetic sources are generated from `seed`.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSource::Csv { path, schema, .. } => load_dataset_csv(path, schema),
            DatasetSource::Blobs {
                n,
                d,
                classes,
                separation,
                annotators,
                ..
            } => {
                let ds = make_blobs(*n, *d, *classes, *separation, seed)?;
                match annotators {
                    Some(a) => simulate_annotators(
                        &ds,
                        a.count,
                        a.error_rate,
                        a.missing_rate,
                        rng::derive_seed(seed, "harness/annotators", 0),
                    ),
                    None => Ok(ds),
                }
            }
        }
    }
}

fn default_rates() -> Vec<f64> {
    vec![0.0, 0.02, 0.1, 0.4]
}

fn default_detectors() -> Vec<String> {
    DetectorRegistry::standard().names().map(String::from).collect()
}

fn default_seeds() -> Vec<u64> {
    vec![rng::DEFAULT_SEED]
}

fn default_folds() -> usize {
    5
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_propensity_std() -> f64 {
    DEFAULT_PROPENSITY_STD
}

/// Experiment grid. Every list must be non-empty; the no-cleaning baseline is
/// always run and need not be listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetSource>,
    pub noise: Vec<NoiseKind>,
    #[serde(default = "default_rates")]
    pub rates: Vec<f64>,
    #[serde(default = "default_detectors")]
    pub detectors: Vec<String>,
    #[serde(default = "default_classifiers")]
    pub classifiers: Vec<ClassifierSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Folds for out-of-fold probabilities.
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_propensity_std")]
    pub propensity_std: f64,
    #[serde(default)]
    pub detector_config: DetectorConfig,
    /// Data cards go to `<output_dir>/cards`; nothing is written when absent.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; falls back to [`WORKERS_ENV`], then all cores.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_classifiers() -> Vec<ClassifierSpec> {
    vec![ClassifierSpec::logreg()]
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        let non_empty = |what: &str, len: usize| {
            if len == 0 {
                Err(Error::Config(format!("`{what}` must not be empty")))
            } else {
                Ok(())
            }
        };
        non_empty("datasets", self.datasets.len())?;
        non_empty("noise", self.noise.len())?;
        non_empty("rates", self.rates.len())?;
        non_empty("classifiers", self.classifiers.len())?;
        non_empty("seeds", self.seeds.len())?;
        if let Some(r) = self.rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!("rate {r} outside [0, 1]")));
        }
        let registry = DetectorRegistry::standard();
        for d in &self.detectors {
            if d != BASELINE {
                registry.get(d)?;
            }
        }
        for c in &self.classifiers {
            c.validate()?;
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.detector_config.validate()
    }

    fn detectors(&self) -> Vec<&str> {
        self.detectors.iter().map(String::as_str).filter(|d| *d != BASELINE).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Error,
}

/// One grid cell: a detector (or the baseline) on one
/// (dataset, noise, rate, seed, classifier) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub noise: NoiseKind,
    pub rate: f64,
    pub seed: u64,
    pub classifier: String,
    pub detector: String,
    pub status: CellStatus,
    pub error: Option<String>,
    pub num_train: usize,
    pub num_corrupted: usize,
    pub num_flagged: usize,
    pub removed_fraction: f64,
    pub detection: Option<MetricReport>,
    pub downstream: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub rows: Vec<ResultRow>,
    pub cards: Vec<PathBuf>,
}

impl ExperimentResults {
    pub fn errors(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.status == CellStatus::Error)
    }
}

/// Remove flagged training rows, retrain with the same spec and evaluate on
/// `test`. Classes losing at least 95% of their rows add a warning.
pub fn clean_and_retrain(
    train: &Dataset,
    report: &DetectionReport,
    spec: &ClassifierSpec,
    test: &Dataset,
) -> Result<MetricReport> {
    if report.flags.len() != train.len() {
        return Err(Error::arg(format!(
            "{} flags for {} training rows",
            report.flags.len(),
            train.len()
        )));
    }
    let keep: Vec<usize> = (0..train.len()).filter(|&i| !report.flags[i]).collect();
    if keep.is_empty() {
        return Err(Error::Evaluation("every training sample was flagged".into()));
    }
    let mut warnings = Vec::new();
    let before = train.class_counts();
    let cleaned = train.subset(&keep);
    let after = cleaned.class_counts();
    for (c, (&b, &a)) in before.iter().zip(&after).enumerate() {
        if b > 0 && (b - a) as f64 >= 0.95 * b as f64 {
            warnings.push(format!("class {c}: {} of {b} samples removed", b - a));
        }
    }
    let (model, _) = train_classifier(&cleaned, spec)?;
    let mut metrics = classification_metrics(&model.predict_proba(&test.features)?, &test.labels)?;
    metrics.warnings.splice(0..0, warnings);
    Ok(metrics)
}

/// Confusion counts of a model fitted and evaluated on `data`, the source
/// of class-dependent noise.
pub fn model_confusion(data: &Dataset, spec: &ClassifierSpec) -> Result<Vec<Vec<usize>>> {
    let (model, _) = train_classifier(data, spec)?;
    confusion_matrix(&model.predict_proba(&data.features)?, &data.labels)
}

struct RunKey<'a> {
    source: &'a DatasetSource,
    noise: NoiseKind,
    rate: f64,
    seed: u64,
    classifier: &'a ClassifierSpec,
}

fn classifier_name(spec: &ClassifierSpec) -> String {
    spec.kind.as_str().to_string()
}

fn file_safe(text: &str) -> String {
    text.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

impl RunKey<'_> {
    fn row(&self, detector: &str) -> ResultRow {
        ResultRow {
            dataset: self.source.name().to_string(),
            noise: self.noise,
            rate: self.rate,
            seed: self.seed,
            classifier: classifier_name(self.classifier),
            detector: detector.to_string(),
            status: CellStatus::Ok,
            error: None,
            num_train: 0,
            num_corrupted: 0,
            num_flagged: 0,
            removed_fraction: 0.0,
            detection: None,
            downstream: None,
        }
    }

    fn card_name(&self) -> String {
        file_safe(&format!(
            "{}__{}__{}__{}__{}.csv",
            self.source.name(),
            self.noise,
            self.rate,
            self.seed,
            classifier_name(self.classifier)
        ))
    }
}

/// Noisy training split plus everything derived from it once per run.
struct Prepared {
    split: crate::data::SplitPair,
    clean_labels: Vec<usize>,
    mask: Vec<bool>,
}

fn prepare(cfg: &ExperimentConfig, key: &RunKey<'_>) -> Result<Prepared> {
    let data = key.source.load(key.seed)?;
    let split = train_test_split(&data, cfg.test_fraction, rng::derive_seed(key.seed, "harness/split", 0))?;
    let spec = key.classifier.clone().with_seed(key.seed);
    let mut ctx = NoiseContext {
        confusion: None,
        propensity_std: Some(cfg.propensity_std),
    };
    if key.noise == NoiseKind::ClassDependent {
        ctx.confusion = Some(model_confusion(&split.train, &spec)?);
    }
    let noise_seed = rng::derive_seed(key.seed, &format!("harness/noise/{}", key.noise), key.rate.to_bits());
    let injection = NoiseRegistry::standard()
        .get(key.noise.as_str())?
        .inject(&split.train, key.rate, noise_seed, &ctx)?;
    let clean_labels = split.train.labels.clone();
    let mut split = split;
    split.train = split.train.with_labels(injection.labels)?;
    Ok(Prepared {
        split,
        clean_labels,
        mask: injection.record.mask,
    })
}

fn run_one(cfg: &ExperimentConfig, key: &RunKey<'_>) -> (Vec<ResultRow>, Option<DataCard>) {
    let detectors = cfg.detectors();
    let fail_all = |e: Error| {
        let rows = std::iter::once(BASELINE)
            .chain(detectors.iter().copied())
            .map(|d| ResultRow {
                status: CellStatus::Error,
                error: Some(e.to_string()),
                ..key.row(d)
            })
            .collect();
        (rows, None)
    };
    let prepared = match prepare(cfg, key) {
        Ok(p) => p,
        Err(e) => return fail_all(e),
    };
    let Prepared {
        split,
        clean_labels,
        mask,
    } = prepared;
    let train = &split.train;
    let spec = key.classifier.clone().with_seed(key.seed);
    let artifacts = Artifacts::new(train, spec.clone(), cfg.folds, rng::derive_seed(key.seed, "harness/artifacts", 0));
    let mut det_cfg = cfg.detector_config.clone();
    det_cfg.simifeat.seed = rng::derive_seed(key.seed, "harness/simifeat", 0);
    det_cfg.cincer.seed = rng::derive_seed(key.seed, "harness/cincer", 0);

    let base = |detector: &str| ResultRow {
        num_train: train.len(),
        num_corrupted: mask.iter().filter(|&&m| m).count(),
        ..key.row(detector)
    };

    let mut rows = Vec::with_capacity(detectors.len() + 1);
    // The baseline model is the one the detectors share.
    let baseline = artifacts
        .model()
        .and_then(|m| m.predict_proba(&split.test.features))
        .and_then(|p| classification_metrics(&p, &split.test.labels));
    rows.push(match baseline {
        Ok(metrics) => ResultRow {
            downstream: Some(metrics),
            ..base(BASELINE)
        },
        Err(e) => ResultRow {
            status: CellStatus::Error,
            error: Some(e.to_string()),
            ..base(BASELINE)
        },
    });

    let registry = DetectorRegistry::standard();
    let mut methods = Vec::new();
    for name in detectors {
        let outcome = registry.get(name).and_then(|d| d.detect(&artifacts, &det_cfg)).and_then(|report| {
            let detection = detection_metrics(&report.flags, &report.scores, &mask)?;
            let flagged = report.num_flagged();
            let downstream = clean_and_retrain(train, &report, &spec, &split.test);
            Ok((report, detection, flagged, downstream))
        });
        rows.push(match outcome {
            Ok((report, detection, flagged, downstream)) => {
                let mut row = ResultRow {
                    num_flagged: flagged,
                    removed_fraction: flagged as f64 / train.len() as f64,
                    detection: Some(detection),
                    ..base(name)
                };
                match downstream {
                    Ok(d) => row.downstream = Some(d),
                    Err(e) => {
                        row.status = CellStatus::Error;
                        row.error = Some(e.to_string());
                    }
                }
                methods.push(MethodColumns {
                    method: name.to_string(),
                    flags: report.flags,
                    scores: report.scores,
                });
                row
            }
            Err(e) => ResultRow {
                status: CellStatus::Error,
                error: Some(e.to_string()),
                ..base(name)
            },
        });
    }

    let card = DataCard {
        dataset: key.source.name().to_string(),
        noise_type: key.noise.to_string(),
        noise_rate: key.rate,
        seed: key.seed,
        ids: train.ids.clone(),
        original_labels: clean_labels,
        corrupted_labels: train.labels.clone(),
        methods,
    };
    (rows, Some(card))
}

fn worker_count(cfg: &ExperimentConfig) -> Result<Option<usize>> {
    if let Some(w) = cfg.workers {
        return Ok(Some(w));
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

/// Run every (dataset, noise, rate, seed, classifier) combination with the
/// baseline and each detector. Runs execute in parallel; rows come back in
/// config order. Per-cell failures are recorded, not raised.
pub fn run_grid(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    cfg.validate()?;
    let mut keys = Vec::new();
    for source in &cfg.datasets {
        for &noise in &cfg.noise {
            for &rate in &cfg.rates {
                for &seed in &cfg.seeds {
                    for classifier in &cfg.classifiers {
                        keys.push(RunKey {
                            source,
                            noise,
                            rate,
                            seed,
                            classifier,
                        });
                    }
                }
            }
        }
    }
    let card_dir = cfg.output_dir.as_ref().map(|d| d.join("cards"));
    if let Some(dir) = &card_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let work = || -> Result<Vec<(Vec<ResultRow>, Option<PathBuf>)>> {
        keys.par_iter()
            .map(|key| {
                let (rows, card) = run_one(cfg, key);
                let path = match (card, &card_dir) {
                    (Some(card), Some(dir)) => {
                        let path = dir.join(key.card_name());
                        write_data_card(&card, &path)?;
                        Some(path)
                    }
                    _ => None,
                };
                Ok((rows, path))
            })
            .collect()
    };
    let outputs = match worker_count(cfg)? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work)?,
        None => work()?,
    };

    let mut results = ExperimentResults::default();
    for (rows, card) in outputs {
        results.rows.extend(rows);
        results.cards.extend(card);
    }
    Ok(results)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Column names of the flat results CSV.
pub fn result_columns() -> Vec<String> {
    let mut cols: Vec<String> = [
        "dataset",
        "noise",
        "rate",
        "seed",
        "classifier",
        "detector",
        "status",
        "error",
        "num_train",
        "num_corrupted",
        "num_flagged",
        "removed_fraction",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for prefix in ["det", "down"] {
        cols.extend(MetricReport::FIELDS.iter().map(|f| format!("{prefix}_{f}")));
    }
    cols.push("warnings".into());
    cols
}

pub fn write_results<W: Write>(results: &ExperimentResults, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(result_columns())?;
    for row in &results.rows {
        let mut rec = vec![
            row.dataset.clone(),
            row.noise.to_string(),
            row.rate.to_string(),
            row.seed.to_string(),
            row.classifier.clone(),
            row.detector.clone(),
            match row.status {
                CellStatus::Ok => "ok".into(),
                CellStatus::Error => "error".into(),
            },
            row.error.clone().unwrap_or_default(),
            row.num_train.to_string(),
            row.num_corrupted.to_string(),
            row.num_flagged.to_string(),
            row.removed_fraction.to_string(),
        ];
        let mut warnings = Vec::new();
        for report in [&row.detection, &row.downstream] {
            match report {
                Some(r) => {
                    rec.extend(r.values().into_iter().map(fmt_opt));
                    warnings.extend(r.warnings.iter().cloned());
                }
                None => rec.extend(std::iter::repeat_n(String::new(), MetricReport::FIELDS.len())),
            }
        }
        rec.push(warnings.join(";"));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io("results", e))?;
    Ok(())
}

/// Flat results CSV, one row per cell.
pub fn export_results(results: &ExperimentResults, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_results(results, std::io::BufWriter::new(file))
}

/// One aggregate row per (dataset, noise, detector).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub noise: NoiseKind,
    pub detector: String,
    /// Detection weighted F1 over non-zero rates.
    pub det_weighted_f1: Option<f64>,
    /// Detection error-class F1 over non-zero rates.
    pub det_error_f1: Option<f64>,
    /// Downstream weighted F1 over all rates.
    pub down_weighted_f1: Option<f64>,
    pub removed_fraction: Option<f64>,
    pub cells: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Averages over rates, seeds and classifiers. Rate 0 has no corrupted
/// samples, so it is left out of the detection averages only.
pub fn aggregate(results: &ExperimentResults) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, NoiseKind, String)> = Vec::new();
    for r in &results.rows {
        let k = (r.dataset.clone(), r.noise, r.detector.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(dataset, noise, detector)| {
            let cells: Vec<&ResultRow> = results
                .rows
                .iter()
                .filter(|r| r.dataset == dataset && r.noise == noise && r.detector == detector)
                .filter(|r| r.status == CellStatus::Ok)
                .collect();
            let nonzero = || cells.iter().filter(|r| r.rate > 0.0);
            AggregateRow {
                det_weighted_f1: mean(nonzero().filter_map(|r| r.detection.as_ref()).map(|d| d.weighted_f1)),
                det_error_f1: mean(nonzero().filter_map(|r| r.detection.as_ref()?.error_f1)),
                down_weighted_f1: mean(cells.iter().filter_map(|r| r.downstream.as_ref()).map(|d| d.weighted_f1)),
                removed_fraction: mean(cells.iter().map(|r| r.removed_fraction)),
                cells: cells.len(),
                dataset,
                noise,
                detector,
            }
        })
        .collect()
}

pub fn write_aggregate<W: Write>(results: &ExperimentResults, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "dataset",
        "noise",
        "detector",
        "det_weighted_f1_nonzero_rates",
        "det_error_f1_nonzero_rates",
        "down_weighted_f1_all_rates",
        "removed_fraction",
        "cells",
    ])?;
    for a in aggregate(results) {
        w.write_record([
            a.dataset,
            a.noise.to_string(),
            a.detector,
            fmt_opt(a.det_weighted_f1),
            fmt_opt(a.det_error_f1),
            fmt_opt(a.down_weighted_f1),
            fmt_opt(a.removed_fraction),
            a.cells.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("aggregate", e))?;
    Ok(())
}

/// Aggregate CSV in the shape of a methods-by-dataset summary table.
pub fn export_aggregate(results: &ExperimentResults, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_aggregate(results, std::io::BufWriter::new(file))
}
