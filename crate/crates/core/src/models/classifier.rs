use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ProbMatrix;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Logit tensors larger than this many cells are not kept; AUM then falls
/// back to running margin sums.
pub const DEFAULT_LOGIT_CAP: usize = 25_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Logreg,
    Mlp,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Logreg => "logreg",
            ClassifierKind::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden_units: usize,
    pub l2: f64,
    pub seed: u64,
    pub logit_cap: usize,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec {
            kind: ClassifierKind::Logreg,
            epochs: 50,
            learning_rate: 0.1,
            batch_size: 32,
            hidden_units: 32,
            l2: 1e-4,
            seed: rng::DEFAULT_SEED,
            logit_cap: DEFAULT_LOGIT_CAP,
        }
    }
}

impl ClassifierSpec {
    pub fn logreg() -> Self {
        Self::default()
    }

    pub fn mlp() -> Self {
        ClassifierSpec {
            kind: ClassifierKind::Mlp,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden_units == 0 {
            return Err(Error::arg("epochs, batch_size and hidden_units must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg("learning_rate must be positive"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::arg("l2 must be non-negative"));
        }
        Ok(())
    }
}

/// Per-dimension feature standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics; constant dimensions keep `std = 1`.
    pub fn fit(features: &Array2<f64>) -> Self {
        let n = features.nrows().max(1) as f64;
        let mean: Vec<f64> = features
            .axis_iter(Axis(1))
            .map(|col| col.sum() / n)
            .collect();
        let std = features
            .axis_iter(Axis(1))
            .zip(&mean)
            .map(|(col, &mu)| {
                let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn transform(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut out = features.clone();
        for mut row in out.outer_iter_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
        out
    }

    pub fn transform_row(&self, row: ArrayView1<f64>) -> Array1<f64> {
        row.iter()
            .enumerate()
            .map(|(k, v)| (v - self.mean[k]) / self.std[k])
            .collect()
    }
}

/// Dense affine layer, `out = in·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// A fitted classifier. Logistic regression is a single layer; the MLP has
/// one tanh hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kind: ClassifierKind,
    pub num_classes: usize,
    pub standardizer: Standardizer,
    pub layers: Vec<Layer>,
}

/// Logits recorded after every epoch on the full training set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDynamics {
    pub epochs: usize,
    pub num_samples: usize,
    pub num_classes: usize,
    /// Labels the model was trained on.
    pub labels: Vec<usize>,
    /// `epochs` matrices of N×M logits; `None` when over the logit cap.
    pub logits: Option<Vec<Array2<f64>>>,
    /// Per-sample sum over epochs of the assigned-label margin.
    pub margin_sums: Vec<f64>,
    /// Mean cross-entropy on the training set before any update.
    pub initial_loss: f64,
    /// Mean cross-entropy on the training set after each epoch.
    pub epoch_loss: Vec<f64>,
    /// Samples relabeled into the extra threshold class, when trained for
    /// threshold-sample AUM.
    pub threshold_mask: Option<Vec<bool>>,
}

pub(crate) fn softmax_row(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|v| (v - max).exp());
    let z = exps.sum();
    exps / z
}

pub(crate) fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let p = softmax_row(row.view());
        row.assign(&p);
    }
    out
}

/// Assigned-label logit minus the largest other logit.
pub fn margin(logits: ArrayView1<f64>, label: usize) -> f64 {
    let other = logits
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    logits[label] - other
}

fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = labels.len().max(1) as f64;
    logits
        .outer_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum::<f64>()
        / n
}

struct ForwardCache {
    /// Inputs to each layer (standardized features first).
    inputs: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

impl TrainedModel {
    fn init(kind: ClassifierKind, d: usize, m: usize, hidden: usize, standardizer: Standardizer, seed: u64) -> Self {
        let layers = match kind {
            ClassifierKind::Logreg => vec![Layer {
                weights: Array2::zeros((d, m)),
                bias: Array1::zeros(m),
            }],
            ClassifierKind::Mlp => {
                let mut r = rng::stream(seed, "mlp/init", 0);
                let mut glorot = |fan_in: usize, fan_out: usize| {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Array2::from_shape_simple_fn((fan_in, fan_out), || r.random_range(-limit..limit))
                };
                vec![
                    Layer {
                        weights: glorot(d, hidden),
                        bias: Array1::zeros(hidden),
                    },
                    Layer {
                        weights: glorot(hidden, m),
                        bias: Array1::zeros(m),
                    },
                ]
            }
        };
        TrainedModel {
            kind,
            num_classes: m,
            standardizer,
            layers,
        }
    }

    pub fn num_features(&self) -> usize {
        self.standardizer.mean.len()
    }

    fn forward(&self, x: ArrayView2<f64>) -> ForwardCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = current.dot(&layer.weights) + &layer.bias;
            inputs.push(current);
            if l + 1 < self.layers.len() {
                out.mapv_inplace(f64::tanh);
            }
            current = out;
        }
        ForwardCache {
            inputs,
            logits: current,
        }
    }

    fn check_dims(&self, features: &Array2<f64>) -> Result<()> {
        if features.ncols() != self.num_features() {
            return Err(Error::arg(format!(
                "model expects {} features, got {}",
                self.num_features(),
                features.ncols()
            )));
        }
        Ok(())
    }

    /// Raw (pre-softmax) scores.
    pub fn logits(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_dims(features)?;
        let x = self.standardizer.transform(features);
        Ok(self.forward(x.view()).logits)
    }

    pub fn predict_proba(&self, features: &Array2<f64>) -> Result<ProbMatrix> {
        Ok(ProbMatrix::from_validated(softmax_rows(&self.logits(features)?)))
    }

    /// Input to the final layer for one raw feature row.
    fn last_hidden(&self, row: ArrayView1<f64>) -> Array1<f64> {
        let x = self.standardizer.transform_row(row).insert_axis(Axis(0));
        let cache = self.forward(x.view());
        cache.inputs.last().expect("at least one layer").row(0).to_owned()
    }

    /// Cross-entropy gradient with respect to the final layer's parameters
    /// (weights row-major, then bias).
    pub fn last_layer_gradient(&self, row: ArrayView1<f64>, label: usize) -> Vec<f64> {
        let h = self.last_hidden(row);
        let layer = self.layers.last().expect("at least one layer");
        let logits = h.dot(&layer.weights) + &layer.bias;
        let mut delta = softmax_row(logits.view());
        delta[label] -= 1.0;
        let mut grad = Vec::with_capacity(h.len() * delta.len() + delta.len());
        for &hk in &h {
            grad.extend(delta.iter().map(|d| hk * d));
        }
        grad.extend(delta.iter());
        grad
    }

    /// Mean cross-entropy plus `l2/2·‖W‖²` on raw features, and its
    /// gradient in layer layout.
    pub fn loss_and_gradient(&self, features: &Array2<f64>, labels: &[usize], l2: f64) -> (f64, Vec<Layer>) {
        let x = self.standardizer.transform(features);
        self.loss_and_gradient_std(x.view(), labels, l2)
    }

    fn loss_and_gradient_std(&self, x: ArrayView2<f64>, labels: &[usize], l2: f64) -> (f64, Vec<Layer>) {
        let n = labels.len() as f64;
        let cache = self.forward(x);
        let mut loss = cross_entropy(&cache.logits, labels);
        loss += 0.5 * l2 * self.layers.iter().map(|l| l.weights.iter().map(|w| w * w).sum::<f64>()).sum::<f64>();

        let mut delta = softmax_rows(&cache.logits);
        for (mut row, &y) in delta.outer_iter_mut().zip(labels) {
            row[y] -= 1.0;
        }
        delta /= n;

        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let input = &cache.inputs[l];
            let gw = input.t().dot(&delta) + &(&self.layers[l].weights * l2);
            let gb = delta.sum_axis(Axis(0));
            if l > 0 {
                // input = tanh(pre); d tanh = 1 - tanh².
                let back = delta.dot(&self.layers[l].weights.t());
                delta = back * input.mapv(|a| 1.0 - a * a);
            }
            grads.push(Layer { weights: gw, bias: gb });
        }
        grads.reverse();
        (loss, grads)
    }

    /// All parameters flattened layer by layer (weights then bias).
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        let mut it = params.iter();
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = *it.next().expect("parameter vector too short");
            }
        }
    }

    pub fn flatten(layers: &[Layer]) -> Vec<f64> {
        layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
            .collect()
    }
}

/// Minibatch SGD on L2-regularized cross-entropy.
pub fn train_classifier(train: &Dataset, spec: &ClassifierSpec) -> Result<(TrainedModel, TrainingDynamics)> {
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if train.num_features() == 0 {
        return Err(Error::Training("no features".into()));
    }
    let n = train.len();
    let m = train.num_classes;
    let standardizer = Standardizer::fit(&train.features);
    let x = standardizer.transform(&train.features);
    let mut model = TrainedModel::init(spec.kind, train.num_features(), m, spec.hidden_units, standardizer, spec.seed);

    let keep_logits = spec.epochs.saturating_mul(n).saturating_mul(m) <= spec.logit_cap;
    let mut logits_per_epoch = keep_logits.then(|| Vec::with_capacity(spec.epochs));
    let mut margin_sums = vec![0.0; n];
    let mut epoch_loss = Vec::with_capacity(spec.epochs);
    let initial_loss = cross_entropy(&model.forward(x.view()).logits, &train.labels);

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng::stream(spec.seed, "train/shuffle", epoch as u64));
        for batch in order.chunks(spec.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let (_, grads) = model.loss_and_gradient_std(xb.view(), &yb, spec.l2);
            for (layer, g) in model.layers.iter_mut().zip(&grads) {
                layer.weights.scaled_add(-spec.learning_rate, &g.weights);
                layer.bias.scaled_add(-spec.learning_rate, &g.bias);
            }
        }
        let logits = model.forward(x.view()).logits;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training(format!("non-finite logits after epoch {epoch}")));
        }
        epoch_loss.push(cross_entropy(&logits, &train.labels));
        for (i, row) in logits.outer_iter().enumerate() {
            margin_sums[i] += margin(row, train.labels[i]);
        }
        if let Some(store) = logits_per_epoch.as_mut() {
            store.push(logits);
        }
    }

    let dynamics = TrainingDynamics {
        epochs: spec.epochs,
        num_samples: n,
        num_classes: m,
        labels: train.labels.clone(),
        logits: logits_per_epoch,
        margin_sums,
        initial_loss,
        epoch_loss,
        threshold_mask: None,
    };
    Ok((model, dynamics))
}

pub fn predict_proba(model: &TrainedModel, features: &Array2<f64>) -> Result<ProbMatrix> {
    model.predict_proba(features)
}

/// Stratified fold assignment: within each class, members are shuffled and
/// dealt round-robin across folds.
fn stratified_folds(labels: &[usize], m: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut assignment = vec![0; labels.len()];
    let mut offset = 0;
    for class in 0..m {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng::stream(seed, "cv/folds", class as u64));
        for (pos, &i) in members.iter().enumerate() {
            assignment[i] = (offset + pos) % folds;
        }
        offset += members.len();
    }
    assignment
}

/// Out-of-fold predicted probabilities from stratified K-fold training.
///
/// `folds == N` is leave-one-out and skips the per-class size check.
pub fn cross_val_proba(dataset: &Dataset, spec: &ClassifierSpec, folds: usize, seed: u64) -> Result<ProbMatrix> {
    let n = dataset.len();
    if folds < 2 {
        return Err(Error::arg("cross-validation needs at least 2 folds"));
    }
    if folds > n {
        return Err(Error::Stratification(format!("{folds} folds for {n} samples")));
    }
    if folds != n {
        if let Some((class, &count)) = dataset
            .class_counts()
            .iter()
            .enumerate()
            .find(|(_, &c)| c > 0 && c < folds)
        {
            return Err(Error::Stratification(format!(
                "class {class} has {count} samples, fewer than {folds} folds"
            )));
        }
    }
    let assignment = if folds == n {
        (0..n).collect()
    } else {
        stratified_folds(&dataset.labels, dataset.num_classes, folds, seed)
    };

    let fold_results: Vec<(Vec<usize>, ProbMatrix)> = (0..folds)
        .into_par_iter()
        .map(|fold| {
            let held: Vec<usize> = (0..n).filter(|&i| assignment[i] == fold).collect();
            let kept: Vec<usize> = (0..n).filter(|&i| assignment[i] != fold).collect();
            let fold_spec = spec.clone().with_seed(rng::derive_seed(seed, "cv/train", fold as u64));
            let fold_spec = ClassifierSpec {
                logit_cap: 0,
                ..fold_spec
            };
            let (model, _) = train_classifier(&dataset.subset(&kept), &fold_spec)?;
            let probs = model.predict_proba(&dataset.features.select(Axis(0), &held))?;
            Ok((held, probs))
        })
        .collect::<Result<_>>()?;

    let mut out = Array2::zeros((n, dataset.num_classes));
    for (held, probs) in fold_results {
        for (row, &i) in held.iter().enumerate() {
            out.slice_mut(s![i, ..]).assign(&probs.as_array().row(row));
        }
    }
    Ok(ProbMatrix::from_validated(out))
}

const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format_version: u32,
    kind: ClassifierKind,
    num_classes: usize,
    standardization: Standardizer,
    layers: Vec<LayerDoc>,
}

impl TrainedModel {
    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDoc {
            format_version: MODEL_FORMAT_VERSION,
            kind: self.kind,
            num_classes: self.num_classes,
            standardization: self.standardizer.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", doc.format_version)));
        }
        let layers = doc
            .layers
            .into_iter()
            .map(|l| {
                let weights = Array2::from_shape_vec((l.rows, l.cols), l.weights)
                    .map_err(|e| Error::Format(format!("bad layer shape: {e}")))?;
                if l.bias.len() != l.cols {
                    return Err(Error::Format("bias length differs from layer width".into()));
                }
                Ok(Layer {
                    weights,
                    bias: Array1::from(l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let expected_layers = match doc.kind {
            ClassifierKind::Logreg => 1,
            ClassifierKind::Mlp => 2,
        };
        if layers.len() != expected_layers
            || layers[0].weights.nrows() != doc.standardization.mean.len()
            || layers.last().map(|l| l.weights.ncols()) != Some(doc.num_classes)
            || layers.windows(2).any(|w| w[0].weights.ncols() != w[1].weights.nrows())
        {
            return Err(Error::Format("inconsistent model shapes".into()));
        }
        Ok(TrainedModel {
            kind: doc.kind,
            num_classes: doc.num_classes,
            standardizer: doc.standardization,
            layers,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
