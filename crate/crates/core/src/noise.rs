//! Noise transition matrices and label corruption.
//!
//! Single-label noise (uniform, asymmetric, class-dependent,
//! instance-dependent) corrupts exactly `⌊p·N⌋` samples. Multi-annotator
//! noise (dissenting label, dissenting worker, crowd majority) replaces final
//! labels with annotator labels and corrupts at most `⌊p·N⌋` eligible samples.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MISSING_LABEL};
use crate::error::{Error, Result};
use crate::rng;

const ROW_SUM_TOL: f64 = 1e-9;

/// Default standard deviation of the per-sample flip propensity.
pub const DEFAULT_PROPENSITY_STD: f64 = 0.1;

/// Row-stochastic matrix with `rows[i][j] = P(observed j | true i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        if m < 2 {
            return Err(Error::arg("transition matrix needs at least 2 classes"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::arg(format!("row {i} has {} entries, expected {m}", row.len())));
            }
            if row.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::arg(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::arg(format!("row {i} sums to {sum}")));
            }
        }
        Ok(TransitionMatrix { rows })
    }

    /// Normalizes each row to sum to one. Rows with no mass become identity
    /// rows.
    pub fn from_unnormalized(mut rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in rows.iter_mut().enumerate() {
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|v| *v /= sum);
            } else {
                row.iter_mut().enumerate().for_each(|(j, v)| *v = f64::from(u8::from(i == j)));
            }
        }
        Self::new(rows)
    }

    pub fn identity(m: usize) -> Result<Self> {
        Self::new(
            (0..m)
                .map(|i| (0..m).map(|j| f64::from(u8::from(i == j))).collect())
                .collect(),
        )
    }

    pub fn num_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    pub fn max_abs_diff(&self, other: &TransitionMatrix) -> f64 {
        self.rows
            .iter()
            .flatten()
            .zip(other.rows.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_rate(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::arg(format!("noise rate {p} outside [0, 1]")))
    }
}

/// Diagonal `1 - p`, every off-diagonal entry `p / (m - 1)`.
pub fn build_uniform_t(m: usize, p: f64) -> Result<TransitionMatrix> {
    check_rate(p)?;
    if m < 2 {
        return Err(Error::arg("uniform noise needs m >= 2"));
    }
    let off = p / (m - 1) as f64;
    TransitionMatrix::new(
        (0..m)
            .map(|i| (0..m).map(|j| if i == j { 1.0 - p } else { off }).collect())
            .collect(),
    )
}

/// Pair flip: class `i` goes to `(i + 1) mod m` with probability `p`.
pub fn build_asymmetric_t(m: usize, p: f64) -> Result<TransitionMatrix> {
    check_rate(p)?;
    if m < 2 {
        return Err(Error::arg("asymmetric noise needs m >= 2"));
    }
    let mut rows = vec![vec![0.0; m]; m];
    for (i, row) in rows.iter_mut().enumerate() {
        row[i] += 1.0 - p;
        row[(i + 1) % m] += p;
    }
    TransitionMatrix::new(rows)
}

/// `T = (1 - p)·I + p·E` where row `i` of `E` is the off-diagonal part of
/// confusion row `i`, renormalized. A row with no off-diagonal mass spreads
/// uniformly over the other classes.
pub fn build_class_dependent_t(confusion: &[Vec<usize>], p: f64) -> Result<TransitionMatrix> {
    check_rate(p)?;
    let m = confusion.len();
    if m < 2 || confusion.iter().any(|r| r.len() != m) {
        return Err(Error::arg("confusion matrix must be square with m >= 2"));
    }
    let mut rows = vec![vec![0.0; m]; m];
    for (i, counts) in confusion.iter().enumerate() {
        if counts.iter().sum::<usize>() == 0 {
            return Err(Error::arg(format!("confusion row {i} is empty")));
        }
        let off: usize = counts.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, c)| c).sum();
        for j in 0..m {
            let e = if j == i {
                0.0
            } else if off == 0 {
                1.0 / (m - 1) as f64
            } else {
                counts[j] as f64 / off as f64
            };
            rows[i][j] = if j == i { 1.0 - p } else { p * e };
        }
    }
    TransitionMatrix::new(rows)
}

/// Per-sample flip propensities and flip distributions for
/// instance-dependent noise.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipDistribution {
    pub propensity: Vec<f64>,
    /// Row `i` is the full label distribution of sample `i`, with
    /// `1 - propensity[i]` on its own label.
    pub distributions: Vec<Vec<f64>>,
    /// d×M projection used to score the other classes.
    pub projection: Array2<f64>,
}

impl FlipDistribution {
    pub fn num_classes(&self) -> usize {
        self.projection.ncols()
    }
}

/// Instance-dependent flip distributions.
///
/// Propensities `q_i ~ N(p, propensity_std²)` truncated to `[0, 1]`
/// (identically zero when `p == 0`). Class scores are `x_i·W` with
/// `W_jk ~ N(0, 1)`; the own class is masked out and the remaining mass
/// `q_i` is spread by softmax over the other classes.
pub fn instance_flip_distribution(
    features: &Array2<f64>,
    labels: &[usize],
    m: usize,
    p: f64,
    propensity_std: f64,
    seed: u64,
) -> Result<FlipDistribution> {
    check_rate(p)?;
    if !(propensity_std > 0.0) {
        return Err(Error::arg("propensity_std must be positive"));
    }
    if m < 2 {
        return Err(Error::arg("instance-dependent noise needs m >= 2"));
    }
    if features.nrows() != labels.len() {
        return Err(Error::arg("features and labels differ in length"));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= m) {
        return Err(Error::arg(format!("label {y} outside [0, {m})")));
    }
    let n = labels.len();
    let d = features.ncols();

    let normal = Normal::new(p, propensity_std).map_err(|e| Error::arg(e.to_string()))?;
    let mut qrng = rng::stream(seed, "instance/propensity", 0);
    let propensity: Vec<f64> = (0..n)
        .map(|_| {
            if p == 0.0 {
                return 0.0;
            }
            loop {
                let q: f64 = normal.sample(&mut qrng);
                if (0.0..=1.0).contains(&q) {
                    break q;
                }
            }
        })
        .collect();

    let mut wrng = rng::stream(seed, "instance/projection", 0);
    let projection =
        Array2::from_shape_simple_fn((d, m), || StandardNormal.sample(&mut wrng));

    let scores = features.dot(&projection);
    let distributions = (0..n)
        .map(|i| {
            let y = labels[i];
            let row = scores.row(i);
            let max = row
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != y)
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row
                .iter()
                .enumerate()
                .map(|(j, v)| if j == y { 0.0 } else { (v - max).exp() })
                .collect();
            let z: f64 = exps.iter().sum();
            let q = propensity[i];
            exps.iter()
                .enumerate()
                .map(|(j, e)| if j == y { 1.0 - q } else { q * e / z })
                .collect()
        })
        .collect();

    Ok(FlipDistribution {
        propensity,
        distributions,
        projection,
    })
}

/// Ground truth for one corruption run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorruptionRecord {
    /// `⌊p·N⌋`, the number of corruptions asked for.
    pub requested: usize,
    pub corrupted_indices: Vec<usize>,
    pub original_labels: Vec<usize>,
    pub mask: Vec<bool>,
}

impl CorruptionRecord {
    fn from_labels(original: &[usize], corrupted: &[usize], requested: usize) -> Self {
        let mask: Vec<bool> = original.iter().zip(corrupted).map(|(a, b)| a != b).collect();
        let corrupted_indices: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        CorruptionRecord {
            requested,
            original_labels: corrupted_indices.iter().map(|&i| original[i]).collect(),
            corrupted_indices,
            mask,
        }
    }

    pub fn achieved(&self) -> usize {
        self.corrupted_indices.len()
    }
}

/// `⌊p·N⌋`, robust to representation error in `p`.
pub fn corruption_count(p: f64, n: usize) -> usize {
    ((p * n as f64) + 1e-9).floor().min(n as f64) as usize
}

/// Where flip targets come from.
#[derive(Debug, Clone, Copy)]
pub enum NoiseSource<'a> {
    Matrix(&'a TransitionMatrix),
    Instance(&'a FlipDistribution),
}

impl NoiseSource<'_> {
    fn num_classes(&self) -> usize {
        match self {
            NoiseSource::Matrix(t) => t.num_classes(),
            NoiseSource::Instance(f) => f.num_classes(),
        }
    }

    fn distribution(&self, index: usize, label: usize) -> &[f64] {
        match self {
            NoiseSource::Matrix(t) => &t.rows[label],
            NoiseSource::Instance(f) => &f.distributions[index],
        }
    }
}

/// Corrupt exactly `⌊p·N⌋` labels drawn from `source`.
///
/// Matrix sources pick indices uniformly without replacement; instance
/// sources pick them with probability proportional to the propensity. Each
/// selected sample gets a new label from the off-diagonal part of its
/// distribution.
pub fn apply_corruption(
    labels: &[usize],
    source: NoiseSource<'_>,
    p: f64,
    seed: u64,
) -> Result<(Vec<usize>, CorruptionRecord)> {
    check_rate(p)?;
    let n = labels.len();
    let m = source.num_classes();
    if let Some(&y) = labels.iter().find(|&&y| y >= m) {
        return Err(Error::arg(format!("label {y} outside [0, {m})")));
    }
    if let NoiseSource::Instance(f) = source {
        if f.distributions.len() != n {
            return Err(Error::arg("flip distribution length differs from labels"));
        }
    }
    let k = corruption_count(p, n);
    let mut out = labels.to_vec();
    if k == 0 {
        let record = CorruptionRecord::from_labels(labels, &out, 0);
        return Ok((out, record));
    }

    let mut select_rng = rng::stream(seed, "corrupt/select", 0);
    let mut selected: Vec<usize> = match source {
        NoiseSource::Matrix(_) => rand::seq::index::sample(&mut select_rng, n, k).into_vec(),
        NoiseSource::Instance(f) => {
            let mut chosen = rand::seq::index::sample_weighted(
                &mut select_rng,
                n,
                |i| f.propensity[i],
                k,
            )
            .map_err(|e| Error::arg(format!("invalid propensity: {e}")))?
            .into_vec();
            if chosen.len() < k {
                // Too few positive propensities; top up uniformly. These
                // samples have no flip mass and fail below.
                let mut rest: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                rest.shuffle(&mut select_rng);
                chosen.extend(rest.into_iter().take(k - chosen.len()));
            }
            chosen
        }
    };
    selected.sort_unstable();

    let mut flip_rng = rng::stream(seed, "corrupt/flip", 0);
    for &i in &selected {
        let y = labels[i];
        let dist = source.distribution(i, y);
        let off_mass: f64 = dist.iter().enumerate().filter(|(j, _)| *j != y).map(|(_, v)| v).sum();
        if !(off_mass > 0.0) {
            return Err(Error::Injection {
                index: i,
                message: format!("no off-diagonal mass for label {y}"),
            });
        }
        let mut u = flip_rng.random::<f64>() * off_mass;
        let mut target = None;
        for (j, &v) in dist.iter().enumerate() {
            if j == y || v <= 0.0 {
                continue;
            }
            target = Some(j);
            if u < v {
                break;
            }
            u -= v;
        }
        out[i] = target.expect("positive off-diagonal mass has a support point");
    }
    let record = CorruptionRecord::from_labels(labels, &out, k);
    Ok((out, record))
}

/// The seven supported noise models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Uniform,
    Asymmetric,
    ClassDependent,
    InstanceDependent,
    DissentingLabel,
    DissentingWorker,
    CrowdMajority,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 7] = [
        NoiseKind::Uniform,
        NoiseKind::Asymmetric,
        NoiseKind::ClassDependent,
        NoiseKind::InstanceDependent,
        NoiseKind::DissentingLabel,
        NoiseKind::DissentingWorker,
        NoiseKind::CrowdMajority,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Uniform => "uniform",
            NoiseKind::Asymmetric => "asymmetric",
            NoiseKind::ClassDependent => "class_dependent",
            NoiseKind::InstanceDependent => "instance_dependent",
            NoiseKind::DissentingLabel => "dissenting_label",
            NoiseKind::DissentingWorker => "dissenting_worker",
            NoiseKind::CrowdMajority => "crowd_majority",
        }
    }

    pub fn is_multi_annotator(self) -> bool {
        matches!(
            self,
            NoiseKind::DissentingLabel | NoiseKind::DissentingWorker | NoiseKind::CrowdMajority
        )
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "noise kind",
                name: s.to_string(),
            })
    }
}

/// Fully specified noise request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
    /// Confusion counts for class-dependent noise.
    #[serde(default)]
    pub confusion: Option<Vec<Vec<usize>>>,
    #[serde(default = "default_propensity_std")]
    pub propensity_std: f64,
}

fn default_propensity_std() -> f64 {
    DEFAULT_PROPENSITY_STD
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, rate: f64, seed: u64) -> Self {
        NoiseSpec {
            kind,
            rate,
            seed,
            confusion: None,
            propensity_std: DEFAULT_PROPENSITY_STD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_rate(self.rate)
    }
}

fn annotations_of(dataset: &Dataset) -> Result<&Array2<i64>> {
    dataset
        .annotator_labels
        .as_ref()
        .ok_or_else(|| Error::arg("dataset has no annotator labels"))
}

/// Replace final labels with annotator labels under one of the
/// multi-annotator schemes.
pub fn inject_multi_annotator(
    dataset: &Dataset,
    kind: NoiseKind,
    p: f64,
    seed: u64,
) -> Result<(Vec<usize>, CorruptionRecord)> {
    check_rate(p)?;
    let ann = annotations_of(dataset)?;
    let labels = &dataset.labels;
    let n = labels.len();
    let k = corruption_count(p, n);
    let mut out = labels.clone();

    let disagreeing = |i: usize| -> Vec<usize> {
        ann.row(i)
            .iter()
            .filter(|&&v| v != MISSING_LABEL && v as usize != labels[i])
            .map(|&v| v as usize)
            .collect()
    };

    match kind {
        NoiseKind::DissentingLabel => {
            let eligible: Vec<usize> = (0..n).filter(|&i| !disagreeing(i).is_empty()).collect();
            let mut r = rng::stream(seed, "dissenting_label", 0);
            let take = k.min(eligible.len());
            for pos in rand::seq::index::sample(&mut r, eligible.len(), take) {
                let i = eligible[pos];
                let options = disagreeing(i);
                out[i] = options[r.random_range(0..options.len())];
            }
        }
        NoiseKind::DissentingWorker => {
            let mut annotators: Vec<usize> = (0..ann.ncols()).collect();
            annotators.shuffle(&mut rng::stream(seed, "dissenting_worker/annotators", 0));
            let mut done = vec![false; n];
            let mut count = 0;
            'outer: for (pass, &a) in annotators.iter().enumerate() {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng::stream(seed, "dissenting_worker/samples", pass as u64));
                for i in order {
                    if count >= k {
                        break 'outer;
                    }
                    let v = ann[[i, a]];
                    if done[i] || v == MISSING_LABEL || v as usize == labels[i] {
                        continue;
                    }
                    out[i] = v as usize;
                    done[i] = true;
                    count += 1;
                }
            }
        }
        NoiseKind::CrowdMajority => {
            let m = dataset.num_classes;
            let majority = |i: usize| -> Option<usize> {
                let mut votes = vec![0usize; m];
                for &v in ann.row(i) {
                    if v != MISSING_LABEL {
                        votes[v as usize] += 1;
                    }
                }
                let best = *votes.iter().max()?;
                if best == 0 {
                    return None;
                }
                votes.iter().position(|&c| c == best)
            };
            let eligible: Vec<(usize, usize)> = (0..n)
                .filter_map(|i| majority(i).filter(|&c| c != labels[i]).map(|c| (i, c)))
                .collect();
            let mut r = rng::stream(seed, "crowd_majority", 0);
            let take = k.min(eligible.len());
            for pos in rand::seq::index::sample(&mut r, eligible.len(), take) {
                let (i, c) = eligible[pos];
                out[i] = c;
            }
        }
        other => {
            return Err(Error::arg(format!("{other} is not a multi-annotator noise kind")));
        }
    }
    let record = CorruptionRecord::from_labels(labels, &out, k);
    Ok((out, record))
}

/// Result of running a noise model over a dataset.
#[derive(Debug, Clone)]
pub struct Injection {
    pub labels: Vec<usize>,
    pub record: CorruptionRecord,
    /// The transition matrix used, for matrix-based kinds.
    pub matrix: Option<TransitionMatrix>,
}

/// Extra inputs some noise models need.
#[derive(Debug, Clone, Default)]
pub struct NoiseContext {
    pub confusion: Option<Vec<Vec<usize>>>,
    pub propensity_std: Option<f64>,
}

/// A label-noise model, selectable by name.
pub trait NoiseModel: Send + Sync {
    fn kind(&self) -> NoiseKind;

    fn inject(&self, dataset: &Dataset, rate: f64, seed: u64, ctx: &NoiseContext) -> Result<Injection>;
}

fn matrix_injection(dataset: &Dataset, t: TransitionMatrix, rate: f64, seed: u64) -> Result<Injection> {
    if t.num_classes() != dataset.num_classes {
        return Err(Error::arg("transition matrix size differs from class count"));
    }
    let (labels, record) = apply_corruption(&dataset.labels, NoiseSource::Matrix(&t), rate, seed)?;
    Ok(Injection {
        labels,
        record,
        matrix: Some(t),
    })
}

struct Uniform;

impl NoiseModel for Uniform {
    fn kind(&self) -> NoiseKind {
        NoiseKind::Uniform
    }

    fn inject(&self, dataset: &Dataset, rate: f64, seed: u64, _: &NoiseContext) -> Result<Injection> {
        matrix_injection(dataset, build_uniform_t(dataset.num_classes, rate)?, rate, seed)
    }
}

struct Asymmetric;

impl NoiseModel for Asymmetric {
    fn kind(&self) -> NoiseKind {
        NoiseKind::Asymmetric
    }

    fn inject(&self, dataset: &Dataset, rate: f64, seed: u64, _: &NoiseContext) -> Result<Injection> {
        matrix_injection(dataset, build_asymmetric_t(dataset.num_classes, rate)?, rate, seed)
    }
}

struct ClassDependent;

impl NoiseModel for ClassDependent {
    fn kind(&self) -> NoiseKind {
        NoiseKind::ClassDependent
    }

    fn inject(&self, dataset: &Dataset, rate: f64, seed: u64, ctx: &NoiseContext) -> Result<Injection> {
        let confusion = ctx
            .confusion
            .as_ref()
            .ok_or_else(|| Error::arg("class-dependent noise needs a confusion matrix"))?;
        matrix_injection(dataset, build_class_dependent_t(confusion, rate)?, rate, seed)
    }
}

struct InstanceDependent;

impl NoiseModel for InstanceDependent {
    fn kind(&self) -> NoiseKind {
        NoiseKind::InstanceDependent
    }

    fn inject(&self, dataset: &Dataset, rate: f64, seed: u64, ctx: &NoiseContext) -> Result<Injection> {
        let flips = instance_flip_distribution(
            &dataset.features,
            &dataset.labels,
            dataset.num_classes,
            rate,
            ctx.propensity_std.unwrap_or(DEFAULT_PROPENSITY_STD),
            seed,
        )?;
        let (labels, record) =
            apply_corruption(&dataset.labels, NoiseSource::Instance(&flips), rate, seed)?;
        Ok(Injection {
            labels,
            record,
            matrix: None,
        })
    }
}

struct MultiAnnotator(NoiseKind);

impl NoiseModel for MultiAnnotator {
    fn kind(&self) -> NoiseKind {
        self.0
    }

    fn inject(&self, dataset: &Dataset, rate: f64, seed: u64, _: &NoiseContext) -> Result<Injection> {
        let (labels, record) = inject_multi_annotator(dataset, self.0, rate, seed)?;
        Ok(Injection {
            labels,
            record,
            matrix: None,
        })
    }
}

/// Noise models by name.
pub struct NoiseRegistry {
    models: BTreeMap<&'static str, Box<dyn NoiseModel>>,
}

impl NoiseRegistry {
    pub fn empty() -> Self {
        NoiseRegistry {
            models: BTreeMap::new(),
        }
    }

    /// All seven built-in models.
    pub fn standard() -> Self {
        let mut reg = Self::empty();
        reg.register(Box::new(Uniform));
        reg.register(Box::new(Asymmetric));
        reg.register(Box::new(ClassDependent));
        reg.register(Box::new(InstanceDependent));
        for kind in [
            NoiseKind::DissentingLabel,
            NoiseKind::DissentingWorker,
            NoiseKind::CrowdMajority,
        ] {
            reg.register(Box::new(MultiAnnotator(kind)));
        }
        reg
    }

    pub fn register(&mut self, model: Box<dyn NoiseModel>) {
        self.models.insert(model.kind().as_str(), model);
    }

    pub fn get(&self, name: &str) -> Result<&dyn NoiseModel> {
        self.models
            .get(name)
            .map(|m| m.as_ref())
            .ok_or_else(|| Error::Unknown {
                kind: "noise kind",
                name: name.to_string(),
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.models.keys().copied()
    }
}

impl Default for NoiseRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

/// Run a [`NoiseSpec`] against a dataset.
pub fn inject(dataset: &Dataset, spec: &NoiseSpec) -> Result<Injection> {
    spec.validate()?;
    let ctx = NoiseContext {
        confusion: spec.confusion.clone(),
        propensity_std: Some(spec.propensity_std),
    };
    NoiseRegistry::standard()
        .get(spec.kind.as_str())?
        .inject(dataset, spec.rate, spec.seed, &ctx)
}
