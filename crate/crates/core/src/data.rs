//! Datasets, CSV interchange, synthetic generators, splitting and data cards.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Sentinel for a missing annotator label.
pub const MISSING_LABEL: i64 = -1;

/// A labeled classification dataset.
///
/// `labels` are the observed (possibly noisy) labels. `true_labels` carries the
/// latent clean labels when they are known, e.g. for synthetic data or after
/// noise injection.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<u64>,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub true_labels: Option<Vec<usize>>,
    /// N×A annotator labels, [`MISSING_LABEL`] where an annotator gave none.
    pub annotator_labels: Option<Array2<i64>>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        ids: Vec<u64>,
        features: Array2<f64>,
        labels: Vec<usize>,
        true_labels: Option<Vec<usize>>,
        annotator_labels: Option<Array2<i64>>,
        num_classes: usize,
    ) -> Result<Self> {
        let ds = Dataset {
            ids,
            features,
            labels,
            true_labels,
            annotator_labels,
            num_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.num_classes < 2 {
            return Err(Error::arg(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.ids.len() != n || self.features.nrows() != n {
            return Err(Error::arg(format!(
                "length mismatch: {} ids, {} feature rows, {} labels",
                self.ids.len(),
                self.features.nrows(),
                n
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for (row, id) in self.ids.iter().enumerate() {
            if !seen.insert(*id) {
                return Err(Error::Parse {
                    row: row + 1,
                    message: format!("duplicate id {id}"),
                });
            }
        }
        if let Some((row, &y)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &y)| y >= self.num_classes)
        {
            return Err(Error::Parse {
                row: row + 1,
                message: format!("label {y} outside [0, {})", self.num_classes),
            });
        }
        if let Some(truth) = &self.true_labels {
            if truth.len() != n {
                return Err(Error::arg("true_labels length mismatch"));
            }
            if let Some((row, &y)) = truth
                .iter()
                .enumerate()
                .find(|(_, &y)| y >= self.num_classes)
            {
                return Err(Error::Parse {
                    row: row + 1,
                    message: format!("true label {y} outside [0, {})", self.num_classes),
                });
            }
        }
        for (row, features) in self.features.outer_iter().enumerate() {
            if features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    row: row + 1,
                    message: "non-finite feature".into(),
                });
            }
        }
        if let Some(ann) = &self.annotator_labels {
            if ann.nrows() != n || ann.ncols() == 0 {
                return Err(Error::arg(
                    "annotator_labels must be N×A with at least one annotator",
                ));
            }
            for ((row, _), &v) in ann.indexed_iter() {
                if v != MISSING_LABEL && (v < 0 || v as usize >= self.num_classes) {
                    return Err(Error::Parse {
                        row: row + 1,
                        message: format!("annotator label {v} outside [0, {})", self.num_classes),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    /// Per-class counts of the observed labels.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            true_labels: self
                .true_labels
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i]).collect()),
            annotator_labels: self
                .annotator_labels
                .as_ref()
                .map(|a| a.select(Axis(0), indices)),
            num_classes: self.num_classes,
        }
    }

    /// Copy with replaced observed labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        let mut ds = self.clone();
        ds.labels = labels;
        ds.validate()?;
        Ok(ds)
    }
}

/// Column mapping for [`load_dataset_csv`].
///
/// Empty `features` / `annotators` and a `None` true-label column mean
/// "detect from the header": `x<k>`, `a<k>` and `y_true` respectively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub id: String,
    pub label: String,
    pub true_label: Option<String>,
    pub annotators: Vec<String>,
    pub features: Vec<String>,
    pub num_classes: Option<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            id: "id".into(),
            label: "y".into(),
            true_label: None,
            annotators: Vec::new(),
            features: Vec::new(),
            num_classes: None,
        }
    }
}

fn prefixed_columns(headers: &csv::StringRecord, prefix: &str) -> Vec<String> {
    let mut cols: Vec<(usize, String)> = headers
        .iter()
        .filter_map(|h| {
            h.strip_prefix(prefix)
                .and_then(|rest| rest.parse::<usize>().ok())
                .map(|k| (k, h.to_string()))
        })
        .collect();
    cols.sort();
    cols.into_iter().map(|(_, h)| h).collect()
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    col: usize,
    row: usize,
    what: &str,
) -> Result<T> {
    let raw = record.get(col).unwrap_or("").trim();
    raw.parse::<T>().map_err(|_| Error::Parse {
        row,
        message: format!("invalid {what} `{raw}`"),
    })
}

/// Read a dataset CSV (`id,y[,y_true][,a0..][,x0..]`).
pub fn load_dataset_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, schema)
}

pub fn read_dataset<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();

    let id_col = column_index(&headers, &schema.id)?;
    let label_col = column_index(&headers, &schema.label)?;
    let true_col = match &schema.true_label {
        Some(name) => Some(column_index(&headers, name)?),
        None => headers.iter().position(|h| h == "y_true"),
    };
    let annotator_names = if schema.annotators.is_empty() {
        prefixed_columns(&headers, "a")
    } else {
        schema.annotators.clone()
    };
    let feature_names = if schema.features.is_empty() {
        prefixed_columns(&headers, "x")
    } else {
        schema.features.clone()
    };
    if feature_names.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }
    let annotator_cols = annotator_names
        .iter()
        .map(|n| column_index(&headers, n))
        .collect::<Result<Vec<_>>>()?;
    let feature_cols = feature_names
        .iter()
        .map(|n| column_index(&headers, n))
        .collect::<Result<Vec<_>>>()?;

    let mut ids = Vec::new();
    let mut labels: Vec<i64> = Vec::new();
    let mut truth: Vec<i64> = Vec::new();
    let mut annotations: Vec<i64> = Vec::new();
    let mut features: Vec<f64> = Vec::new();

    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        ids.push(parse_field::<u64>(&record, id_col, row, "id")?);
        labels.push(parse_field::<i64>(&record, label_col, row, "label")?);
        if let Some(c) = true_col {
            truth.push(parse_field::<i64>(&record, c, row, "true label")?);
        }
        for &c in &annotator_cols {
            annotations.push(parse_field::<i64>(&record, c, row, "annotator label")?);
        }
        for &c in &feature_cols {
            let v = parse_field::<f64>(&record, c, row, "feature")?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("non-finite feature in column `{}`", &headers[c]),
                });
            }
            features.push(v);
        }
    }

    let n = ids.len();
    let max_label = labels.iter().chain(truth.iter()).copied().max().unwrap_or(0);
    let num_classes = schema
        .num_classes
        .unwrap_or_else(|| (max_label.max(0) as usize + 1).max(2));

    let check_label = |row: usize, v: i64, what: &str| -> Result<usize> {
        if v < 0 || v as usize >= num_classes {
            Err(Error::Parse {
                row,
                message: format!("{what} {v} outside [0, {num_classes})"),
            })
        } else {
            Ok(v as usize)
        }
    };
    let labels = labels
        .iter()
        .enumerate()
        .map(|(i, &v)| check_label(i + 1, v, "label"))
        .collect::<Result<Vec<_>>>()?;
    let true_labels = if true_col.is_some() {
        Some(
            truth
                .iter()
                .enumerate()
                .map(|(i, &v)| check_label(i + 1, v, "true label"))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let annotator_labels = if annotator_cols.is_empty() {
        None
    } else {
        Some(
            Array2::from_shape_vec((n, annotator_cols.len()), annotations)
                .expect("row-major annotator buffer"),
        )
    };
    let features =
        Array2::from_shape_vec((n, feature_cols.len()), features).expect("row-major feature buffer");

    Dataset::new(ids, features, labels, true_labels, annotator_labels, num_classes)
}

/// Write a dataset in the interchange CSV layout.
pub fn write_dataset_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(dataset, BufWriter::new(file))
}

pub fn write_dataset<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "y".to_string()];
    if dataset.true_labels.is_some() {
        header.push("y_true".into());
    }
    if let Some(ann) = &dataset.annotator_labels {
        header.extend((0..ann.ncols()).map(|k| format!("a{k}")));
    }
    header.extend((0..dataset.num_features()).map(|k| format!("x{k}")));
    wtr.write_record(&header)?;

    let mut record = Vec::with_capacity(header.len());
    for i in 0..dataset.len() {
        record.clear();
        record.push(dataset.ids[i].to_string());
        record.push(dataset.labels[i].to_string());
        if let Some(t) = &dataset.true_labels {
            record.push(t[i].to_string());
        }
        if let Some(ann) = &dataset.annotator_labels {
            record.extend(ann.row(i).iter().map(|v| v.to_string()));
        }
        record.extend(dataset.features.row(i).iter().map(|v| v.to_string()));
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|e| Error::io("<dataset writer>", e))?;
    Ok(())
}

/// Isotropic unit-variance Gaussian clusters.
///
/// Class centers sit equally spaced on a circle of radius `separation` in the
/// first two dimensions (only the first when `d == 1`). Class sizes differ by
/// at most one.
pub fn make_blobs(n: usize, d: usize, m: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if m < 2 {
        return Err(Error::arg("make_blobs needs at least 2 classes"));
    }
    if n < m {
        return Err(Error::arg(format!("n = {n} is smaller than m = {m}")));
    }
    if d == 0 {
        return Err(Error::arg("make_blobs needs d >= 1"));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::arg("separation must be positive"));
    }

    let mut labels: Vec<usize> = (0..n).map(|i| i % m).collect();
    labels.shuffle(&mut rng::stream(seed, "blobs/labels", 0));

    let mut noise = rng::stream(seed, "blobs/features", 0);
    let mut features = Array2::<f64>::zeros((n, d));
    for (i, mut row) in features.outer_iter_mut().enumerate() {
        let angle = 2.0 * std::f64::consts::PI * labels[i] as f64 / m as f64;
        for (k, v) in row.iter_mut().enumerate() {
            let center = match k {
                0 => separation * angle.cos(),
                1 => separation * angle.sin(),
                _ => 0.0,
            };
            let z: f64 = StandardNormal.sample(&mut noise);
            *v = center + z;
        }
    }

    Dataset::new(
        (0..n as u64).collect(),
        features,
        labels.clone(),
        Some(labels),
        None,
        m,
    )
}

/// Attach simulated annotators to a dataset with known true labels.
///
/// Each annotator reports the true label with probability `1 - error_rate`
/// and a uniformly chosen other class otherwise; each entry is missing with
/// probability `missing_rate`.
pub fn simulate_annotators(
    dataset: &Dataset,
    num_annotators: usize,
    error_rate: f64,
    missing_rate: f64,
    seed: u64,
) -> Result<Dataset> {
    use rand::Rng as _;
    if num_annotators == 0 {
        return Err(Error::arg("need at least one annotator"));
    }
    if !(0.0..=1.0).contains(&error_rate) || !(0.0..1.0).contains(&missing_rate) {
        return Err(Error::arg("annotator rates must lie in [0, 1)"));
    }
    let truth = dataset.true_labels.as_ref().unwrap_or(&dataset.labels);
    let m = dataset.num_classes;
    let mut r = rng::stream(seed, "annotators", 0);
    let mut ann = Array2::<i64>::from_elem((dataset.len(), num_annotators), MISSING_LABEL);
    for ((i, _), v) in ann.indexed_iter_mut() {
        if r.random::<f64>() < missing_rate {
            continue;
        }
        let y = truth[i];
        *v = if r.random::<f64>() < error_rate {
            let other = r.random_range(0..m - 1);
            (if other >= y { other + 1 } else { other }) as i64
        } else {
            y as i64
        };
    }
    let mut ds = dataset.clone();
    ds.annotator_labels = Some(ann);
    ds.validate()?;
    Ok(ds)
}

/// Train and test halves of a stratified split.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
}

/// Stratified split by observed label.
///
/// Each class contributes `round(test_fraction * n_class)` test rows, clamped
/// so that both halves keep at least one member of every class.
pub fn train_test_split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::arg(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut test_idx = Vec::new();
    let mut train_idx = Vec::new();
    for (class, mut members) in by_class {
        if members.len() < 2 {
            return Err(Error::Stratification(format!(
                "class {class} has {} member(s); at least 2 are needed",
                members.len()
            )));
        }
        members.shuffle(&mut rng::stream(seed, "split", class as u64));
        let n_test = ((test_fraction * members.len() as f64).round() as usize)
            .clamp(1, members.len() - 1);
        test_idx.extend_from_slice(&members[..n_test]);
        train_idx.extend_from_slice(&members[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(SplitPair {
        train: dataset.subset(&train_idx),
        test: dataset.subset(&test_idx),
    })
}

/// One detector's columns in a data card.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodColumns {
    pub method: String,
    pub flags: Vec<bool>,
    pub scores: Vec<f64>,
}

/// Per-run record of original labels, corrupted labels and each method's
/// flags and scores, over the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCard {
    pub dataset: String,
    pub noise_type: String,
    pub noise_rate: f64,
    pub seed: u64,
    pub ids: Vec<u64>,
    pub original_labels: Vec<usize>,
    pub corrupted_labels: Vec<usize>,
    pub methods: Vec<MethodColumns>,
}

impl DataCard {
    pub fn validate(&self) -> Result<()> {
        let n = self.ids.len();
        if self.original_labels.len() != n || self.corrupted_labels.len() != n {
            return Err(Error::Format("label columns differ in length".into()));
        }
        let mut names = HashSet::new();
        for m in &self.methods {
            if m.flags.len() != n || m.scores.len() != n {
                return Err(Error::Format(format!(
                    "method `{}` has {} flags and {} scores for {n} rows",
                    m.method,
                    m.flags.len(),
                    m.scores.len()
                )));
            }
            if m.method.is_empty() || m.method.contains([',', '\n', '"']) {
                return Err(Error::Format(format!("bad method name `{}`", m.method)));
            }
            if !names.insert(m.method.as_str()) {
                return Err(Error::Format(format!("duplicate method `{}`", m.method)));
            }
        }
        for field in [&self.dataset, &self.noise_type] {
            if field.contains(['\n', '\r']) {
                return Err(Error::Format("metadata may not contain newlines".into()));
            }
        }
        Ok(())
    }
}

pub fn write_data_card(card: &DataCard, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_card(card, BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn write_card<W: Write>(card: &DataCard, mut writer: W) -> Result<()> {
    card.validate()?;
    let io = |e| Error::io("<data card writer>", e);
    writeln!(writer, "# dataset={}", card.dataset).map_err(io)?;
    writeln!(writer, "# noise_type={}", card.noise_type).map_err(io)?;
    writeln!(writer, "# noise_rate={}", card.noise_rate).map_err(io)?;
    writeln!(writer, "# seed={}", card.seed).map_err(io)?;

    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![
        "id".to_string(),
        "original_label".to_string(),
        "corrupted_label".to_string(),
    ];
    for m in &card.methods {
        header.push(format!("flag_{}", m.method));
        header.push(format!("score_{}", m.method));
    }
    wtr.write_record(&header)?;
    for i in 0..card.ids.len() {
        let mut record = vec![
            card.ids[i].to_string(),
            card.original_labels[i].to_string(),
            card.corrupted_labels[i].to_string(),
        ];
        for m in &card.methods {
            record.push(u8::from(m.flags[i]).to_string());
            record.push(m.scores[i].to_string());
        }
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(io)?;
    Ok(())
}

pub fn read_data_card(path: impl AsRef<Path>) -> Result<DataCard> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_card(BufReader::new(file))
}

pub fn read_card<R: BufRead>(mut reader: R) -> Result<DataCard> {
    let mut meta = BTreeMap::new();
    let mut body = String::new();
    let mut line = String::new();
    loop {
        line.clear();
        let read = reader
            .read_line(&mut line)
            .map_err(|e| Error::io("<data card reader>", e))?;
        if read == 0 {
            break;
        }
        match line.strip_prefix("# ") {
            Some(kv) if body.is_empty() => {
                let (k, v) = kv
                    .trim_end_matches(['\n', '\r'])
                    .split_once('=')
                    .ok_or_else(|| Error::Format(format!("bad metadata line `{}`", line.trim_end())))?;
                meta.insert(k.to_string(), v.to_string());
            }
            _ => body.push_str(&line),
        }
    }
    let take = |key: &str| {
        meta.get(key)
            .cloned()
            .ok_or_else(|| Error::Format(format!("missing metadata `{key}`")))
    };
    let dataset = take("dataset")?;
    let noise_type = take("noise_type")?;
    let noise_rate: f64 = take("noise_rate")?
        .parse()
        .map_err(|_| Error::Format("noise_rate is not a number".into()))?;
    let seed: u64 = take("seed")?
        .parse()
        .map_err(|_| Error::Format("seed is not an integer".into()))?;

    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.len() < 3
        || &headers[0] != "id"
        || &headers[1] != "original_label"
        || &headers[2] != "corrupted_label"
    {
        return Err(Error::Format(
            "header must start with id,original_label,corrupted_label".into(),
        ));
    }

    // flag_<m> and score_<m> must pair up, in that order.
    let mut method_cols = Vec::new();
    let rest: Vec<&str> = headers.iter().skip(3).collect();
    let mut flag_only = Vec::new();
    let mut score_only: Vec<String> = Vec::new();
    let mut k = 0;
    while k < rest.len() {
        let col = rest[k];
        if let Some(name) = col.strip_prefix("flag_") {
            let expected = format!("score_{name}");
            if rest.get(k + 1) == Some(&expected.as_str()) {
                method_cols.push((name.to_string(), 3 + k, 4 + k));
                k += 2;
                continue;
            }
            flag_only.push(name.to_string());
        } else if let Some(name) = col.strip_prefix("score_") {
            score_only.push(name.to_string());
        } else {
            return Err(Error::Format(format!("unexpected column `{col}`")));
        }
        k += 1;
    }
    if let Some(name) = flag_only.first() {
        return Err(Error::Format(format!("flag_{name} has no matching score_{name}")));
    }
    if let Some(name) = score_only.first() {
        return Err(Error::Format(format!("score_{name} has no matching flag_{name}")));
    }

    let mut card = DataCard {
        dataset,
        noise_type,
        noise_rate,
        seed,
        ids: Vec::new(),
        original_labels: Vec::new(),
        corrupted_labels: Vec::new(),
        methods: method_cols
            .iter()
            .map(|(name, _, _)| MethodColumns {
                method: name.clone(),
                flags: Vec::new(),
                scores: Vec::new(),
            })
            .collect(),
    };
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        card.ids.push(parse_field(&record, 0, row, "id")?);
        card.original_labels.push(parse_field(&record, 1, row, "original_label")?);
        card.corrupted_labels.push(parse_field(&record, 2, row, "corrupted_label")?);
        for (m, &(_, flag_col, score_col)) in card.methods.iter_mut().zip(&method_cols) {
            let flag = match record.get(flag_col) {
                Some("0") => false,
                Some("1") => true,
                other => {
                    return Err(Error::Parse {
                        row,
                        message: format!("flag must be 0 or 1, got {other:?}"),
                    })
                }
            };
            m.flags.push(flag);
            m.scores.push(parse_field(&record, score_col, row, "score")?);
        }
    }
    card.validate()?;
    Ok(card)
}
