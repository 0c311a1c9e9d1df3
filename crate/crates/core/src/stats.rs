//! Ranking methods across datasets: Friedman, pairwise Wilcoxon with Holm
//! correction, cliques and critical-difference diagrams.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// Values and tie-averaged ranks of `k` methods on `N` datasets; rank 1 is
/// best.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub direction: Direction,
    pub ranks: Vec<Vec<f64>>,
    pub mean_ranks: Vec<f64>,
}

/// Average ranks of `values`, 1 for the smallest.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

impl RankTable {
    pub fn new(methods: Vec<String>, datasets: Vec<String>, values: Vec<Vec<f64>>, direction: Direction) -> Result<Self> {
        let k = methods.len();
        if values.len() != datasets.len() {
            return Err(Error::arg(format!("{} value rows for {} datasets", values.len(), datasets.len())));
        }
        if let Some(row) = values.iter().find(|r| r.len() != k) {
            return Err(Error::arg(format!("value row of length {} for {k} methods", row.len())));
        }
        if values.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::arg("rank table values must not be NaN"));
        }
        let ranks: Vec<Vec<f64>> = values
            .iter()
            .map(|row| match direction {
                Direction::LowerBetter => average_ranks(row),
                Direction::HigherBetter => average_ranks(&row.iter().map(|v| -v).collect::<Vec<_>>()),
            })
            .collect();
        let n = ranks.len().max(1) as f64;
        let mean_ranks = (0..k).map(|j| ranks.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        Ok(RankTable {
            methods,
            datasets,
            values,
            direction,
            ranks,
            mean_ranks,
        })
    }

    pub fn num_methods(&self) -> usize {
        self.methods.len()
    }

    pub fn num_datasets(&self) -> usize {
        self.datasets.len()
    }

    fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    /// Build a table from a harness results CSV.
    ///
    /// Blocks are `(dataset, noise)` pairs and methods are detectors. The
    /// metric is averaged over rates, seeds and classifiers; for detection
    /// metrics (`det_*`) rate 0 is left out. Rows marked with an error or an
    /// empty metric are skipped, as are blocks missing any method.
    pub fn from_results_csv<R: Read>(reader: R, metric: &str, direction: Direction) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("results file has no `{name}` column")))
        };
        let (c_ds, c_noise, c_rate, c_det, c_metric) =
            (col("dataset")?, col("noise")?, col("rate")?, col("detector")?, col(metric)?);
        let c_status = col("status").ok();
        let skip_rate0 = metric.starts_with("det_");

        let mut sums: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
        let mut methods = BTreeSet::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if c_status.is_some_and(|c| &rec[c] != "ok") || rec[c_metric].is_empty() {
                continue;
            }
            let rate: f64 = rec[c_rate].parse().map_err(|_| Error::Parse {
                row: row + 2,
                message: format!("bad rate `{}`", &rec[c_rate]),
            })?;
            if skip_rate0 && rate == 0.0 {
                continue;
            }
            let value: f64 = rec[c_metric].parse().map_err(|_| Error::Parse {
                row: row + 2,
                message: format!("bad {metric} `{}`", &rec[c_metric]),
            })?;
            let block = format!("{}/{}", &rec[c_ds], &rec[c_noise]);
            let method = rec[c_det].to_string();
            methods.insert(method.clone());
            let e = sums.entry((block, method)).or_insert((0.0, 0));
            e.0 += value;
            e.1 += 1;
        }
        let methods: Vec<String> = methods.into_iter().collect();
        let blocks: BTreeSet<String> = sums.keys().map(|(b, _)| b.clone()).collect();
        let mut datasets = Vec::new();
        let mut values = Vec::new();
        for block in blocks {
            let row: Option<Vec<f64>> = methods
                .iter()
                .map(|m| sums.get(&(block.clone(), m.clone())).map(|(s, c)| s / *c as f64))
                .collect();
            if let Some(row) = row {
                datasets.push(block);
                values.push(row);
            }
        }
        Self::new(methods, datasets, values, direction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// `χ²_F = 12N/(k(k+1)) · Σ_j (R̄_j − (k+1)/2)²` against χ² with `k−1` degrees
/// of freedom.
pub fn friedman_test(table: &RankTable) -> Result<FriedmanResult> {
    let k = table.num_methods();
    let n = table.num_datasets();
    if k < 2 || n < 2 {
        return Err(Error::arg(format!("Friedman test needs k >= 2 and N >= 2, got k = {k}, N = {n}")));
    }
    let (kf, nf) = (k as f64, n as f64);
    let centre = (kf + 1.0) / 2.0;
    let statistic =
        12.0 * nf / (kf * (kf + 1.0)) * table.mean_ranks.iter().map(|r| (r - centre).powi(2)).sum::<f64>();
    let chi = ChiSquared::new(kf - 1.0).map_err(|e| Error::arg(e.to_string()))?;
    let p_value = if statistic <= 0.0 { 1.0 } else { chi.sf(statistic) };
    Ok(FriedmanResult { statistic, p_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub statistic: f64,
    pub p_value: f64,
    /// Non-zero differences used.
    pub n: usize,
    pub exact: bool,
    /// Every difference was zero; `p_value` is 1 by convention.
    pub degenerate: bool,
}

/// Largest `n` for which the exact null distribution is used.
pub const WILCOXON_EXACT_MAX: usize = 25;

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped and tied magnitudes get average ranks. The
/// exact distribution is a DP over doubled ranks, so tied half ranks stay
/// integral.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::arg(format!("need equal non-empty samples, got {} and {}", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| d.is_nan()) {
        return Err(Error::arg("NaN difference in Wilcoxon test"));
    }
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            n: 0,
            exact: true,
            degenerate: true,
        });
    }
    let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    if n <= WILCOXON_EXACT_MAX {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        // counts[s] = number of sign patterns with doubled positive sum s.
        let mut counts = vec![0.0f64; total + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let w = (2.0 * w_plus).round() as usize;
        let all = 2f64.powi(n as i32);
        let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
        let upper: f64 = counts[w..].iter().sum::<f64>() / all;
        return Ok(WilcoxonResult {
            statistic: w_plus,
            p_value: (2.0 * lower.min(upper)).min(1.0),
            n,
            exact: true,
            degenerate: false,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    Ok(WilcoxonResult {
        statistic: w_plus,
        p_value: (2.0 * normal.sf(z)).min(1.0),
        n,
        exact: false,
        degenerate: false,
    })
}

/// Holm step-down adjustment, returned in input order.
pub fn holm_adjust(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::arg(format!("p-value {p} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (j, &i) in order.iter().enumerate() {
        running = running.max(((m - j) as f64 * p_values[i]).min(1.0));
        adjusted[i] = running;
    }
    Ok(adjusted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

/// Methods ordered by mean rank with cliques of mutually indistinguishable
/// methods. `cliques` hold indices into `methods`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliqueDiagram {
    pub methods: Vec<String>,
    pub mean_ranks: Vec<f64>,
    pub pairs: Vec<PairwiseTest>,
    pub alpha: f64,
    pub cliques: Vec<Vec<usize>>,
}

impl CliqueDiagram {
    pub fn clique_names(&self) -> Vec<Vec<String>> {
        self.cliques
            .iter()
            .map(|c| c.iter().map(|&i| self.methods[i].clone()).collect())
            .collect()
    }
}

/// Holm-adjusted pairwise Wilcoxon tests on the table values, then maximal
/// contiguous runs (in mean-rank order) containing no significant pair.
pub fn build_cliques(table: &RankTable, alpha: f64) -> Result<CliqueDiagram> {
    let k = table.num_methods();
    if k == 0 {
        return Err(Error::arg("rank table has no methods"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::arg(format!("alpha {alpha} outside (0, 1)")));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| table.mean_ranks[a].total_cmp(&table.mean_ranks[b]).then(a.cmp(&b)));

    let mut raw = Vec::new();
    let mut index_pairs = Vec::new();
    for x in 0..k {
        for y in x + 1..k {
            let (i, j) = (order[x], order[y]);
            raw.push(wilcoxon_signed_rank(&table.column(i), &table.column(j))?.p_value);
            index_pairs.push((x, y));
        }
    }
    let adjusted = holm_adjust(&raw)?;
    let mut significant = vec![vec![false; k]; k];
    let pairs = index_pairs
        .iter()
        .enumerate()
        .map(|(t, &(x, y))| {
            let sig = adjusted[t] < alpha;
            significant[x][y] = sig;
            significant[y][x] = sig;
            PairwiseTest {
                a: table.methods[order[x]].clone(),
                b: table.methods[order[y]].clone(),
                p_value: raw[t],
                p_adjusted: adjusted[t],
                significant: sig,
            }
        })
        .collect();

    // Longest admissible run from each start; keep those not nested in an
    // earlier run (ends are non-decreasing in the start).
    let mut cliques: Vec<Vec<usize>> = Vec::new();
    let mut last_end = None;
    for start in 0..k {
        let mut end = start;
        while end + 1 < k && (start..=end).all(|x| !significant[x][end + 1]) {
            end += 1;
        }
        if last_end.is_none_or(|e| end > e) {
            cliques.push((start..=end).collect());
            last_end = Some(end);
        }
    }

    Ok(CliqueDiagram {
        methods: order.iter().map(|&i| table.methods[i].clone()).collect(),
        mean_ranks: order.iter().map(|&i| table.mean_ranks[i]).collect(),
        pairs,
        alpha,
        cliques,
    })
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Critical-difference style diagram: a rank axis from 1 to k, each method
/// hanging off its mean rank (best half to the left) and one crossbar per
/// clique of two or more methods.
pub fn render_cd_svg(diagram: &CliqueDiagram) -> String {
    let k = diagram.methods.len().max(2);
    let (width, margin, axis_y) = (640.0, 140.0, 40.0);
    let scale = (width - 2.0 * margin) / (k as f64 - 1.0);
    let x_of = |rank: f64| margin + (rank - 1.0) * scale;
    let bars: Vec<&Vec<usize>> = diagram.cliques.iter().filter(|c| c.len() >= 2).collect();
    let half = diagram.methods.len().div_ceil(2);
    let label_top = axis_y + 20.0 + 8.0 * bars.len() as f64;
    let height = label_top + 20.0 * half as f64 + 20.0;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<line class="axis" x1="{:.2}" y1="{axis_y:.2}" x2="{:.2}" y2="{axis_y:.2}" stroke="black"/>"#,
        x_of(1.0),
        x_of(k as f64)
    );
    for r in 1..=k {
        let x = x_of(r as f64);
        let _ = writeln!(
            svg,
            r#"<line class="tick" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{axis_y:.2}" stroke="black"/>"#,
            axis_y - 5.0
        );
        let _ = writeln!(svg, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{r}</text>"#, axis_y - 10.0);
    }
    for (b, clique) in bars.iter().enumerate() {
        let lo = diagram.mean_ranks[clique[0]];
        let hi = diagram.mean_ranks[*clique.last().expect("non-empty clique")];
        let y = axis_y + 12.0 + 8.0 * b as f64;
        let _ = writeln!(
            svg,
            r#"<line class="clique" x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black" stroke-width="3"/>"#,
            x_of(lo) - 3.0,
            x_of(hi) + 3.0
        );
    }
    for (i, (name, &rank)) in diagram.methods.iter().zip(&diagram.mean_ranks).enumerate() {
        let x = x_of(rank);
        let left = i < half;
        let slot = if left { i } else { diagram.methods.len() - 1 - i };
        let y = label_top + 20.0 * slot as f64;
        let (tx, anchor) = if left { (margin - 10.0, "end") } else { (width - margin + 10.0, "start") };
        let _ = writeln!(
            svg,
            r#"<polyline class="method" points="{x:.2},{axis_y:.2} {x:.2},{y:.2} {tx:.2},{y:.2}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text class="label" x="{:.2}" y="{:.2}" text-anchor="{anchor}">{} ({rank:.2})</text>"#,
            if left { tx - 4.0 } else { tx + 4.0 },
            y + 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
