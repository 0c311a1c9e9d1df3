//! k-NN label consistency on feature similarity.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{rank_by_score, DetectionReport};
use crate::error::{Error, Result};
use crate::models::estimate_t_clusterability;
use crate::neighbors::{majority_label, CosineIndex};
use crate::noise::TransitionMatrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimiFeatMode {
    Vote,
    Rank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimiFeatConfig {
    pub k: usize,
    pub mode: SimiFeatMode,
    pub min_similarity: f64,
    pub tii_offset: f64,
    pub rounds: usize,
    /// Fraction of feature dimensions kept per round when `rounds > 1`.
    pub feature_fraction: f64,
    pub seed: u64,
}

impl Default for SimiFeatConfig {
    fn default() -> Self {
        SimiFeatConfig {
            k: 10,
            mode: SimiFeatMode::Vote,
            min_similarity: 0.45,
            tii_offset: 2.5,
            rounds: 1,
            feature_fraction: 0.7,
            seed: rng::DEFAULT_SEED,
        }
    }
}

struct Vote {
    /// 1 - fraction of admissible neighbors agreeing with the observed label.
    score: f64,
    flagged: bool,
    admissible: bool,
}

fn vote_round(features: &Array2<f64>, labels: &[usize], m: usize, cfg: &SimiFeatConfig) -> Vec<Vote> {
    let index = CosineIndex::new(features);
    index
        .all_neighbors(cfg.k)
        .into_iter()
        .enumerate()
        .map(|(i, nn)| {
            let admitted: Vec<usize> = nn
                .iter()
                .filter(|&&(_, s)| s >= cfg.min_similarity)
                .map(|&(j, _)| labels[j])
                .collect();
            if admitted.is_empty() {
                return Vote {
                    score: 0.0,
                    flagged: false,
                    admissible: false,
                };
            }
            let agree = admitted.iter().filter(|&&y| y == labels[i]).count();
            let majority = majority_label(admitted.iter().copied(), m).expect("non-empty");
            Vote {
                score: 1.0 - agree as f64 / admitted.len() as f64,
                flagged: majority != labels[i],
                admissible: true,
            }
        })
        .collect()
}

fn feature_subset(d: usize, fraction: f64, seed: u64, round: usize) -> Vec<usize> {
    let keep = ((fraction * d as f64).round() as usize).clamp(1, d);
    let mut dims: Vec<usize> = (0..d).collect();
    dims.shuffle(&mut rng::stream(seed, "simifeat/features", round as u64));
    dims.truncate(keep);
    dims.sort_unstable();
    dims
}

/// Flag samples whose neighborhood disagrees with their label.
///
/// Vote mode flags when the neighbor majority differs from the observed label
/// (over several feature-subsampled rounds, when more than half of them do).
/// Rank mode sets a per-class budget from an estimated transition matrix and
/// flags the least consistent samples of each class within it.
pub fn detect_simifeat(
    features: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
    cfg: &SimiFeatConfig,
) -> Result<DetectionReport> {
    let n = labels.len();
    if features.nrows() != n {
        return Err(Error::arg("features and labels differ in length"));
    }
    if cfg.k == 0 || n <= cfg.k {
        return Err(Error::arg(format!("need N > k >= 1, got N = {n}, k = {}", cfg.k)));
    }
    if cfg.rounds == 0 {
        return Err(Error::Config("rounds must be at least 1".into()));
    }

    let rounds: Vec<Vec<Vote>> = if cfg.rounds == 1 {
        vec![vote_round(features, labels, num_classes, cfg)]
    } else {
        (0..cfg.rounds)
            .map(|r| {
                let dims = feature_subset(features.ncols(), cfg.feature_fraction, cfg.seed, r);
                vote_round(&features.select(Axis(1), &dims), labels, num_classes, cfg)
            })
            .collect()
    };
    let scores: Vec<f64> = (0..n)
        .map(|i| rounds.iter().map(|r| r[i].score).sum::<f64>() / rounds.len() as f64)
        .collect();
    let unscored = (0..n).filter(|&i| rounds.iter().any(|r| !r[i].admissible)).count();

    let flags: Vec<bool> = match cfg.mode {
        SimiFeatMode::Vote => (0..n)
            .map(|i| 2 * rounds.iter().filter(|r| r[i].flagged).count() > rounds.len())
            .collect(),
        SimiFeatMode::Rank => {
            let t = estimate_t_clusterability(features, labels, num_classes, cfg.k)?;
            let shifted = TransitionMatrix::from_unnormalized(
                t.rows()
                    .iter()
                    .enumerate()
                    .map(|(i, row)| {
                        row.iter()
                            .enumerate()
                            .map(|(j, v)| if i == j { v + cfg.tii_offset } else { *v })
                            .collect()
                    })
                    .collect(),
            )?;
            let mut flags = vec![false; n];
            let order = rank_by_score(&scores);
            for class in 0..num_classes {
                let members = labels.iter().filter(|&&y| y == class).count();
                let budget = ((1.0 - shifted.get(class, class)) * members as f64).round() as usize;
                order
                    .iter()
                    .filter(|&&i| labels[i] == class && rounds.iter().all(|r| r[i].admissible))
                    .take(budget)
                    .for_each(|&i| flags[i] = true);
            }
            flags
        }
    };

    let mut report = DetectionReport::new("simifeat", scores, flags);
    report.metadata.unscored = unscored;
    Ok(report)
}
