//! Brute-force cosine k-NN on standardized features.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::models::Standardizer;

/// Unit-normalized standardized feature rows. All-zero rows stay zero and
/// have similarity 0 with everything.
#[derive(Debug, Clone)]
pub struct CosineIndex {
    standardizer: Standardizer,
    rows: Array2<f64>,
}

/// Higher similarity first, then lower index.
fn by_similarity(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

fn normalize(mut rows: Array2<f64>) -> Array2<f64> {
    for mut row in rows.outer_iter_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    rows
}

impl CosineIndex {
    pub fn new(features: &Array2<f64>) -> Self {
        let standardizer = Standardizer::fit(features);
        let rows = normalize(standardizer.transform(features));
        CosineIndex { standardizer, rows }
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        self.rows.row(a).dot(&self.rows.row(b))
    }

    /// Similarity between an arbitrary raw feature row and indexed row `b`.
    pub fn similarity_to(&self, query: ArrayView1<f64>, b: usize) -> f64 {
        let mut q = self.standardizer.transform_row(query);
        let norm = q.dot(&q).sqrt();
        if norm > 0.0 {
            q /= norm;
        }
        q.dot(&self.rows.row(b))
    }

    /// The `k` most similar other rows to `i`, most similar first.
    pub fn neighbors(&self, i: usize, k: usize) -> Vec<(usize, f64)> {
        let query = self.rows.row(i);
        let mut sims: Vec<(usize, f64)> = (0..self.len())
            .filter(|&j| j != i)
            .map(|j| (j, query.dot(&self.rows.row(j))))
            .collect();
        let k = k.min(sims.len());
        if k == 0 {
            return Vec::new();
        }
        if k < sims.len() {
            sims.select_nth_unstable_by(k - 1, by_similarity);
            sims.truncate(k);
        }
        sims.sort_by(by_similarity);
        sims
    }

    pub fn all_neighbors(&self, k: usize) -> Vec<Vec<(usize, f64)>> {
        (0..self.len()).into_par_iter().map(|i| self.neighbors(i, k)).collect()
    }
}

/// Majority label, ties toward the lower class.
pub fn majority_label(labels: impl IntoIterator<Item = usize>, m: usize) -> Option<usize> {
    let mut votes = vec![0usize; m];
    let mut any = false;
    for y in labels {
        votes[y] += 1;
        any = true;
    }
    if !any {
        return None;
    }
    let best = *votes.iter().max()?;
    votes.iter().position(|&v| v == best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn neighbors_are_sorted_and_exclude_self() {
        let x = array![[1.0, 0.0], [0.9, 0.1], [-1.0, 0.0], [0.0, 1.0], [1.0, 0.05]];
        let idx = CosineIndex::new(&x);
        let nn = idx.neighbors(0, 2);
        assert_eq!(nn.len(), 2);
        assert!(nn.iter().all(|(j, _)| *j != 0));
        assert!(nn[0].1 >= nn[1].1);
    }

    #[test]
    fn similarity_ties_go_to_lower_index() {
        let x = array![[0.0], [0.1], [0.2], [5.0], [5.1], [5.2]];
        let idx = CosineIndex::new(&x);
        assert_eq!(idx.neighbors(2, 2).iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(idx.neighbors(0, 2).iter().map(|p| p.0).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn majority_ties() {
        assert_eq!(majority_label([2, 1, 1, 2], 3), Some(1));
        assert_eq!(majority_label([], 3), None);
    }
}
