use labelbench::data::{make_blobs, read_card, read_dataset, simulate_annotators, write_card, write_dataset, CsvSchema, DataCard, MethodColumns};
use labelbench::metrics::{classification_metrics, detection_metrics};
use labelbench::models::ProbMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// AUC as the fraction of (positive, negative) pairs ordered correctly.
fn pairwise_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

/// AP from the precision-recall pairs at every distinct threshold.
fn threshold_ap(scores: &[f64], positive: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let selected: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = selected.iter().filter(|&&i| positive[i]).count() as f64;
        let recall = tp / n_pos;
        ap += (recall - prev_recall) * tp / selected.len() as f64;
        prev_recall = recall;
    }
    ap
}

#[allow(clippy::needless_range_loop)]
fn confusion_f1(preds: &[usize], labels: &[usize], m: usize) -> (f64, f64) {
    let mut cm = vec![vec![0usize; m]; m];
    for (&p, &y) in preds.iter().zip(labels) {
        cm[y][p] += 1;
    }
    let n = labels.len() as f64;
    let mut weighted = 0.0;
    for c in 0..m {
        let support: usize = cm[c].iter().sum();
        let predicted: usize = (0..m).map(|r| cm[r][c]).sum();
        let tp = cm[c][c] as f64;
        let f1 = if support + predicted == 0 { 0.0 } else { 2.0 * tp / (support + predicted) as f64 };
        weighted += support as f64 / n * f1;
    }
    let accuracy = (0..m).map(|c| cm[c][c]).sum::<usize>() as f64 / n;
    (weighted, accuracy)
}

#[test]
fn classification_metrics_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for m in [2usize, 3, 5] {
        let n = 50;
        let mut probs = Array2::zeros((n, m));
        let mut labels = Vec::new();
        for i in 0..n {
            let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            for c in 0..m {
                probs[[i, c]] = raw[c] / total;
            }
            labels.push(if i < m { i } else { rng.random_range(0..m) });
        }
        let report = classification_metrics(&ProbMatrix::new(probs.clone()).unwrap(), &labels).unwrap();

        let preds: Vec<usize> = (0..n)
            .map(|i| (0..m).fold(0, |best, c| if probs[[i, c]] > probs[[i, best]] { c } else { best }))
            .collect();
        let (wf1, acc) = confusion_f1(&preds, &labels, m);
        assert!((report.weighted_f1 - wf1).abs() < 1e-12, "m={m}");
        assert!((report.accuracy - acc).abs() < 1e-12);

        let (roc, ap) = if m == 2 {
            let s: Vec<f64> = probs.column(1).to_vec();
            let pos: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
            (pairwise_auc(&s, &pos), threshold_ap(&s, &pos))
        } else {
            let (mut roc, mut ap) = (0.0, 0.0);
            for c in 0..m {
                let s: Vec<f64> = probs.column(c).to_vec();
                let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
                let w = pos.iter().filter(|&&p| p).count() as f64 / n as f64;
                roc += w * pairwise_auc(&s, &pos);
                ap += w * threshold_ap(&s, &pos);
            }
            (roc, ap)
        };
        assert!((report.roc_auc.unwrap() - roc).abs() < 1e-12, "m={m}");
        assert!((report.pr_auc.unwrap() - ap).abs() < 1e-12, "m={m}");
    }
}

#[test]
fn curve_metrics_with_ties() {
    let scores = [0.9, 0.5, 0.5, 0.5, 0.1, 0.1, 0.7, 0.7];
    let positive = [true, false, true, true, false, true, false, false];
    let flags = [true, false, true, false, false, false, true, true];
    let report = detection_metrics(&flags, &scores, &positive).unwrap();
    assert!((report.roc_auc.unwrap() - pairwise_auc(&scores, &positive)).abs() < 1e-12);
    assert!((report.pr_auc.unwrap() - threshold_ap(&scores, &positive)).abs() < 1e-12);
    // Flagged: 0,2,6,7; corrupted: 0,2,3,5.
    assert_eq!(report.error_precision, Some(0.5));
    assert_eq!(report.error_recall, Some(0.5));
    assert_eq!(report.error_f1, Some(0.5));
}

#[test]
fn data_card_round_trip() {
    let card = DataCard {
        dataset: "blobs".into(),
        noise_type: "uniform".into(),
        noise_rate: 0.1,
        seed: 7,
        ids: vec![3, 1, 4],
        original_labels: vec![0, 1, 2],
        corrupted_labels: vec![0, 2, 2],
        methods: vec![
            MethodColumns { method: "aum".into(), flags: vec![false, true, false], scores: vec![-0.25, 1.0 / 3.0, 1e-300] },
            MethodColumns { method: "cincer".into(), flags: vec![true, true, false], scores: vec![0.1, 0.2, -7.5] },
        ],
    };
    let mut buf = Vec::new();
    write_card(&card, &mut buf).unwrap();
    assert_eq!(read_card(buf.as_slice()).unwrap(), card);
}

#[test]
fn dataset_csv_round_trip() {
    let ds = make_blobs(40, 3, 3, 2.0, 5).unwrap();
    let ds = simulate_annotators(&ds, 4, 0.3, 0.2, 6).unwrap();
    let mut buf = Vec::new();
    write_dataset(&ds, &mut buf).unwrap();
    let back = read_dataset(buf.as_slice(), &CsvSchema { num_classes: Some(3), ..CsvSchema::default() }).unwrap();
    assert_eq!(back, ds);
}
