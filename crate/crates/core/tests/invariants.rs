use labelbench::data::make_blobs;
use labelbench::metrics::classification_metrics;
use labelbench::models::ProbMatrix;
use labelbench::noise::{build_asymmetric_t, build_class_dependent_t, build_uniform_t, corruption_count, inject, NoiseKind, NoiseSpec, TransitionMatrix};
use labelbench::stats::{average_ranks, holm_adjust};
use ndarray::Array2;
use proptest::prelude::*;

fn assert_row_stochastic(t: &TransitionMatrix) {
    for row in t.rows() {
        assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)), "{row:?}");
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{row:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transition_builders_are_row_stochastic(m in 2usize..9, p in 0.0f64..=1.0) {
        assert_row_stochastic(&build_uniform_t(m, p).unwrap());
        assert_row_stochastic(&build_asymmetric_t(m, p).unwrap());
    }

    #[test]
    fn class_dependent_builder_is_row_stochastic(
        m in 2usize..6,
        p in 0.0f64..=1.0,
        counts in prop::collection::vec(0usize..20, 36),
    ) {
        let confusion: Vec<Vec<usize>> = (0..m)
            .map(|i| (0..m).map(|j| counts[i * 6 + j] + usize::from(i == j)).collect())
            .collect();
        let t = build_class_dependent_t(&confusion, p).unwrap();
        assert_row_stochastic(&t);
        for i in 0..m {
            prop_assert!((t.get(i, i) - (1.0 - p)).abs() < 1e-12);
        }
    }

    #[test]
    fn injection_hits_exact_count_and_is_reproducible(
        n in 20usize..300,
        m in 2usize..6,
        p in 0.0f64..=0.6,
        seed in any::<u64>(),
        kind in prop::sample::select(vec![NoiseKind::Uniform, NoiseKind::Asymmetric, NoiseKind::InstanceDependent]),
    ) {
        let ds = make_blobs(n, 2, m, 3.0, seed).unwrap();
        let spec = NoiseSpec::new(kind, p, seed);
        let a = inject(&ds, &spec).unwrap();
        prop_assert_eq!(a.record.achieved(), corruption_count(p, n));
        prop_assert_eq!(a.record.achieved(), (p * n as f64 + 1e-9).floor() as usize);
        for i in 0..n {
            prop_assert_eq!(a.record.mask[i], a.labels[i] != ds.labels[i]);
        }
        let b = inject(&ds, &spec).unwrap();
        prop_assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn metrics_ignore_sample_order(
        rows in prop::collection::vec((prop::collection::vec(0.01f64..1.0, 3), 0usize..3), 6..60),
        shift in 1usize..59,
    ) {
        let n = rows.len();
        let make = |order: &[usize]| {
            let mut probs = Array2::zeros((n, 3));
            let mut labels = Vec::with_capacity(n);
            for (r, &i) in order.iter().enumerate() {
                let total: f64 = rows[i].0.iter().sum();
                for c in 0..3 {
                    probs[[r, c]] = rows[i].0[c] / total;
                }
                labels.push(rows[i].1);
            }
            classification_metrics(&ProbMatrix::new(probs).unwrap(), &labels).unwrap()
        };
        let identity: Vec<usize> = (0..n).collect();
        let rotated: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let (a, b) = (make(&identity), make(&rotated));
        for (x, y) in a.values().iter().zip(b.values()) {
            match (x, y) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(*x, y),
            }
        }

        // A support-weighted mean lies within the range of what it averages.
        let present: Vec<f64> = a.per_class.iter().filter(|c| c.support > 0).map(|c| c.f1).collect();
        let lo = present.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = present.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a.weighted_f1 >= lo - 1e-12 && a.weighted_f1 <= hi + 1e-12);
    }

    #[test]
    fn holm_is_monotone_and_bounded(ps in prop::collection::vec(0.0f64..=1.0, 1..30)) {
        let adj = holm_adjust(&ps).unwrap();
        let mut order: Vec<usize> = (0..ps.len()).collect();
        order.sort_by(|&a, &b| ps[a].total_cmp(&ps[b]));
        for w in order.windows(2) {
            prop_assert!(adj[w[0]] <= adj[w[1]]);
        }
        for (p, a) in ps.iter().zip(&adj) {
            prop_assert!(a >= p && *a <= 1.0);
        }
    }

    #[test]
    fn average_ranks_sum_is_fixed(values in prop::collection::vec(0u8..5, 1..20)) {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        let k = values.len() as f64;
        let ranks = average_ranks(&values);
        prop_assert!((ranks.iter().sum::<f64>() - k * (k + 1.0) / 2.0).abs() < 1e-9);
    }
}
