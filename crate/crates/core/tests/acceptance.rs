//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use labelbench::data::{make_blobs, read_data_card, simulate_annotators, train_test_split, Dataset, MISSING_LABEL};
use labelbench::detectors::{
    compute_confident_joint, detect_confident_learning, AumStrategy, Artifacts, DetectionReport, DetectorConfig,
    DetectorRegistry,
};
use labelbench::harness::{clean_and_retrain, run_grid, write_results, DatasetSource, ExperimentConfig};
use labelbench::metrics::{classification_metrics, detection_metrics};
use labelbench::models::{
    corrected_loss, corrected_loss_gradient, cross_entropy_loss, cross_val_proba, estimate_t_anchor, train_classifier,
    ClassifierSpec, LossCorrection, ProbMatrix,
};
use labelbench::noise::{
    build_asymmetric_t, build_class_dependent_t, build_uniform_t, inject, NoiseKind, NoiseSpec,
    TransitionMatrix,
};
use labelbench::stats::{
    build_cliques, friedman_test, holm_adjust, render_cd_svg, wilcoxon_signed_rank, Direction, RankTable,
};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 42;
const RATES: [f64; 4] = [0.0, 0.02, 0.1, 0.4];

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Blobs used by the detection criteria.
fn fixture_blobs() -> Dataset {
    make_blobs(2000, 2, 4, 8.0, SEED).unwrap()
}

/// Default detector settings except AUM, which flags by threshold samples.
/// With alpha = 0.01 AUM can flag at most 1% of a set that is 10% corrupted.
fn acceptance_detectors() -> DetectorConfig {
    let mut cfg = DetectorConfig::default();
    cfg.aum.strategy = AumStrategy::ThresholdSamples;
    cfg
}

fn injection_exactness() -> Outcome {
    let base = make_blobs(1000, 4, 4, 3.0, SEED).unwrap();
    let ds = simulate_annotators(&base, 3, 0.3, 0.1, SEED).unwrap();
    let ann = ds.annotator_labels.as_ref().unwrap();
    // Eligible samples per annotator scheme, counted directly.
    let dissent = (0..ds.len())
        .filter(|&i| ann.row(i).iter().any(|&v| v != MISSING_LABEL && v as usize != ds.labels[i]))
        .count();
    let crowd = (0..ds.len())
        .filter(|&i| {
            let mut votes = [0usize; 4];
            ann.row(i).iter().filter(|&&v| v != MISSING_LABEL).for_each(|&v| votes[v as usize] += 1);
            let best = *votes.iter().max().unwrap();
            best > 0 && votes.iter().position(|&c| c == best).unwrap() != ds.labels[i]
        })
        .count();
    let mut confusion = vec![vec![0usize; 4]; 4];
    for (i, &y) in ds.labels.iter().enumerate() {
        confusion[y][(y + 1 + i % 2) % 4] += 1;
        confusion[y][y] += 3;
    }
    let mut checked = 0;
    for kind in NoiseKind::ALL {
        for p in RATES {
            let mut spec = NoiseSpec::new(kind, p, SEED);
            spec.confusion = Some(confusion.clone());
            let inj = inject(&ds, &spec).map_err(|e| format!("{kind} p={p}: {e}"))?;
            let want = (p * 1000.0 + 1e-9).floor() as usize;
            let want = match kind {
                NoiseKind::DissentingLabel | NoiseKind::DissentingWorker => want.min(dissent),
                NoiseKind::CrowdMajority => want.min(crowd),
                _ => want,
            };
            let changed: Vec<usize> = (0..ds.len()).filter(|&i| inj.labels[i] != ds.labels[i]).collect();
            ensure(changed.len() == want, || format!("{kind} p={p}: {} corrupted, want {want}", changed.len()))?;
            ensure(changed == inj.record.corrupted_indices, || format!("{kind} p={p}: record disagrees"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} kind/rate pairs exact (eligible: dissent {dissent}, crowd {crowd})"))
}

fn transition_builders() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for m in 2..=10 {
        for p in [0.0, 0.3, 0.6] {
            let confusion: Vec<Vec<usize>> = (0..m).map(|_| (0..m).map(|_| rng.random_range(0..20)).collect()).collect();
            let confusion: Vec<Vec<usize>> = confusion
                .into_iter()
                .enumerate()
                .map(|(i, mut r)| {
                    r[i] += 1;
                    r
                })
                .collect();
            let ts = [
                build_uniform_t(m, p).unwrap(),
                build_asymmetric_t(m, p).unwrap(),
                build_class_dependent_t(&confusion, p).unwrap(),
            ];
            for t in &ts {
                for row in t.rows() {
                    ensure(row.iter().all(|&v| v >= 0.0), || format!("negative entry m={m} p={p}"))?;
                    worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                }
            }
            for i in 0..m {
                for j in 0..m {
                    if j != i && j != (i + 1) % m {
                        ensure(ts[1].get(i, j) == 0.0, || format!("asymmetric support at ({i},{j}) m={m}"))?;
                    }
                }
            }
        }
    }
    ensure(worst <= 1e-9, || format!("row sum off by {worst:e}"))?;
    Ok(format!("max row-sum error {worst:.1e}"))
}

/// Confident joint by the rules, written out longhand.
fn confident_oracle(p: &[Vec<f64>], labels: &[usize], m: usize) -> (Vec<Vec<usize>>, usize) {
    let mut t = vec![0.0; m];
    for (j, tj) in t.iter_mut().enumerate() {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == j).collect();
        *tj = members.iter().map(|&i| p[i][j]).sum::<f64>() / members.len() as f64;
    }
    let mut joint = vec![vec![0usize; m]; m];
    for (i, &y) in labels.iter().enumerate() {
        let above: Vec<usize> = (0..m).filter(|&j| p[i][j] >= t[j]).collect();
        if above.is_empty() {
            continue;
        }
        let best_value = above.iter().map(|&j| p[i][j]).fold(f64::NEG_INFINITY, f64::max);
        let best = *above.iter().find(|&&j| p[i][j] == best_value).unwrap();
        joint[y][best] += 1;
    }
    let off = (0..m).flat_map(|a| (0..m).map(move |b| (a, b))).filter(|(a, b)| a != b).map(|(a, b)| joint[a][b]).sum();
    (joint, off)
}

fn confident_joint_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for case in 0..100 {
        let m = rng.random_range(2..=4);
        let n = rng.random_range(m..=50);
        let mut labels: Vec<usize> = (0..n).map(|i| if i < m { i } else { rng.random_range(0..m) }).collect();
        labels.reverse();
        let p: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                // Coarse values make ties with thresholds and between classes likely.
                let raw: Vec<f64> = (0..m).map(|_| rng.random_range(1..6) as f64).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let probs = ProbMatrix::new(Array2::from_shape_fn((n, m), |(i, j)| p[i][j])).unwrap();
        let (joint, off) = confident_oracle(&p, &labels, m);
        let got = compute_confident_joint(&probs, &labels).unwrap();
        ensure(got.counts == joint, || format!("case {case}: joint {:?} vs oracle {joint:?}", got.counts))?;
        let flagged = detect_confident_learning(&probs, &labels).unwrap().num_flagged();
        ensure(flagged == off, || format!("case {case}: {flagged} flagged, oracle {off}"))?;
    }
    Ok("100 instances match".into())
}

fn error_f1_by_detector(ds: &Dataset, kind: NoiseKind) -> Vec<(&'static str, f64)> {
    let inj = inject(ds, &NoiseSpec::new(kind, 0.1, SEED)).unwrap();
    let train = ds.with_labels(inj.labels).unwrap();
    let artifacts = Artifacts::new(&train, ClassifierSpec::default(), 5, SEED);
    let cfg = acceptance_detectors();
    let registry = DetectorRegistry::standard();
    registry
        .names()
        .map(|name| {
            let report = registry.get(name).unwrap().detect(&artifacts, &cfg).unwrap();
            let m = detection_metrics(&report.flags, &report.scores, &inj.record.mask).unwrap();
            (name, m.error_f1.unwrap())
        })
        .collect()
}

fn format_scores(scores: &[(&str, f64)]) -> String {
    scores.iter().map(|(n, f)| format!("{n} {f:.3}")).collect::<Vec<_>>().join(", ")
}

fn detection_quality() -> Outcome {
    let scores = error_f1_by_detector(&fixture_blobs(), NoiseKind::Uniform);
    for &(name, f1) in &scores {
        let floor = match name {
            "simifeat" | "confident" => 0.80,
            _ => 0.55,
        };
        ensure(f1 >= floor, || format!("{name} error F1 {f1:.3} < {floor}"))?;
    }
    Ok(format_scores(&scores))
}

fn noise_difficulty() -> Outcome {
    let ds = fixture_blobs();
    let mean = |s: &[(&str, f64)]| s.iter().map(|p| p.1).sum::<f64>() / s.len() as f64;
    let uniform = mean(&error_f1_by_detector(&ds, NoiseKind::Uniform));
    let instance = mean(&error_f1_by_detector(&ds, NoiseKind::InstanceDependent));
    ensure(uniform >= instance - 0.02, || format!("uniform {uniform:.3} < instance {instance:.3} - 0.02"))?;
    Ok(format!("uniform {uniform:.3}, instance-dependent {instance:.3}"))
}

fn downstream_robustness() -> Outcome {
    let split = train_test_split(&fixture_blobs(), 0.2, SEED).unwrap();
    let spec = ClassifierSpec::default();
    let non = |train: &Dataset| {
        let (model, _) = train_classifier(train, &spec).unwrap();
        classification_metrics(&model.predict_proba(&split.test.features).unwrap(), &split.test.labels)
            .unwrap()
            .weighted_f1
    };
    let clean = non(&split.train);
    let inj = inject(&split.train, &NoiseSpec::new(NoiseKind::Uniform, 0.1, SEED)).unwrap();
    let noisy_train = split.train.with_labels(inj.labels.clone()).unwrap();
    let noisy = non(&noisy_train);
    let oracle = DetectionReport {
        method: "oracle".into(),
        scores: inj.record.mask.iter().map(|&m| f64::from(u8::from(m))).collect(),
        flags: inj.record.mask.clone(),
        metadata: Default::default(),
    };
    let cleaned = clean_and_retrain(&noisy_train, &oracle, &spec, &split.test).unwrap().weighted_f1;
    ensure((clean - noisy).abs() <= 0.10, || format!("NON p=0 {clean:.3} vs p=0.1 {noisy:.3}"))?;
    ensure(cleaned >= noisy, || format!("oracle cleaning {cleaned:.3} < NON {noisy:.3}"))?;
    Ok(format!("NON p=0 {clean:.3}, p=0.1 {noisy:.3}, oracle-cleaned {cleaned:.3}"))
}

/// Tie-averaged rank by counting, independent of the library's sort.
fn count_rank(values: &[f64], i: usize) -> f64 {
    let less = values.iter().filter(|&&v| v < values[i]).count() as f64;
    let equal = values.iter().filter(|&&v| v == values[i]).count() as f64;
    less + (equal + 1.0) / 2.0
}

fn wilcoxon_enumeration(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = (0..n).map(|i| count_rank(&abs, i)).collect();
    let observed: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        let w: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w <= observed + 1e-9 {
            le += 1;
        }
        if w >= observed - 1e-9 {
            ge += 1;
        }
    }
    let total = (1u64 << n) as f64;
    (2.0 * (le.min(ge) as f64) / total).min(1.0)
}

fn statistics() -> Outcome {
    let table = RankTable::new(
        vec!["A".into(), "B".into(), "C".into()],
        (0..4).map(|i| format!("d{i}")).collect(),
        vec![vec![0.9, 0.8, 0.7]; 4],
        Direction::HigherBetter,
    )
    .unwrap();
    let f = friedman_test(&table).unwrap();
    ensure((f.statistic - 8.0).abs() < 1e-12, || format!("Friedman statistic {}", f.statistic))?;
    ensure((f.p_value - 0.0183).abs() <= 1e-3, || format!("Friedman p {}", f.p_value))?;

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n in 1..=12 {
        for _ in 0..20 {
            // Rounded values give zero differences and tied magnitudes.
            let a: Vec<f64> = (0..n).map(|_| (rng.random_range(-3.0..3.0f64) * 2.0).round() / 2.0).collect();
            let b: Vec<f64> = (0..n).map(|_| (rng.random_range(-3.0..3.0f64) * 2.0).round() / 2.0).collect();
            let got = wilcoxon_signed_rank(&a, &b).unwrap().p_value;
            worst = worst.max((got - wilcoxon_enumeration(&a, &b)).abs());
            cases += 1;
        }
    }
    ensure(worst <= 1e-12, || format!("Wilcoxon off enumeration by {worst:e}"))?;

    for case in 0..1000 {
        let len = rng.random_range(1..=12);
        let raw: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
        let adj = holm_adjust(&raw).unwrap();
        ensure(adj.iter().zip(&raw).all(|(a, r)| a >= r && *a <= 1.0), || format!("Holm case {case} below raw"))?;
        let mut order: Vec<usize> = (0..len).collect();
        order.sort_by(|&x, &y| raw[x].total_cmp(&raw[y]));
        ensure(order.windows(2).all(|w| adj[w[0]] <= adj[w[1]]), || format!("Holm case {case} not monotone"))?;
    }
    Ok(format!(
        "chi2_F {:.3} p {:.4}; {cases} Wilcoxon cases, max diff {worst:.1e}; 1000 Holm vectors",
        f.statistic, f.p_value
    ))
}

fn clique_fixture() -> Outcome {
    // A and B trade places; C is last on every dataset.
    let values: Vec<Vec<f64>> = (0..10)
        .map(|i| {
            let swing = 0.01 * (i + 1) as f64 * if i % 2 == 0 { 1.0 } else { -1.0 };
            vec![0.8 + swing, 0.8 - swing, 0.5 - 0.01 * i as f64]
        })
        .collect();
    let table = RankTable::new(
        vec!["A".into(), "B".into(), "C".into()],
        (0..10).map(|i| format!("d{i}")).collect(),
        values,
        Direction::HigherBetter,
    )
    .unwrap();
    let diagram = build_cliques(&table, 0.05).unwrap();
    let mut cliques: Vec<Vec<String>> = diagram.clique_names();
    cliques.iter_mut().for_each(|c| c.sort());
    cliques.sort();
    let want = vec![vec!["A".to_string(), "B".to_string()], vec!["C".to_string()]];
    ensure(cliques == want, || format!("cliques {cliques:?}"))?;
    let svg = render_cd_svg(&diagram);
    roxmltree::Document::parse(&svg).map_err(|e| format!("SVG does not parse: {e}"))?;
    let again = render_cd_svg(&build_cliques(&table, 0.05).unwrap());
    ensure(svg == again, || "SVG differs between runs".into())?;
    Ok(format!("cliques {cliques:?}, {} byte SVG", svg.len()))
}

fn loss_corrections() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_eq: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    for case in 0..200 {
        let m = 2 + case % 5;
        let z: Array1<f64> = (0..m).map(|_| rng.random_range(-4.0..4.0)).collect();
        let y = rng.random_range(0..m);
        let identity = TransitionMatrix::identity(m).unwrap();
        let ce = cross_entropy_loss(z.view(), y);
        for mode in [LossCorrection::Forward, LossCorrection::Backward] {
            worst_eq = worst_eq.max((corrected_loss(z.view(), y, &identity, mode).unwrap() - ce).abs());
        }
        let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..m).map(|_| rng.random_range(0.05..1.0)).collect()).collect();
        let t = TransitionMatrix::from_unnormalized(rows).unwrap();
        let grad = corrected_loss_gradient(z.view(), y, &t).unwrap();
        let h = 1e-6;
        for k in 0..m {
            let mut up = z.clone();
            up[k] += h;
            let mut down = z.clone();
            down[k] -= h;
            let fd = (corrected_loss(up.view(), y, &t, LossCorrection::Forward).unwrap()
                - corrected_loss(down.view(), y, &t, LossCorrection::Forward).unwrap())
                / (2.0 * h);
            worst_grad = worst_grad.max((grad[k] - fd).abs() / fd.abs().max(1e-3));
        }
    }
    ensure(worst_eq <= 1e-12, || format!("T = I differs from CE by {worst_eq:e}"))?;
    ensure(worst_grad <= 1e-4, || format!("gradient relative error {worst_grad:e}"))?;
    Ok(format!("T=I max diff {worst_eq:.1e}, gradient max rel err {worst_grad:.1e}"))
}

fn anchor_recovery() -> Outcome {
    let ds = fixture_blobs();
    let inj = inject(&ds, &NoiseSpec::new(NoiseKind::Uniform, 0.2, SEED)).unwrap();
    let train = ds.with_labels(inj.labels).unwrap();
    let probs = cross_val_proba(&train, &ClassifierSpec::default(), 5, SEED).unwrap();
    let estimate = estimate_t_anchor(&probs, &train.labels).unwrap();
    let err = estimate.max_abs_diff(&build_uniform_t(4, 0.2).unwrap());
    ensure(err <= 0.1, || format!("max abs error {err:.4}"))?;
    Ok(format!("max abs error {err:.4}"))
}

fn end_to_end_grid() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig {
        datasets: vec![DatasetSource::Blobs {
            name: "blobs".into(),
            n: 1000,
            d: 2,
            classes: 4,
            separation: 8.0,
            annotators: None,
        }],
        noise: vec![
            NoiseKind::Uniform,
            NoiseKind::Asymmetric,
            NoiseKind::ClassDependent,
            NoiseKind::InstanceDependent,
        ],
        rates: vec![0.02, 0.1, 0.4],
        detectors: vec!["aum".into(), "confident".into(), "simifeat".into(), "cincer".into()],
        classifiers: vec![ClassifierSpec::default()],
        seeds: vec![SEED],
        folds: 5,
        test_fraction: 0.2,
        propensity_std: 0.1,
        detector_config: acceptance_detectors(),
        output_dir: Some(dir.path().to_path_buf()),
        workers: None,
    };
    let first = run_grid(&cfg).map_err(|e| e.to_string())?;
    let errors: Vec<String> = first.errors().map(|r| format!("{}/{}: {:?}", r.noise, r.detector, r.error)).collect();
    ensure(errors.is_empty(), || format!("cell errors: {errors:?}"))?;
    ensure(first.cards.len() == 12, || format!("{} data cards", first.cards.len()))?;
    for path in &first.cards {
        let card = read_data_card(path).map_err(|e| e.to_string())?;
        ensure(card.methods.len() == 4, || format!("{} has {} methods", path.display(), card.methods.len()))?;
    }
    let mut a = Vec::new();
    write_results(&first, &mut a).unwrap();
    let mut b = Vec::new();
    write_results(&run_grid(&cfg).map_err(|e| e.to_string())?, &mut b).unwrap();
    ensure(a == b, || "results CSV differs on rerun".into())?;
    Ok(format!("{} rows, 12 cards, {} byte CSV identical on rerun", first.rows.len(), a.len()))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("injection exactness", Duration::from_secs(1), injection_exactness),
        ("transition builders", Duration::from_secs(1), transition_builders),
        ("confident joint oracle", Duration::from_secs(5), confident_joint_oracle),
        ("detection quality", Duration::from_secs(60), detection_quality),
        ("noise-difficulty ordering", Duration::from_secs(180), noise_difficulty),
        ("downstream robustness", Duration::from_secs(120), downstream_robustness),
        ("statistics", Duration::from_secs(10), statistics),
        ("clique fixture and CD SVG", Duration::from_secs(1), clique_fixture),
        ("loss corrections", Duration::from_secs(5), loss_corrections),
        ("anchor T recovery", Duration::from_secs(60), anchor_recovery),
        ("end-to-end grid", Duration::from_secs(600), end_to_end_grid),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; over budget {budget:?}"))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{elapsed:.2?}]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{elapsed:.2?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
