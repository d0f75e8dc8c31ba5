//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use otfcl::classifier::LinearHead;
use otfcl::dataio::{generate_synthetic, Checkpoint, Dataset, SyntheticSpec};
use otfcl::ican::{self, GeneratorKind};
use otfcl::isay::{self, ImportanceVector};
use otfcl::protocol::{self, RunConfig, ScheduleKind};
use otfcl::stats::StatisticsStore;
use otfcl::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

// ---------------------------------------------------------------------------
// Statistics oracle

/// Two-pass population moments over the retained samples.
fn brute_moments(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for s in samples {
        for i in 0..d {
            mean[i] += s[i];
            sq[i] += s[i] * s[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    sq.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for s in samples {
        for i in 0..d {
            var[i] += (s[i] - mean[i]).powi(2);
        }
    }
    let std = var.iter().map(|v| (v / n).sqrt()).collect();
    (mean, sq, std)
}

/// Welford recursion, used as a second, independent STD oracle.
fn welford_std(samples: &[Vec<f64>]) -> Vec<f64> {
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for (k, s) in samples.iter().enumerate() {
        let n = (k + 1) as f64;
        for i in 0..d {
            let delta = s[i] - mean[i];
            mean[i] += delta / n;
            m2[i] += delta * (s[i] - mean[i]);
        }
    }
    m2.iter().map(|m| (m / samples.len() as f64).sqrt()).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn statistics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5747);
    let mut worst: f64 = 0.0;
    for stream in 0..100 {
        let dim = rng.random_range(1..=64);
        let classes = rng.random_range(1..=10u32);
        let len = rng.random_range(1..=10_000usize);
        let centers: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..dim).map(|_| 3.0 * normal(&mut rng)).collect())
            .collect();
        let spreads: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..dim).map(|_| rng.random_range(0.5..2.0)).collect())
            .collect();
        let mut store = StatisticsStore::new();
        let mut kept: HashMap<Label, Vec<Vec<f64>>> = HashMap::new();
        for _ in 0..len {
            let c = rng.random_range(0..classes);
            let f: Vec<f64> = (0..dim)
                .map(|i| centers[c as usize][i] + spreads[c as usize][i] * normal(&mut rng))
                .collect();
            store.observe(c, &f).map_err(|e| e.to_string())?;
            kept.entry(c).or_default().push(f);
        }
        for (c, samples) in &kept {
            let (mean, sq, std) = brute_moments(samples);
            let wstd = welford_std(samples);
            let s = store.get(*c).map_err(|e| e.to_string())?;
            let got_std = store.std_of(*c).map_err(|e| e.to_string())?;
            ensure(s.count as usize == samples.len(), || {
                format!("stream {stream}: count mismatch for class {c}")
            })?;
            for i in 0..dim {
                for (a, b) in [
                    (s.prototype[i], mean[i]),
                    (s.sq_expectation[i], sq[i]),
                    (got_std[i], std[i]),
                    (got_std[i], wstd[i]),
                ] {
                    worst = worst.max(rel_err(a, b));
                }
            }
        }
    }
    ensure(worst <= 1e-6, || format!("worst relative error {worst:.3e} > 1e-6"))?;
    Ok(format!("100 streams, worst relative error {worst:.2e} (tol 1e-6)"))
}

// ---------------------------------------------------------------------------
// Gradient check

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let dim = rng.random_range(1..=16);
        let n = rng.random_range(2..=8);
        let labels: Vec<Label> = (0..n as Label).collect();
        let weights: Vec<f64> = (0..n * dim).map(|_| normal(&mut rng)).collect();
        let feature: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
        let label = rng.random_range(0..n as Label);
        let head = LinearHead::from_parts(dim, labels.clone(), weights.clone()).unwrap();
        let (_, grad) = head.ce_loss_and_grad(&feature, label).unwrap();

        let mut numeric = vec![0.0; weights.len()];
        for j in 0..weights.len() {
            let mut plus = weights.clone();
            let mut minus = weights.clone();
            plus[j] += h;
            minus[j] -= h;
            let lp = LinearHead::from_parts(dim, labels.clone(), plus)
                .unwrap()
                .ce_loss_and_grad(&feature, label)
                .unwrap()
                .0;
            let lm = LinearHead::from_parts(dim, labels.clone(), minus)
                .unwrap()
                .ce_loss_and_grad(&feature, label)
                .unwrap()
                .0;
            numeric[j] = (lp - lm) / (2.0 * h);
        }
        let diff: f64 = grad
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm_a = grad.iter().map(|a| a * a).sum::<f64>().sqrt();
        let norm_n = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = diff / norm_a.max(norm_n).max(1e-12);
        ensure(rel <= 1e-4, || format!("case {case}: relative error {rel:.3e}"))?;
        worst = worst.max(rel);
    }
    Ok(format!("200 cases, worst relative error {worst:.2e} (tol 1e-4)"))
}

// ---------------------------------------------------------------------------
// ICAN identity

fn random_store(rng: &mut ChaCha8Rng, classes: u32, dim: usize) -> StatisticsStore {
    let mut store = StatisticsStore::new();
    for c in 0..classes {
        let center: Vec<f64> = (0..dim).map(|_| 5.0 * normal(rng)).collect();
        let spread: Vec<f64> = (0..dim).map(|_| rng.random_range(0.1..3.0)).collect();
        let n = rng.random_range(2..40);
        for _ in 0..n {
            let f: Vec<f64> = (0..dim)
                .map(|i| center[i] + spread[i] * normal(rng))
                .collect();
            store.observe(c, &f).unwrap();
        }
    }
    store
}

fn ican_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1CA2);
    let alpha = ican::DEFAULT_ALPHA;
    let mut worst: f64 = 0.0;
    let mut generations = 0;
    while generations < 1000 {
        let dim = rng.random_range(1..=32);
        let classes = rng.random_range(2..6);
        let store = random_store(&mut rng, classes, dim);
        for _ in 0..50 {
            let classes = store.seen_classes();
            let y = classes[rng.random_range(0..classes.len())];
            let target = ican::sample_old_class(&store, y, &mut rng).unwrap();
            let f: Vec<f64> = (0..dim).map(|_| 5.0 * normal(&mut rng)).collect();
            let z = ican::generate_analogical(&store, &f, y, target, alpha).unwrap();
            let q = ican::relative_distribution(&f, store.prototype(y).unwrap()).unwrap();
            let ry = store.std_of(y).unwrap();
            let rt = store.std_of(target).unwrap();
            let pt = store.prototype(target).unwrap();
            for i in 0..dim {
                let lhs = (z.vector[i] - pt[i]) * (ry[i] + alpha);
                let rhs = q[i] * rt[i];
                // Scale of the quantities whose rounding enters each side.
                let scale = rhs.abs() + pt[i].abs() * (ry[i] + alpha);
                worst = worst.max((lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE));
            }
            let exact = ican::generate_analogical(
                &store,
                &store.prototype(y).unwrap().to_vec(),
                y,
                target,
                alpha,
            )
            .unwrap();
            ensure(exact.vector == pt, || {
                "f = p^y did not map exactly onto the target prototype".into()
            })?;
            generations += 1;
        }
    }
    ensure(worst <= 1e-9, || format!("worst relative residual {worst:.3e}"))?;
    Ok(format!(
        "{generations} generations, worst relative residual {worst:.2e} (tol 1e-9); prototype maps exactly"
    ))
}

// ---------------------------------------------------------------------------
// ISAY invariants

fn isay_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x15A7);
    let mut rows = 0;
    for _ in 0..50 {
        let dim = rng.random_range(1..=64);
        let classes = rng.random_range(1..8);
        let store = random_store(&mut rng, classes, dim);
        let u = isay::significance_matrix(&store).map_err(|e| e.to_string())?;
        for (label, row) in u.labels.iter().zip(&u.rows) {
            let r = store.std_of(*label).unwrap();
            let sum: f64 = row.iter().sum();
            ensure((sum - 1.0).abs() <= 1e-9, || format!("row sum {sum}"))?;
            ensure(row.iter().all(|v| *v > 0.0), || "non-positive weight".into())?;
            for i in 0..dim {
                for j in 0..dim {
                    ensure((row[i] > row[j]) == (r[i] < r[j]), || {
                        format!("order reversal broken at ({i}, {j})")
                    })?;
                }
            }
            rows += 1;
        }
    }

    for _ in 0..1000 {
        let n = rng.random_range(1..=20);
        let labels: Vec<Label> = (0..n as Label).collect();
        let gamma: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
        let tau: ImportanceVector = isay::importance_vector(&labels, &gamma).unwrap();
        let argmin = (0..n)
            .min_by(|&a, &b| gamma[a].total_cmp(&gamma[b]))
            .unwrap();
        let argmax = otfcl::classifier::argmax(&tau.values);
        ensure(argmax == argmin, || format!("argmax tau {argmax} != argmin gamma {argmin}"))?;
    }

    for d in 1..=64usize {
        let c = rng.random_range(0.0..5.0);
        let row = isay::significance_row(&vec![c; d]);
        ensure(row.iter().all(|v| *v == 1.0 / d as f64), || {
            format!("uniform row of length {d} is not exactly 1/D")
        })?;
    }
    Ok(format!(
        "{rows} significance rows checked; 1000 importance vectors; uniform rows exact for D in 1..=64"
    ))
}

// ---------------------------------------------------------------------------
// End-to-end synthetic runs

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn reference_config(seed: u64) -> RunConfig {
    RunConfig {
        schedule: ScheduleKind::Step { step: 1 },
        batch_size: 50,
        seed,
        ..RunConfig::default()
    }
}

fn mean_last_accuracy(adjust: impl Fn(&mut RunConfig)) -> Result<f64, String> {
    let mut total = 0.0;
    for seed in SEEDS {
        let spec = SyntheticSpec {
            seed,
            ..SyntheticSpec::default()
        };
        let (train, test) = generate_synthetic(&spec).map_err(|e| e.to_string())?;
        let mut cfg = reference_config(seed);
        adjust(&mut cfg);
        let out = protocol::run(&cfg, &Dataset::from(&train), &Dataset::from(&test))
            .map_err(|e| e.to_string())?;
        total += out.report.last_accuracy;
    }
    Ok(total / SEEDS.len() as f64)
}

fn ablation_ordering() -> Outcome {
    let spec = SyntheticSpec::default();
    ensure(
        spec.class_count == 20 && spec.dim == 64 && spec.train_per_class == 200 && spec.test_per_class == 50,
        || "reference synthetic spec drifted".into(),
    )?;
    let cfg = reference_config(0);
    ensure(
        cfg.optimizer.learning_rate == 0.02 && cfg.optimizer.weight_decay == 5e-5 && cfg.optimizer.beta == 2.0,
        || "reference optimizer drifted".into(),
    )?;

    let naive = mean_last_accuracy(|c| {
        c.ican_enabled = false;
        c.isay_enabled = false;
    })?;
    let ican_only = mean_last_accuracy(|c| c.isay_enabled = false)?;
    let isay_only = mean_last_accuracy(|c| c.ican_enabled = false)?;
    let full = mean_last_accuracy(|_| {})?;
    let summary = format!(
        "naive {naive:.2}, ICAN-only {ican_only:.2}, ISAY-only {isay_only:.2}, full {full:.2}"
    );
    ensure(full >= naive + 10.0, || format!("full - naive < 10 points ({summary})"))?;
    ensure(ican_only > naive, || format!("ICAN-only <= naive ({summary})"))?;
    ensure(isay_only > naive, || format!("ISAY-only <= naive ({summary})"))?;
    Ok(summary)
}

fn generator_comparison() -> Outcome {
    // ISAY off so the comparison isolates the rehearsal generator.
    let analogical = mean_last_accuracy(|c| {
        c.isay_enabled = false;
        c.ican.generator = GeneratorKind::Analogical;
    })?;
    let gaussian = mean_last_accuracy(|c| {
        c.isay_enabled = false;
        c.ican.generator = GeneratorKind::GaussianNoise;
    })?;
    let summary = format!("analogical {analogical:.2}, gaussian noise {gaussian:.2}");
    ensure(analogical >= gaussian, || summary.clone())?;
    Ok(summary)
}

fn contains_bytes(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

fn non_exemplar_audit() -> Outcome {
    let spec = SyntheticSpec {
        class_count: 6,
        dim: 16,
        train_per_class: 60,
        test_per_class: 10,
        seed: 21,
        ..SyntheticSpec::default()
    };
    let (train, test) = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let train = Dataset::from(&train);
    let mut checked = 0;
    for cfg in [
        RunConfig {
            batch_size: 25,
            ..RunConfig::default()
        },
        RunConfig {
            batch_size: 25,
            schedule: ScheduleKind::Gaussian {
                sigma: 0.2,
                eval_every: 3,
            },
            ..RunConfig::default()
        },
        RunConfig {
            batch_size: 25,
            epochs: 3,
            ..RunConfig::offline()
        },
    ] {
        let out = protocol::run(&cfg, &train, &Dataset::from(&test)).map_err(|e| e.to_string())?;
        let bytes = out.checkpoint().to_bytes().map_err(|e| e.to_string())?;
        let audit = Checkpoint::audit(&bytes).map_err(|e| e.to_string())?;
        let n = audit.classes;
        ensure(n == 6, || format!("expected 6 classes, found {n}"))?;
        ensure(audit.stat_vectors == 2 * n, || format!("{} stat vectors", audit.stat_vectors))?;
        ensure(audit.stat_counters == n, || format!("{} counters", audit.stat_counters))?;
        ensure(audit.head_rows == n, || format!("{} head rows", audit.head_rows))?;
        ensure(audit.unaccounted_bytes == 0, || {
            format!("{} unaccounted bytes", audit.unaccounted_bytes)
        })?;
        for (f, _) in train.iter() {
            let needle: Vec<u8> = f.iter().flat_map(|v| v.to_le_bytes()).collect();
            ensure(!contains_bytes(&bytes, &needle), || {
                "a raw training feature was found in the checkpoint".into()
            })?;
            let needle32: Vec<u8> = f.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
            ensure(!contains_bytes(&bytes, &needle32), || {
                "a raw training feature (f32) was found in the checkpoint".into()
            })?;
        }
        checked += 1;
    }
    Ok(format!(
        "{checked} runs: 2N stat vectors, N counters, N head rows, 0 unaccounted bytes, no raw features"
    ))
}

fn determinism() -> Outcome {
    let spec = SyntheticSpec {
        class_count: 8,
        dim: 24,
        train_per_class: 80,
        test_per_class: 20,
        seed: 5,
        ..SyntheticSpec::default()
    };
    let summary = || -> Result<String, String> {
        let (train, test) = generate_synthetic(&spec).map_err(|e| e.to_string())?;
        let cfg = RunConfig {
            seed: 77,
            schedule: ScheduleKind::Step { step: 2 },
            ..RunConfig::default()
        };
        let out = protocol::run(&cfg, &Dataset::from(&train), &Dataset::from(&test))
            .map_err(|e| e.to_string())?;
        out.report.summary_json().map_err(|e| e.to_string())
    };
    let a = summary()?;
    let b = summary()?;
    ensure(a.as_bytes() == b.as_bytes(), || "summary JSON differs between runs".into())?;
    Ok(format!("summary JSON byte-identical ({} bytes)", a.len()))
}

/// Plain online softmax regression written without the library's head:
/// per-label weight rows, created at zero on first sight.
fn reference_softmax_regression(
    schedule: &protocol::StreamSchedule,
    data: &Dataset,
    lr: f64,
    wd: f64,
) -> HashMap<Label, Vec<f64>> {
    let dim = data.dim();
    let mut rows: HashMap<Label, Vec<f64>> = HashMap::new();
    for batch in &schedule.batches {
        for &(_, l) in batch {
            rows.entry(l).or_insert_with(|| vec![0.0; dim]);
        }
        let mut labels: Vec<Label> = rows.keys().copied().collect();
        labels.sort_unstable();
        let mut grad: HashMap<Label, Vec<f64>> =
            labels.iter().map(|&l| (l, vec![0.0; dim])).collect();
        for &(i, y) in batch {
            let x = data.feature(i);
            let logits: Vec<f64> = labels
                .iter()
                .map(|l| rows[l].iter().zip(x).map(|(w, v)| w * v).sum())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
            for (k, l) in labels.iter().enumerate() {
                let p = (logits[k] - m).exp() / z;
                let coeff = (p - if *l == y { 1.0 } else { 0.0 }) / batch.len() as f64;
                for (g, v) in grad.get_mut(l).unwrap().iter_mut().zip(x) {
                    *g += coeff * v;
                }
            }
        }
        for l in &labels {
            let g = &grad[l];
            let w = rows.get_mut(l).unwrap();
            for d in 0..dim {
                w[d] -= lr * (g[d] + wd * w[d]);
            }
        }
    }
    rows
}

fn naive_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7011);
    let mut data = Dataset::new(5);
    for c in 0..3u32 {
        for _ in 0..40 {
            let f: Vec<f64> = (0..5).map(|i| (c as f64 + 1.0) * (i as f64 - 2.0) * 0.3 + normal(&mut rng)).collect();
            data.push(c, &f).unwrap();
        }
    }
    let cfg = RunConfig {
        ican_enabled: false,
        isay_enabled: false,
        batch_size: 7,
        seed: 3,
        ..RunConfig::default()
    };
    let schedule = protocol::make_schedule(&data, &cfg).map_err(|e| e.to_string())?;
    let out = protocol::train_online(&schedule, &data, &data, &cfg).map_err(|e| e.to_string())?;
    let reference = reference_softmax_regression(
        &schedule,
        &data,
        cfg.optimizer.learning_rate,
        cfg.optimizer.weight_decay,
    );
    let head = out.head();
    ensure(head.num_classes() == reference.len(), || "class count differs".into())?;
    let mut worst: f64 = 0.0;
    for (k, l) in head.labels().iter().enumerate() {
        for (a, b) in head.row(k).iter().zip(&reference[l]) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("max weight difference {worst:.3e}"))?;
    Ok(format!("3-class toy stream, max weight difference {worst:.2e} (tol 1e-9)"))
}

fn main() {
    let criteria = [
        Criterion {
            name: "statistics oracle",
            budget: Some(Duration::from_secs(10)),
            run: statistics_oracle,
        },
        Criterion {
            name: "gradient check",
            budget: Some(Duration::from_secs(5)),
            run: gradient_check,
        },
        Criterion {
            name: "ICAN algebraic identity",
            budget: None,
            run: ican_identity,
        },
        Criterion {
            name: "ISAY invariants",
            budget: None,
            run: isay_invariants,
        },
        Criterion {
            name: "ablation ordering",
            budget: Some(Duration::from_secs(60)),
            run: ablation_ordering,
        },
        Criterion {
            name: "generator comparison",
            budget: Some(Duration::from_secs(60)),
            run: generator_comparison,
        },
        Criterion {
            name: "non-exemplar audit",
            budget: None,
            run: non_exemplar_audit,
        },
        Criterion {
            name: "determinism",
            budget: None,
            run: determinism,
        },
        Criterion {
            name: "naive-baseline equivalence",
            budget: None,
            run: naive_equivalence,
        },
    ];

    let mut failures = 0;
    for c in &criteria {
        let start = Instant::now();
        let mut result = (c.run)();
        let elapsed = start.elapsed();
        if let (Ok(_), Some(budget)) = (&result, c.budget) {
            if elapsed > budget {
                result = Err(format!("took {elapsed:.2?}, budget {budget:?}"));
            }
        }
        match result {
            Ok(detail) => println!("[PASS] {} ({elapsed:.2?}): {detail}", c.name),
            Err(detail) => {
                failures += 1;
                println!("[FAIL] {} ({elapsed:.2?}): {detail}", c.name);
            }
        }
    }
    println!(
        "acceptance: {} passed, {} failed",
        criteria.len() - failures,
        failures
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
