//! Acceptance suite.
//!
//! Runs every exit criterion and prints one line per criterion:
//!
//! ```text
//! cargo test --release -p mcad-core --test acceptance
//! ```
//!
//! `MCAD_ACCEPTANCE=1,3,8` restricts the run to the listed criteria.
//! `MCAD_FMNIST_DIR` points at a directory holding Fashion-MNIST IDX files
//! (default `/root/data/fmnist`); without it criterion 7 is skipped.
//! The process exits nonzero if any hard criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mcad::config::ExperimentConfig;
use mcad::data::{gen_gaussian_classes, load_csv, load_idx, select_normal, SplitSpec, SyntheticSpec};
use mcad::detectors::{deepmad_loss, deepmad_loss_and_grad, Hyperparams, LossWeights, Population, PROB_CEIL, PROB_FLOOR};
use mcad::eval::{auc_mannwhitney, roc_auc, run_benchmark, sample_std, spearman, BenchmarkPlan, BenchmarkReport, Combinations};
use mcad::fusion::{aggregate_rates, ds_combine, ds_combine_bruteforce, AggregateMode, FocalMass};
use mcad::multiclass::Algorithm;
use mcad::nn::{finite_diff_gradcheck, Activation, Matrix, Mlp};
use mcad::Error;
use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

const FUSION_TOL: f64 = 1e-12;
const AUC_TOL: f64 = 1e-12;
const GRAD_REL_TOL: f64 = 1e-4;
const HINGE_CLEARANCE: f64 = 1e-3;
const FMNIST_MIN_AUC: f64 = 0.70;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Verdict {
    Pass,
    Fail,
    /// Soft criterion below target: reported, does not fail the run.
    SoftFail,
    Skip,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        Self {
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            detail,
        }
    }
}

fn within(budget_s: u64, elapsed: Duration) -> bool {
    elapsed < Duration::from_secs(budget_s)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for m in 1..=6 {
        for _ in 0..1000 {
            let masses: Vec<FocalMass> = (0..m)
                .map(|i| FocalMass::new(i, rng.random_range(PROB_FLOOR..=PROB_CEIL)))
                .collect();
            let fast = ds_combine(&masses).expect("closed form");
            let slow = ds_combine_bruteforce(&masses).expect("enumeration");
            worst = worst.max((fast.p_anomaly - slow.p_anomaly).abs()).max((fast.k - slow.k).abs());
        }
    }
    let elapsed = start.elapsed();
    Outcome::check(
        worst <= FUSION_TOL && within(5, elapsed),
        format!("6000 mass vectors, max |closed form - enumeration| = {worst:.2e} (tol {FUSION_TOL:e}), {:.2}s of 5s", elapsed.as_secs_f64()),
    )
}

fn random_scored_set(rng: &mut ChaCha8Rng, force_ties: bool) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=50usize);
    let n_anomalous = rng.random_range(1..n);
    let mut labels: Vec<bool> = (0..n).map(|i| i < n_anomalous).collect();
    labels.shuffle(rng);
    let mut scores: Vec<f64> = if force_ties {
        (0..n).map(|_| f64::from(rng.random_range(0..4u8))).collect()
    } else {
        (0..n).map(|_| rng.random::<f64>()).collect()
    };
    if force_ties {
        scores[1] = scores[0];
    }
    (scores, labels)
}

fn has_ties(scores: &[f64]) -> bool {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).any(|w| w[0] == w[1])
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst = 0.0f64;
    let mut tied = 0usize;
    for i in 0..1000 {
        let (scores, labels) = random_scored_set(&mut rng, i % 5 == 0);
        tied += usize::from(has_ties(&scores));
        let roc = roc_auc(&scores, &labels).expect("roc");
        let mw = auc_mannwhitney(&scores, &labels).expect("mann-whitney");
        worst = worst.max((roc.auc - mw).abs());
    }
    let elapsed = start.elapsed();
    Outcome::check(
        worst <= AUC_TOL && tied >= 100 && within(10, elapsed),
        format!(
            "1000 score sets ({tied} with ties), max |ROC - Mann-Whitney| = {worst:.2e} (tol {AUC_TOL:e}), {:.2}s of 10s",
            elapsed.as_secs_f64()
        ),
    )
}

/// A random loss configuration whose every hinge argument is at least
/// `HINGE_CLEARANCE` from the margin and whose hidden pre-activations stay
/// clear of the leaky-rectifier kink.
struct SmoothPoint {
    encoder: Mlp,
    center: Vec<f64>,
    pos: Matrix,
    neg: Matrix,
    weights: LossWeights,
    population: Population,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn smooth_point(rng: &mut ChaCha8Rng) -> SmoothPoint {
    let dims = [6, 8, 5, 3];
    loop {
        let encoder = Mlp::new(&dims, Activation::default(), false, rng).unwrap();
        let center: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
        let pos = uniform_matrix(rng, 4, 6);
        let neg = uniform_matrix(rng, 6, 6);
        let trace = encoder.forward_trace(&Matrix::vstack(&[&pos, &neg]).unwrap()).unwrap();
        let layers = trace.pre_activations();
        let hidden = &layers[..layers.len() - 1];
        if hidden.iter().any(|m| m.as_slice().iter().any(|z| z.abs() < 1e-4)) {
            continue;
        }
        let dist: Vec<f64> = encoder
            .forward(&neg)
            .unwrap()
            .iter_rows()
            .map(|z| z.iter().zip(&center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .collect();
        let mut sorted = dist.clone();
        sorted.sort_by(f64::total_cmp);
        // margin between the two middle distances: half the negatives are inside it
        let delta = 0.5 * (sorted[2] + sorted[3]);
        if dist.iter().any(|d| (d - delta).abs() < HINGE_CLEARANCE) {
            continue;
        }
        return SmoothPoint {
            encoder,
            center,
            pos,
            neg,
            weights: LossWeights {
                eta: rng.random_range(0.5..2.0),
                delta,
                lambda: rng.random_range(0.0..1e-2),
            },
            population: Population {
                total: 40.0,
                positives: 16,
                negatives: 24,
            },
        };
    }
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let p = smooth_point(&mut rng);
        let (_, grad) =
            deepmad_loss_and_grad(&p.encoder, &p.center, &p.pos, &p.neg, &p.weights, &p.population).unwrap();
        let rebuild = |params: &[f64]| {
            Mlp::from_params(p.encoder.dims(), p.encoder.activation(), false, params.to_vec()).unwrap()
        };
        let err = finite_diff_gradcheck(
            |params| deepmad_loss(&rebuild(params), &p.center, &p.pos, &p.neg, &p.weights, &p.population).unwrap(),
            p.encoder.params(),
            &grad,
            1e-6,
        )
        .unwrap();
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    Outcome::check(
        worst <= GRAD_REL_TOL && within(30, elapsed),
        format!("50 points, max relative error {worst:.2e} (tol {GRAD_REL_TOL:e}), {:.2}s of 30s", elapsed.as_secs_f64()),
    )
}

/// The k=6, m=5 synthetic benchmark shared by criteria 4 and 6.
struct SyntheticBench {
    report: BenchmarkReport,
    elapsed: Duration,
}

fn synthetic_bench() -> SyntheticBench {
    let start = Instant::now();
    let spec = SyntheticSpec {
        categories: 6,
        radius: 4.0,
        sigma: 1.0,
        per_category: 500,
        ..SyntheticSpec::default()
    };
    let dataset = gen_gaussian_classes(&spec).unwrap();
    let plan = BenchmarkPlan::new(Algorithm::ALL.to_vec(), Combinations::Explicit(vec![vec![0, 1, 2, 3, 4]]), 10);
    let report = run_benchmark(&dataset, &plan, |_| Ok(())).unwrap();
    assert!(report.failures.is_empty(), "benchmark cells failed: {:?}", report.failures);
    SyntheticBench {
        report,
        elapsed: start.elapsed(),
    }
}

fn criterion_4(bench: &SyntheticBench) -> Outcome {
    let a1 = bench.report.mean_auc(Algorithm::Alg1).unwrap();
    let a2 = bench.report.mean_auc(Algorithm::Alg2).unwrap();
    Outcome::check(
        a2 - a1 > 0.0 && within(900, bench.elapsed),
        format!(
            "mean AUC alg2 {a2:.4} - alg1 {a1:.4} = {:+.4} (need > 0), benchmark {:.0}s of 900s",
            a2 - a1,
            bench.elapsed.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let ms = [2usize, 3, 5, 8];
    let mut means = Vec::new();
    for &m in &ms {
        let spec = SyntheticSpec {
            categories: m + 2,
            ..SyntheticSpec::default()
        };
        let dataset = gen_gaussian_classes(&spec).unwrap();
        let plan = BenchmarkPlan::new(vec![Algorithm::Alg1], Combinations::Explicit(vec![(0..m).collect()]), 10);
        let report = run_benchmark(&dataset, &plan, |_| Ok(())).unwrap();
        means.push(report.mean_auc(Algorithm::Alg1).expect("alg1 rows"));
    }
    let x: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
    let rho = spearman(&x, &means).unwrap();
    let elapsed = start.elapsed();
    let listing: Vec<String> = ms.iter().zip(&means).map(|(m, a)| format!("m={m}:{a:.4}")).collect();
    Outcome::check(
        rho < 0.0 && within(1800, elapsed),
        format!(
            "alg1 mean AUC {} -> spearman {rho:+.3} (need < 0), {:.0}s of 1800s",
            listing.join(" "),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6(bench: &SyntheticBench) -> Outcome {
    let a2 = bench.report.mean_auc(Algorithm::Alg2).unwrap();
    let dm = bench.report.mean_auc(Algorithm::Deepmad).unwrap();
    let sd_dm = sample_std(&bench.report.aucs(Algorithm::Deepmad));
    let sd_a1 = sample_std(&bench.report.aucs(Algorithm::Alg1));
    Outcome::check(
        dm >= a2 && sd_dm <= sd_a1 && within(900, bench.elapsed),
        format!(
            "mean AUC deepmad {dm:.4} vs alg2 {a2:.4} (need >=), std deepmad {sd_dm:.4} vs alg1 {sd_a1:.4} (need <=), benchmark {:.0}s of 900s",
            bench.elapsed.as_secs_f64()
        ),
    )
}

fn fmnist_files(dir: &Path) -> Option<(PathBuf, PathBuf)> {
    [
        ("fmnist-all-images-idx3-ubyte", "fmnist-all-labels-idx1-ubyte"),
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ]
    .iter()
    .map(|(i, l)| (dir.join(i), dir.join(l)))
    .find(|(i, l)| i.is_file() && l.is_file())
}

fn criterion_7() -> Outcome {
    let dir = std::env::var_os("MCAD_FMNIST_DIR").map_or_else(|| PathBuf::from("/root/data/fmnist"), PathBuf::from);
    let Some((images, labels)) = fmnist_files(&dir) else {
        return Outcome {
            verdict: Verdict::Skip,
            detail: format!("no Fashion-MNIST IDX files under {}", dir.display()),
        };
    };
    let start = Instant::now();
    let dataset = load_idx(&images, &labels).unwrap();
    let mut plan = BenchmarkPlan::new(vec![Algorithm::Deepmad], Combinations::Sweep { m: 2, limit: Some(5) }, 1);
    plan.train_subsample = 0.1;
    let report = run_benchmark(&dataset, &plan, |_| Ok(())).unwrap();
    let elapsed = start.elapsed();
    let mean = report.mean_auc(Algorithm::Deepmad).unwrap_or(f64::NAN);
    let pairs: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{:?}:{:.3}", r.combination, r.auc))
        .collect();
    let ok = mean >= FMNIST_MIN_AUC && report.failures.is_empty() && within(900, elapsed);
    Outcome {
        verdict: if ok { Verdict::Pass } else { Verdict::SoftFail },
        detail: format!(
            "deepmad mean AUC {mean:.4} over {} (need >= {FMNIST_MIN_AUC}), {:.0}s of 900s",
            pairs.join(" "),
            elapsed.as_secs_f64()
        ),
    }
}

fn am_gm_chain(rng: &mut ChaCha8Rng) -> bool {
    (0..2000).all(|_| {
        let m = rng.random_range(1..=8usize);
        let p: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let min = p.iter().map(|v| 1.0 - v).fold(f64::INFINITY, f64::min);
        aggregate_rates(&p, AggregateMode::Product) <= min + 1e-15
            && min <= aggregate_rates(&p, AggregateMode::Mean) + 1e-15
    })
}

fn ds_monotone(rng: &mut ChaCha8Rng) -> bool {
    (0..2000).all(|_| {
        let m = rng.random_range(1..=6usize);
        let mut masses: Vec<FocalMass> = (0..m)
            .map(|i| FocalMass::new(i, rng.random_range(PROB_FLOOR..=PROB_CEIL)))
            .collect();
        let before = ds_combine(&masses).unwrap().p_anomaly;
        let i = rng.random_range(0..m);
        masses[i].p_in = rng.random_range(masses[i].p_in..=PROB_CEIL);
        ds_combine(&masses).unwrap().p_anomaly <= before + 1e-15
    })
}

fn m1_collapse() -> bool {
    let spec = SyntheticSpec {
        categories: 3,
        per_category: 60,
        ..SyntheticSpec::default()
    };
    let dataset = gen_gaussian_classes(&spec).unwrap();
    let split = select_normal(&dataset, &SplitSpec::new(vec![1], 4)).unwrap();
    let hp = Hyperparams {
        hidden: vec![8],
        latent_dim: 4,
        epochs_pretrain: 3,
        epochs_finetune: 3,
        batch_size: 16,
        seed: 4,
        ..Hyperparams::default()
    };
    let fitted: Vec<_> = Algorithm::ALL
        .iter()
        .map(|a| a.train(&split.train, &split.normal_ids, &hp).unwrap().model)
        .collect();
    let distances: Vec<Vec<f64>> = fitted.iter().map(|m| m.distances(&split.test).unwrap().remove(0)).collect();
    let same_distances = distances.windows(2).all(|w| w[0] == w[1]);
    let fused = fitted[0].predict_scores(&split.test).unwrap();
    let detector = &fitted[0].detectors()[0];
    let fused_is_complement = fused
        .iter()
        .zip(&distances[0])
        .all(|(s, d)| *s == 1.0 - detector.calibrate_probability(*d).unwrap());
    let direct = [&fitted[1], &fitted[2]]
        .iter()
        .all(|m| m.predict_scores(&split.test).unwrap() == distances[0]);
    same_distances && fused_is_complement && direct
}

fn orientation_symmetry(rng: &mut ChaCha8Rng) -> bool {
    (0..1000).all(|i| {
        let (scores, labels) = random_scored_set(rng, i % 3 == 0);
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = roc_auc(&scores, &labels).unwrap().auc;
        let b = roc_auc(&negated, &flipped).unwrap().auc;
        (a - b).abs() <= AUC_TOL
    })
}

fn config_round_trip(rng: &mut ChaCha8Rng) -> bool {
    let base = r#"
algorithms = ["alg1", "alg2", "deepmad"]
[dataset]
source = "synthetic"
[experiment]
m = 2
sweep = true
"#;
    (0..200).all(|_| {
        let mut c = ExperimentConfig::from_toml_str(base).unwrap();
        c.hyperparams.eta = rng.random_range(0.01..10.0);
        c.hyperparams.delta = rng.random_range(0.01..10.0);
        c.hyperparams.lambda = rng.random_range(0.0..1.0);
        c.hyperparams.lr_finetune = rng.random_range(1e-6..1e-1);
        c.hyperparams.seed = rng.random_range(0..i64::MAX as u64);
        c.hyperparams.hidden = (0..rng.random_range(0..4)).map(|_| rng.random_range(1..300)).collect();
        c.eval.seeds = rng.random_range(1..50);
        c.eval.base_seed = rng.random_range(0..i64::MAX as u64);
        c.experiment.combination_limit = rng.random_bool(0.5).then(|| rng.random_range(1..100));
        c.experiment.train_fraction = rng.random_range(0.05..1.0);
        let text = c.to_toml_string().unwrap();
        ExperimentConfig::from_toml_str(&text).unwrap() == c
    })
}

fn format_errors() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.path().join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    };
    let idx_images = |magic: u32, n: u32, payload: usize| {
        let mut b = Vec::new();
        for v in [magic, n, 2, 2] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend(std::iter::repeat_n(7u8, payload));
        b
    };
    let idx_labels = |magic: u32, n: u32, payload: usize| {
        let mut b = Vec::new();
        for v in [magic, n] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend(std::iter::repeat_n(1u8, payload));
        b
    };
    let good_images = write("img", &idx_images(0x803, 3, 12));
    let good_labels = write("lbl", &idx_labels(0x801, 3, 3));
    let field_of = |r: mcad::Result<_>| match r {
        Err(Error::Format { field, .. }) => Some(field),
        _ => None,
    };

    let ok_load = load_idx(&good_images, &good_labels).map(|d| d.len() == 3).unwrap_or(false);
    let bad_magic = field_of(load_idx(write("m", &idx_images(0x801, 3, 12)), &good_labels));
    let truncated = field_of(load_idx(write("t", &idx_images(0x803, 3, 11)), &good_labels));
    let count = field_of(load_idx(&good_images, write("c", &idx_labels(0x801, 2, 2))));
    let header = field_of(load_idx(write("h", &[0, 0, 8]), &good_labels));
    let missing = matches!(load_idx(dir.path().join("absent"), &good_labels), Err(Error::Io { .. }));

    let ragged = field_of(load_csv(write("r.csv", b"label,f0,f1\n0,0.1,0.2\n1,0.3\n")));
    let text = field_of(load_csv(write("x.csv", b"label,f0\n0,0.5\n1,abc\n")));

    ok_load
        && bad_magic.as_deref() == Some("magic")
        && truncated.as_deref() == Some("pixel payload")
        && count.as_deref() == Some("label count")
        && header.as_deref() == Some("magic")
        && missing
        && ragged.is_some_and(|f| f.starts_with("row"))
        && text.as_deref() == Some("row 3")
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let checks = [
        ("am-gm chain", am_gm_chain(&mut rng)),
        ("ds monotonicity", ds_monotone(&mut rng)),
        ("m=1 collapse", m1_collapse()),
        ("auc orientation", orientation_symmetry(&mut rng)),
        ("config round trip", config_round_trip(&mut rng)),
        ("idx/csv format errors", format_errors()),
    ];
    let elapsed = start.elapsed();
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    Outcome::check(
        failed.is_empty() && within(120, elapsed),
        format!(
            "{}/{} property groups hold{}, {:.1}s of 120s",
            checks.len() - failed.len(),
            checks.len(),
            if failed.is_empty() { String::new() } else { format!(" (failed: {})", failed.join(", ")) },
            elapsed.as_secs_f64()
        ),
    )
}

fn main() {
    let selected: Option<Vec<u32>> = std::env::var("MCAD_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wants = |id: u32| selected.as_ref().is_none_or(|s| s.contains(&id));

    let names = [
        (1, "fusion closed form matches power-set enumeration"),
        (2, "ROC area matches Mann-Whitney statistic"),
        (3, "hinge-loss gradient matches finite differences"),
        (4, "pooled detector beats fused per-category detectors"),
        (5, "fused AUC falls as the number of normal categories grows"),
        (6, "min-distance ensemble beats pooled detector with lower variance"),
        (7, "Fashion-MNIST two-category sanity (soft)"),
        (8, "property suites"),
    ];

    let mut bench: Option<SyntheticBench> = None;
    let mut hard_failures = 0;
    println!();
    for (id, name) in names {
        if !wants(id) {
            continue;
        }
        let outcome = match id {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(bench.get_or_insert_with(synthetic_bench)),
            5 => criterion_5(),
            6 => criterion_6(bench.get_or_insert_with(synthetic_bench)),
            7 => criterion_7(),
            _ => criterion_8(),
        };
        let tag = match outcome.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                hard_failures += 1;
                "FAIL"
            }
            Verdict::SoftFail => "SOFT-FAIL",
            Verdict::Skip => "SKIP",
        };
        println!("[{tag}] criterion {id}: {name}: {}", outcome.detail);
    }
    println!();
    if hard_failures > 0 {
        println!("{hard_failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
