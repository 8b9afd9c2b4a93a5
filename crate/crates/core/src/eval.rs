//! ROC/AUC evaluation, confidence intervals, the product-vs-mean rate
//! diagnostic and the combination-sweep benchmark runner.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{enumerate_combinations, select_normal, Dataset, SplitSpec};
use crate::detectors::Hyperparams;
use crate::fusion::{aggregate_rates, AggregateMode};
use crate::multiclass::Algorithm;
use crate::{Error, Result};

/// ROC curve with anomalies as positives.
#[derive(Debug, Clone, PartialEq)]
pub struct RocResult {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

fn class_counts(scores: &[f64], anomalous: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != anomalous.len() {
        return Err(Error::Evaluation(format!(
            "{} scores for {} labels",
            scores.len(),
            anomalous.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Evaluation("NaN score".into()));
    }
    let pos = anomalous.iter().filter(|a| **a).count();
    let neg = anomalous.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Evaluation(format!(
            "AUC needs both classes; got {pos} anomalous and {neg} normal samples"
        )));
    }
    Ok((pos, neg))
}

/// Threshold sweep over distinct scores in descending order; samples sharing
/// a score enter the curve together. AUC is the trapezoidal area.
pub fn roc_auc(scores: &[f64], anomalous: &[bool]) -> Result<RocResult> {
    let (n_pos, n_neg) = class_counts(scores, anomalous)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if anomalous[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    let auc = trapezoid(&points);
    Ok(RocResult { points, auc })
}

pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Pairwise AUC: fraction of (anomalous, normal) pairs where the anomaly
/// scores higher, ties counting one half.
pub fn auc_mannwhitney(scores: &[f64], anomalous: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = class_counts(scores, anomalous)?;
    let mut wins = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !anomalous[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if anomalous[j] {
                continue;
            }
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (n_pos * n_neg) as f64)
}

/// Mean and 95% half-width `1.96 * s / sqrt(n)` (sample standard deviation, 0 for n = 1).
pub fn ci95(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Input("confidence interval of no values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * var.sqrt() / n.sqrt()))
}

/// Sample standard deviation (0 for fewer than two values).
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Average ranks (1-based), ties sharing their mean rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Input("spearman needs two equally long series of length >= 2".into()));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Input("spearman of a constant series".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// AUC of repeated runs on one normal-category combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    pub algorithm: Algorithm,
    pub combination: Vec<usize>,
    pub per_run: Vec<f64>,
    pub mean: f64,
    pub ci95: f64,
}

impl AucSummary {
    pub fn new(algorithm: Algorithm, combination: Vec<usize>, per_run: Vec<f64>) -> Result<Self> {
        let (mean, ci95) = ci95(&per_run)?;
        Ok(Self {
            algorithm,
            combination,
            per_run,
            mean,
            ci95,
        })
    }
}

/// True- and false-positive rates with normal samples as positives.
///
/// Each row of a pool holds one sample's per-detector probabilities
/// `P_i({i}|x)`. A sample is classified anomalous iff its aggregated
/// rejection rate is `>= threshold`; `tpr` is the fraction of the normal pool
/// classified normal and `fpr` the fraction of the anomalous pool classified
/// normal. Samples carry uniform weight and no normalizer is applied.
pub fn lemma1_rates(
    normal_pool: &[Vec<f64>],
    anomalous_pool: &[Vec<f64>],
    threshold: f64,
    mode: AggregateMode,
) -> Result<(f64, f64)> {
    if normal_pool.is_empty() || anomalous_pool.is_empty() {
        return Err(Error::Input("both sample pools must be non-empty".into()));
    }
    let accepted = |pool: &[Vec<f64>]| -> Result<f64> {
        let mut count = 0usize;
        for ps in pool {
            if ps.is_empty() || ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Input("probabilities must be non-empty and within [0, 1]".into()));
            }
            if aggregate_rates(ps, mode) < threshold {
                count += 1;
            }
        }
        Ok(count as f64 / pool.len() as f64)
    };
    Ok((accepted(normal_pool)?, accepted(anomalous_pool)?))
}

/// Which normal-category sets a benchmark visits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combinations {
    Explicit(Vec<Vec<usize>>),
    /// All `m`-subsets, or a seeded sample of `limit` of them when there are more.
    Sweep { m: usize, limit: Option<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPlan {
    pub algorithms: Vec<Algorithm>,
    pub combinations: Combinations,
    pub seeds: usize,
    pub base_seed: u64,
    pub train_fraction: f64,
    /// Fraction of each training set kept after the split.
    pub train_subsample: f64,
    pub hyperparams: Hyperparams,
}

impl BenchmarkPlan {
    pub fn new(algorithms: Vec<Algorithm>, combinations: Combinations, seeds: usize) -> Self {
        Self {
            algorithms,
            combinations,
            seeds,
            base_seed: 0,
            train_fraction: 0.8,
            train_subsample: 1.0,
            hyperparams: Hyperparams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms requested".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("need at least one seed".into()));
        }
        if let Combinations::Sweep { limit: Some(0), .. } = self.combinations {
            return Err(Error::Config("combination limit must be positive".into()));
        }
        self.hyperparams.validate()
    }

    /// The normal-category sets this plan visits, in order.
    pub fn resolve_combinations(&self, n_categories: usize) -> Result<Vec<Vec<usize>>> {
        match &self.combinations {
            Combinations::Explicit(list) => {
                if list.is_empty() {
                    return Err(Error::Config("no combinations given".into()));
                }
                Ok(list.clone())
            }
            Combinations::Sweep { m, limit } => {
                let all = enumerate_combinations(n_categories, *m)?;
                match limit {
                    Some(l) if all.len() > *l => {
                        let mut rng = ChaCha8Rng::seed_from_u64(self.base_seed);
                        let mut picked = sample(&mut rng, all.len(), *l).into_vec();
                        picked.sort_unstable();
                        Ok(picked.into_iter().map(|i| all[i].clone()).collect())
                    }
                    _ => Ok(all),
                }
            }
        }
    }
}

/// One (algorithm, combination, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub algorithm: Algorithm,
    pub combination_index: usize,
    pub combination: Vec<usize>,
    pub seed: u64,
    pub auc: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub algorithm: Algorithm,
    pub combination: Vec<usize>,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<RunRow>,
    pub failures: Vec<CellFailure>,
}

/// Lowest- and highest-mean combination of one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucRange {
    pub algorithm: Algorithm,
    pub min: AucSummary,
    pub max: AucSummary,
}

impl BenchmarkReport {
    /// Per (algorithm, combination) summaries, ordered by algorithm then first appearance.
    pub fn summaries(&self) -> Vec<AucSummary> {
        let mut groups: BTreeMap<(Algorithm, usize), (Vec<usize>, Vec<f64>)> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry((r.algorithm, r.combination_index))
                .or_insert_with(|| (r.combination.clone(), Vec::new()))
                .1
                .push(r.auc);
        }
        groups
            .into_iter()
            .map(|((alg, _), (combo, aucs))| {
                AucSummary::new(alg, combo, aucs).expect("groups are never empty")
            })
            .collect()
    }

    pub fn ranges(&self) -> Vec<AucRange> {
        let summaries = self.summaries();
        let mut out = Vec::new();
        for alg in Algorithm::ALL {
            let mine: Vec<&AucSummary> = summaries.iter().filter(|s| s.algorithm == alg).collect();
            let (Some(lo), Some(hi)) = (
                mine.iter().min_by(|a, b| a.mean.total_cmp(&b.mean)),
                mine.iter().max_by(|a, b| a.mean.total_cmp(&b.mean)),
            ) else {
                continue;
            };
            out.push(AucRange {
                algorithm: alg,
                min: (*lo).clone(),
                max: (*hi).clone(),
            });
        }
        out
    }

    /// AUCs of one algorithm in run order.
    pub fn aucs(&self, algorithm: Algorithm) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.algorithm == algorithm)
            .map(|r| r.auc)
            .collect()
    }

    pub fn mean_auc(&self, algorithm: Algorithm) -> Option<f64> {
        let a = self.aucs(algorithm);
        (!a.is_empty()).then(|| a.iter().sum::<f64>() / a.len() as f64)
    }
}

/// Runs every (combination, seed, algorithm) cell in that nesting order.
///
/// Run `r` uses seed `base_seed + r` for both the split and training.
/// Completed rows are handed to `on_row` immediately; failing cells are
/// recorded and the sweep continues.
pub fn run_benchmark<F>(dataset: &Dataset, plan: &BenchmarkPlan, mut on_row: F) -> Result<BenchmarkReport>
where
    F: FnMut(&RunRow) -> Result<()>,
{
    plan.validate()?;
    let combos = plan.resolve_combinations(dataset.n_categories())?;
    let mut report = BenchmarkReport::default();
    for (ci, combo) in combos.iter().enumerate() {
        for r in 0..plan.seeds {
            let seed = plan.base_seed + r as u64;
            let split = select_normal(
                dataset,
                &SplitSpec {
                    normal_ids: combo.clone(),
                    train_fraction: plan.train_fraction,
                    seed,
                },
            )
            .and_then(|s| {
                if plan.train_subsample < 1.0 {
                    s.subsample_train(plan.train_subsample, seed)
                } else {
                    Ok(s)
                }
            });
            for &alg in &plan.algorithms {
                let start = Instant::now();
                let outcome = split.as_ref().map_err(clone_err).and_then(|split| {
                    let fitted = alg.train(&split.train, &split.normal_ids, &plan.hyperparams.with_seed(seed))?;
                    let scores = fitted.model.predict_scores(&split.test)?;
                    roc_auc(&scores, &split.test_anomalous)
                });
                match outcome {
                    Ok(roc) => {
                        let row = RunRow {
                            algorithm: alg,
                            combination_index: ci,
                            combination: combo.clone(),
                            seed,
                            auc: roc.auc,
                            runtime_s: start.elapsed().as_secs_f64(),
                        };
                        on_row(&row)?;
                        report.rows.push(row);
                    }
                    Err(e) => report.failures.push(CellFailure {
                        algorithm: alg,
                        combination: combo.clone(),
                        seed,
                        message: e.to_string(),
                    }),
                }
            }
        }
    }
    Ok(report)
}

fn clone_err(e: &Error) -> Error {
    Error::Config(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_scores_give_unit_auc() {
        let r = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn identical_scores_give_half() {
        let r = roc_auc(&[0.3; 5], &[true, false, true, false, false]).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.points, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn worked_example() {
        let scores = [0.8, 0.4, 0.6, 0.2];
        let labels = [true, true, false, false];
        assert_eq!(roc_auc(&scores, &labels).unwrap().auc, 0.75);
        assert_eq!(auc_mannwhitney(&scores, &labels).unwrap(), 0.75);
    }

    #[test]
    fn tie_gets_half_credit() {
        // pairs: (0.5 vs 0.5) tie, (0.5 vs 0.1) win
        let scores = [0.5, 0.5, 0.1];
        let labels = [true, false, false];
        assert_eq!(auc_mannwhitney(&scores, &labels).unwrap(), 0.75);
        assert_eq!(roc_auc(&scores, &labels).unwrap().auc, 0.75);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::Evaluation(_))));
        assert!(matches!(auc_mannwhitney(&[0.1, 0.2], &[false, false]), Err(Error::Evaluation(_))));
    }

    #[test]
    fn ci_examples() {
        assert_eq!(ci95(&[0.5]).unwrap(), (0.5, 0.0));
        let (m, h) = ci95(&[0.4, 0.6]).unwrap();
        assert!((m - 0.5).abs() < 1e-15);
        assert!((h - 0.196).abs() < 1e-12);
        assert_eq!(ci95(&[0.7; 4]).unwrap().1, 0.0);
        assert!(matches!(ci95(&[]), Err(Error::Input(_))));
    }

    #[test]
    fn lemma1_boundaries() {
        let normal = vec![vec![0.9, 0.1], vec![0.4, 0.6]];
        let anomalous = vec![vec![0.05, 0.02]];
        for mode in [AggregateMode::Product, AggregateMode::Mean] {
            assert_eq!(lemma1_rates(&normal, &anomalous, 0.0, mode).unwrap(), (0.0, 0.0));
            assert_eq!(lemma1_rates(&normal, &anomalous, 1.5, mode).unwrap(), (1.0, 1.0));
        }
    }

    #[test]
    fn product_mode_crosses_threshold_as_detectors_are_added() {
        // 0.7^2 = 0.49 >= 0.4 is anomalous, 0.7^3 = 0.343 < 0.4 is normal
        let pool2 = vec![vec![0.3; 2]];
        let pool3 = vec![vec![0.3; 3]];
        let (tpr2, _) = lemma1_rates(&pool2, &pool2, 0.4, AggregateMode::Product).unwrap();
        let (tpr3, _) = lemma1_rates(&pool3, &pool3, 0.4, AggregateMode::Product).unwrap();
        assert_eq!(tpr2, 0.0);
        assert_eq!(tpr3, 1.0);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[0.9, 0.8, 0.85, 0.1]).unwrap() + 0.8).abs() < 1e-12);
        assert_eq!(ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn sweep_limit_samples_without_replacement() {
        let mut plan = BenchmarkPlan::new(vec![Algorithm::Alg2], Combinations::Sweep { m: 5, limit: Some(20) }, 1);
        let c = plan.resolve_combinations(10).unwrap();
        assert_eq!(c.len(), 20);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        plan.combinations = Combinations::Sweep { m: 2, limit: None };
        assert_eq!(plan.resolve_combinations(10).unwrap().len(), 45);
    }

    #[test]
    fn empty_algorithm_list_is_rejected() {
        let plan = BenchmarkPlan::new(vec![], Combinations::Sweep { m: 2, limit: None }, 1);
        assert!(matches!(plan.validate(), Err(Error::Config(_))));
    }
}
