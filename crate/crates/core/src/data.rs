//! Datasets: IDX and CSV loading, the synthetic Gaussian category generator,
//! normal/anomalous splits and enumeration of normal-category combinations.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::nn::Matrix;
use crate::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Feature matrix in `[0, 1]` with one category label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    n_categories: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, n_categories: usize) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Input("dataset has no samples".into()));
        }
        if labels.len() != features.rows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} samples",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n_categories) {
            return Err(Error::Input(format!("label {bad} not below category count {n_categories}")));
        }
        if let Some(v) = features
            .as_slice()
            .iter()
            .find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::Input(format!("feature value {v} outside [0, 1]")));
        }
        Ok(Self {
            features,
            labels,
            n_categories,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Row indices of one category, in dataset order.
    pub fn indices_of(&self, category: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == category).then_some(i))
            .collect()
    }

    pub fn category(&self, category: usize) -> Matrix {
        self.features.select_rows(&self.indices_of(category))
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, field, "file ends inside the header"))
}

/// Loads an IDX image file (`0x00000803`) and its IDX label file (`0x00000801`).
///
/// Pixels are scaled by 1/255 and images flattened row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;

    let magic = read_u32(&images, 0, images_path, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            images_path,
            "magic",
            format!("expected {IDX_IMAGES_MAGIC:#010x} for images, found {magic:#010x}"),
        ));
    }
    let n = read_u32(&images, 4, images_path, "image count")? as usize;
    let rows = read_u32(&images, 8, images_path, "rows")? as usize;
    let cols = read_u32(&images, 12, images_path, "cols")? as usize;
    let d = rows * cols;
    let payload = &images[16..];
    if payload.len() != n * d {
        return Err(Error::format(
            images_path,
            "pixel payload",
            format!("header promises {n}x{rows}x{cols} = {} bytes, found {}", n * d, payload.len()),
        ));
    }

    let magic = read_u32(&labels, 0, labels_path, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            labels_path,
            "magic",
            format!("expected {IDX_LABELS_MAGIC:#010x} for labels, found {magic:#010x}"),
        ));
    }
    let n_labels = read_u32(&labels, 4, labels_path, "label count")? as usize;
    let label_bytes = &labels[8..];
    if label_bytes.len() != n_labels {
        return Err(Error::format(
            labels_path,
            "label payload",
            format!("header promises {n_labels} labels, found {}", label_bytes.len()),
        ));
    }
    if n_labels != n {
        return Err(Error::format(
            labels_path,
            "label count",
            format!("{n_labels} labels for {n} images"),
        ));
    }

    let features: Vec<f64> = payload.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&l| usize::from(l)).collect();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(Matrix::from_vec(n, d, features)?, labels, k)
}

/// Loads `label,f0,f1,...` CSV.
///
/// Labels are re-indexed densely in sorted order. When every feature value
/// already lies in `[0, 1]` the features are kept as written; otherwise each
/// column is min-max scaled into `[0, 1]`, constant columns mapping to 0.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::format(path, "csv", e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| Error::format(path, "header", e.to_string()))?
        .clone();
    if header.get(0).map(str::trim) != Some("label") || header.len() < 2 {
        return Err(Error::format(path, "header", "expected `label,f0,f1,...`"));
    }
    let d = header.len() - 1;

    let mut raw_labels = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let record = record.map_err(|e| Error::format(path, format!("row {line}"), e.to_string()))?;
        if record.len() != d + 1 {
            return Err(Error::format(
                path,
                format!("row {line}"),
                format!("{} cells, header has {}", record.len(), d + 1),
            ));
        }
        let label: i64 = record[0].trim().parse().map_err(|_| {
            Error::format(path, format!("row {line}"), format!("label `{}` is not an integer", &record[0]))
        })?;
        raw_labels.push(label);
        for (j, cell) in record.iter().skip(1).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::format(path, format!("row {line}"), format!("column f{j}: `{cell}` is not a number"))
            })?;
            if !v.is_finite() {
                return Err(Error::format(path, format!("row {line}"), format!("column f{j} is not finite")));
            }
            values.push(v);
        }
    }
    let n = raw_labels.len();
    if n == 0 {
        return Err(Error::format(path, "rows", "no data rows"));
    }

    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        for j in 0..d {
            let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                let v = values[i * d + j];
                (lo.min(v), hi.max(v))
            });
            for i in 0..n {
                let v = &mut values[i * d + j];
                *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.0 };
            }
        }
    }

    let index: BTreeMap<i64, usize> = {
        let mut sorted = raw_labels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        sorted.into_iter().enumerate().map(|(i, l)| (l, i)).collect()
    };
    let labels: Vec<usize> = raw_labels.iter().map(|l| index[l]).collect();
    Dataset::new(Matrix::from_vec(n, d, values)?, labels, index.len())
}

/// Writes a dataset as `label,f0,...` CSV with shortest round-trip decimals.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::format(path, "csv", e.to_string()))?;
    let mut header = vec!["label".to_string()];
    header.extend((0..dataset.dim()).map(|j| format!("f{j}")));
    let io = |e: csv::Error| Error::format(path, "csv", e.to_string());
    writer.write_record(&header).map_err(io)?;
    for (row, label) in dataset.features.iter_rows().zip(&dataset.labels) {
        let mut rec = Vec::with_capacity(row.len() + 1);
        rec.push(label.to_string());
        rec.extend(row.iter().map(|v| v.to_string()));
        writer.write_record(&rec).map_err(io)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Parameters of the synthetic generator: `k` isotropic Gaussian categories
/// whose means sit evenly on a circle in the first two coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub categories: usize,
    pub dim: usize,
    pub radius: f64,
    pub sigma: f64,
    pub per_category: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            categories: 6,
            dim: 10,
            radius: 4.0,
            sigma: 1.0,
            per_category: 500,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.categories < 2 {
            return Err(Error::Config(format!("need at least 2 categories, got {}", self.categories)));
        }
        if self.dim < 2 {
            return Err(Error::Config(format!("dimension must be at least 2, got {}", self.dim)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !self.radius.is_finite() {
            return Err(Error::Config("radius must be finite".into()));
        }
        if self.per_category < 10 {
            return Err(Error::Config(format!(
                "need at least 10 samples per category, got {}",
                self.per_category
            )));
        }
        Ok(())
    }

    /// Mean of category `c` in the unnormalized space.
    pub fn mean(&self, c: usize) -> Vec<f64> {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / self.categories as f64;
        let mut m = vec![0.0; self.dim];
        m[0] = self.radius * angle.cos();
        m[1] = self.radius * angle.sin();
        m
    }
}

/// The global affine map applied by the generator: `x' = (x - min) / (max - min)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalScale {
    pub min: f64,
    pub max: f64,
}

impl GlobalScale {
    pub fn denormalize(&self, v: f64) -> f64 {
        self.min + v * (self.max - self.min)
    }
}

pub fn gen_gaussian_classes(spec: &SyntheticSpec) -> Result<Dataset> {
    gen_gaussian_classes_scaled(spec).map(|(d, _)| d)
}

/// Generates the dataset and also returns the normalization that was applied.
pub fn gen_gaussian_classes_scaled(spec: &SyntheticSpec) -> Result<(Dataset, GlobalScale)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let n = spec.categories * spec.per_category;
    let mut values = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.categories {
        let mean = spec.mean(c);
        for _ in 0..spec.per_category {
            values.extend(mean.iter().map(|m| m + noise.sample(&mut rng)));
            labels.push(c);
        }
    }
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = max - min;
    for v in &mut values {
        // clamp guards the last ulp at the extremes
        *v = ((*v - min) / span).clamp(0.0, 1.0);
    }
    let dataset = Dataset::new(Matrix::from_vec(n, spec.dim, values)?, labels, spec.categories)?;
    Ok((dataset, GlobalScale { min, max }))
}

/// Which categories are normal and how their samples are split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub normal_ids: Vec<usize>,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(normal_ids: Vec<usize>, seed: u64) -> Self {
        Self {
            normal_ids,
            train_fraction: 0.8,
            seed,
        }
    }
}

/// Per-category normal training sets plus a labeled test set.
#[derive(Debug, Clone)]
pub struct Split {
    pub normal_ids: Vec<usize>,
    /// `train[i]` holds training samples of category `normal_ids[i]`.
    pub train: Vec<Matrix>,
    pub train_indices: Vec<Vec<usize>>,
    pub test: Matrix,
    pub test_indices: Vec<usize>,
    /// `true` for samples of non-normal categories.
    pub test_anomalous: Vec<bool>,
}

impl Split {
    pub fn n_train(&self) -> usize {
        self.train.iter().map(Matrix::rows).sum()
    }

    /// Keeps a seeded random `fraction` of every training set (at least one sample each).
    pub fn subsample_train(&self, fraction: f64, seed: u64) -> Result<Split> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("subsample fraction {fraction} outside (0, 1]")));
        }
        let mut out = self.clone();
        for ((set, idx), &c) in out.train.iter_mut().zip(out.train_indices.iter_mut()).zip(&self.normal_ids) {
            let mut rng = category_rng(seed, c, SUBSAMPLE_STREAMS);
            let keep = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len());
            let mut order: Vec<usize> = (0..idx.len()).collect();
            order.shuffle(&mut rng);
            order.truncate(keep);
            order.sort_unstable();
            *set = set.select_rows(&order);
            *idx = order.iter().map(|&o| idx[o]).collect();
        }
        Ok(out)
    }
}

const SUBSAMPLE_STREAMS: u64 = 1 << 32;

/// Shuffling stream of one category, independent of which other categories are selected.
fn category_rng(seed: u64, category: usize, base_stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(base_stream + category as u64);
    rng
}

/// Splits a dataset into normal training sets and a test set.
///
/// Each normal category contributes `round(train_fraction * n_c)` shuffled
/// samples to training and the rest to the test set; every sample of a
/// non-normal category goes to the test set as an anomaly.
pub fn select_normal(dataset: &Dataset, spec: &SplitSpec) -> Result<Split> {
    let k = dataset.n_categories();
    if spec.normal_ids.is_empty() {
        return Err(Error::Config("no normal categories selected".into()));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "train fraction {} outside (0, 1]",
            spec.train_fraction
        )));
    }
    let mut seen = vec![false; k];
    for &c in &spec.normal_ids {
        if c >= k {
            return Err(Error::Config(format!("normal category {c} not in 0..{k}")));
        }
        if std::mem::replace(&mut seen[c], true) {
            return Err(Error::Config(format!("normal category {c} listed twice")));
        }
    }
    if spec.normal_ids.len() >= k {
        return Err(Error::Config(
            "every category is normal; no anomalies are left to test against".into(),
        ));
    }

    let mut train = Vec::new();
    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    let mut test_anomalous = Vec::new();
    for &c in &spec.normal_ids {
        let mut idx = dataset.indices_of(c);
        if idx.is_empty() {
            return Err(Error::Config(format!("normal category {c} has no samples")));
        }
        idx.shuffle(&mut category_rng(spec.seed, c, 0));
        let n_train = ((idx.len() as f64 * spec.train_fraction).round() as usize).clamp(1, idx.len());
        let held_out = idx.split_off(n_train);
        train.push(dataset.features.select_rows(&idx));
        train_indices.push(idx);
        test_anomalous.extend(std::iter::repeat_n(false, held_out.len()));
        test_indices.extend(held_out);
    }
    for (i, &l) in dataset.labels.iter().enumerate() {
        if !seen[l] {
            test_indices.push(i);
            test_anomalous.push(true);
        }
    }
    Ok(Split {
        normal_ids: spec.normal_ids.clone(),
        train,
        train_indices,
        test: dataset.features.select_rows(&test_indices),
        test_indices,
        test_anomalous,
    })
}

/// All `m`-subsets of `0..k` in lexicographic order.
pub fn enumerate_combinations(k: usize, m: usize) -> Result<Vec<Vec<usize>>> {
    if m == 0 || m > k {
        return Err(Error::Config(format!("cannot choose {m} of {k} categories")));
    }
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..m).collect();
    loop {
        out.push(current.clone());
        // rightmost position that can still advance
        let Some(pos) = (0..m).rev().find(|&i| current[i] < k - m + i) else {
            break;
        };
        current[pos] += 1;
        for i in pos + 1..m {
            current[i] = current[i - 1] + 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combination_counts_match_the_benchmark_cases() {
        assert_eq!(enumerate_combinations(10, 2).unwrap().len(), 45);
        assert_eq!(enumerate_combinations(10, 5).unwrap().len(), 252);
        assert_eq!(enumerate_combinations(10, 9).unwrap().len(), 10);
        assert!(matches!(enumerate_combinations(3, 4), Err(Error::Config(_))));
    }

    #[test]
    fn combinations_are_lexicographic_and_unique() {
        let c = enumerate_combinations(5, 3).unwrap();
        assert_eq!(c.first().unwrap(), &vec![0, 1, 2]);
        assert_eq!(c.last().unwrap(), &vec![2, 3, 4]);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn generator_counts_and_determinism() {
        let spec = SyntheticSpec {
            categories: 2,
            per_category: 100,
            seed: 3,
            ..Default::default()
        };
        let a = gen_gaussian_classes(&spec).unwrap();
        assert_eq!(a.len(), 200);
        assert_eq!(a.indices_of(0).len(), 100);
        assert_eq!(a.indices_of(1).len(), 100);
        assert_eq!(a, gen_gaussian_classes(&spec).unwrap());
    }

    #[test]
    fn generator_rejects_invalid_specs() {
        for spec in [
            SyntheticSpec { categories: 1, ..Default::default() },
            SyntheticSpec { dim: 1, ..Default::default() },
            SyntheticSpec { sigma: 0.0, ..Default::default() },
            SyntheticSpec { per_category: 9, ..Default::default() },
        ] {
            assert!(matches!(gen_gaussian_classes(&spec), Err(Error::Config(_))));
        }
    }

    #[test]
    fn split_counts() {
        let spec = SyntheticSpec {
            categories: 3,
            per_category: 10,
            ..Default::default()
        };
        let ds = gen_gaussian_classes(&spec).unwrap();
        let split = select_normal(&ds, &SplitSpec::new(vec![0, 1], 1)).unwrap();
        assert_eq!(split.train[0].rows(), 8);
        assert_eq!(split.train[1].rows(), 8);
        assert_eq!(split.test_anomalous.iter().filter(|a| !**a).count(), 4);
        assert_eq!(split.test_anomalous.iter().filter(|a| **a).count(), 10);
    }

    #[test]
    fn ten_categories_two_normal_leaves_eight_anomalous() {
        let spec = SyntheticSpec {
            categories: 10,
            per_category: 10,
            ..Default::default()
        };
        let ds = gen_gaussian_classes(&spec).unwrap();
        let split = select_normal(&ds, &SplitSpec::new(vec![3, 7], 0)).unwrap();
        let mut anomaly_cats: Vec<usize> = split
            .test_indices
            .iter()
            .zip(&split.test_anomalous)
            .filter(|(_, a)| **a)
            .map(|(&i, _)| ds.labels()[i])
            .collect();
        anomaly_cats.dedup();
        assert_eq!(anomaly_cats, vec![0, 1, 2, 4, 5, 6, 8, 9]);
    }

    #[test]
    fn full_train_fraction_leaves_no_normal_test_samples() {
        let ds = gen_gaussian_classes(&SyntheticSpec {
            categories: 3,
            per_category: 10,
            ..Default::default()
        })
        .unwrap();
        let mut spec = SplitSpec::new(vec![0], 0);
        spec.train_fraction = 1.0;
        let split = select_normal(&ds, &spec).unwrap();
        assert!(split.test_anomalous.iter().all(|a| *a));
    }

    #[test]
    fn split_rejects_bad_normal_sets() {
        let ds = gen_gaussian_classes(&SyntheticSpec {
            categories: 3,
            per_category: 10,
            ..Default::default()
        })
        .unwrap();
        for ids in [vec![], vec![5], vec![0, 0], vec![0, 1, 2]] {
            assert!(matches!(select_normal(&ds, &SplitSpec::new(ids, 0)), Err(Error::Config(_))));
        }
        // category 2 exists in the label space but has no rows
        let sparse = Dataset::new(Matrix::zeros(2, 2), vec![0, 1], 4).unwrap();
        assert!(matches!(
            select_normal(&sparse, &SplitSpec::new(vec![2], 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn subsample_keeps_fraction() {
        let ds = gen_gaussian_classes(&SyntheticSpec {
            categories: 3,
            per_category: 100,
            ..Default::default()
        })
        .unwrap();
        let split = select_normal(&ds, &SplitSpec::new(vec![0, 2], 4)).unwrap();
        let sub = split.subsample_train(0.1, 9).unwrap();
        assert_eq!(sub.train[0].rows(), 8);
        for (set, idx) in sub.train.iter().zip(&sub.train_indices) {
            assert_eq!(set, &ds.features().select_rows(idx));
        }
    }
}
