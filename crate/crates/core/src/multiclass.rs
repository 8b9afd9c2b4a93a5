//! End-to-end pipelines for multi-category normal data.
//!
//! * [`train_algorithm1`]: one hypersphere detector per normal category,
//!   fused with Dempster-Shafer combination.
//! * [`train_algorithm2`]: one hypersphere detector on the pooled normal data.
//! * [`train_deepmad`]: one DeepMAD detector per category (the other normal
//!   categories act as negatives), scored by the minimum center distance.
//!
//! Detector `c` always trains with seed `seed + c` and the pooled detector
//! with `seed + 1000`, so per-category work can run in parallel without
//! changing any result.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::{
    compute_center, deepmad_finetune, pretrain_autoencoder, svdd_train, Hyperparams, Modeled,
    OneClassDetector, Trained,
};
use crate::fusion::{ds_combine, min_distance_score, or_rule_decide, FocalMass};
use crate::nn::Matrix;
use crate::{Error, Result};

/// Offset added to the base seed for the pooled detector.
pub const POOLED_SEED_OFFSET: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    DsFusion,
    Pooled,
    MinDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiDetector {
    mode: FusionMode,
    normal_ids: Vec<usize>,
    detectors: Vec<OneClassDetector>,
}

/// Loss curves of one detector's two training phases.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorLog {
    pub modeled: Modeled,
    pub pretrain: Vec<f64>,
    pub finetune: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: MultiDetector,
    pub logs: Vec<DetectorLog>,
}

impl MultiDetector {
    pub fn new(mode: FusionMode, normal_ids: Vec<usize>, detectors: Vec<OneClassDetector>) -> Result<Self> {
        let expected = match mode {
            FusionMode::Pooled => 1,
            FusionMode::DsFusion | FusionMode::MinDistance => normal_ids.len(),
        };
        if detectors.len() != expected || detectors.is_empty() {
            return Err(Error::Config(format!(
                "{mode:?} over {} categories needs {expected} detectors, got {}",
                normal_ids.len(),
                detectors.len()
            )));
        }
        let d = detectors[0].input_dim();
        if detectors.iter().any(|det| det.input_dim() != d) {
            return Err(Error::Dimension("detectors disagree on input width".into()));
        }
        if mode == FusionMode::DsFusion && detectors.iter().any(|det| det.calibration().is_none()) {
            return Err(Error::State("fusion needs calibrated detectors".into()));
        }
        Ok(Self {
            mode,
            normal_ids,
            detectors,
        })
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    pub fn normal_ids(&self) -> &[usize] {
        &self.normal_ids
    }

    pub fn detectors(&self) -> &[OneClassDetector] {
        &self.detectors
    }

    pub fn input_dim(&self) -> usize {
        self.detectors[0].input_dim()
    }

    /// `distances[i][s]`: distance of sample `s` under detector `i`.
    pub fn distances(&self, x: &Matrix) -> Result<Vec<Vec<f64>>> {
        self.detectors.iter().map(|d| d.score_batch(x)).collect()
    }

    /// `p[s][i]`: calibrated probability that sample `s` belongs to detector `i`'s category.
    pub fn probabilities(&self, x: &Matrix) -> Result<Vec<Vec<f64>>> {
        let dist = self.distances(x)?;
        (0..x.rows())
            .map(|s| {
                self.detectors
                    .iter()
                    .zip(&dist)
                    .map(|(det, d)| det.calibrate_probability(d[s]))
                    .collect()
            })
            .collect()
    }

    /// Anomaly score per row of `x`; larger means more anomalous.
    pub fn predict_scores(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "test data has {} features, detectors expect {}",
                x.cols(),
                self.input_dim()
            )));
        }
        match self.mode {
            FusionMode::Pooled => self.detectors[0].score_batch(x),
            FusionMode::MinDistance => {
                let dist = self.distances(x)?;
                (0..x.rows())
                    .map(|s| min_distance_score(&dist.iter().map(|d| d[s]).collect::<Vec<_>>()))
                    .collect()
            }
            FusionMode::DsFusion => self
                .probabilities(x)?
                .iter()
                .map(|ps| {
                    let masses: Vec<FocalMass> = self
                        .normal_ids
                        .iter()
                        .zip(ps)
                        .map(|(&c, &p)| FocalMass::new(c, p))
                        .collect();
                    ds_combine(&masses).map(|v| v.p_anomaly)
                })
                .collect(),
        }
    }

    /// `true` marks a sample as anomalous: `score >= threshold`.
    pub fn predict_labels(&self, x: &Matrix, threshold: f64) -> Result<Vec<bool>> {
        if threshold.is_nan() {
            return Err(Error::Input("threshold is NaN".into()));
        }
        Ok(self.predict_scores(x)?.into_iter().map(|s| s >= threshold).collect())
    }

    /// All-reject rule over per-detector thresholds: detector `i` accepts a
    /// sample when its distance is below the calibrated `gamma_i`; the
    /// sample is anomalous only if no detector accepts it.
    pub fn predict_all_reject(&self, x: &Matrix) -> Result<Vec<bool>> {
        let dist = self.distances(x)?;
        let gammas: Vec<f64> = self
            .detectors
            .iter()
            .map(|d| {
                d.calibration()
                    .map(|c| c.gamma)
                    .ok_or_else(|| Error::State("detector has not been calibrated".into()))
            })
            .collect::<Result<_>>()?;
        Ok((0..x.rows())
            .map(|s| {
                let verdicts: Vec<bool> = dist.iter().zip(&gammas).map(|(d, g)| d[s] < *g).collect();
                or_rule_decide(&verdicts)
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            mode: FusionMode,
            normal_ids: Vec<usize>,
            detectors: Vec<serde_json::Value>,
        }
        let raw: Raw = serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        let detectors = raw
            .detectors
            .iter()
            .map(|v| OneClassDetector::from_json(&v.to_string()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(raw.mode, raw.normal_ids, detectors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

fn check_sets(train: &[Matrix], normal_ids: &[usize]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Config("no normal categories to train on".into()));
    }
    if train.len() != normal_ids.len() {
        return Err(Error::Config(format!(
            "{} training sets for {} normal categories",
            train.len(),
            normal_ids.len()
        )));
    }
    if let Some(i) = train.iter().position(Matrix::is_empty) {
        return Err(Error::Config(format!("training set of category {} is empty", normal_ids[i])));
    }
    Ok(())
}

/// Pretrain, center, then refine against `negatives` (empty for the plain hypersphere objective).
fn fit_one(positives: &Matrix, negatives: Option<&Matrix>, hp: &Hyperparams, modeled: Modeled) -> Result<(Trained, Vec<f64>)> {
    let pre = pretrain_autoencoder(positives, hp)?;
    let center = compute_center(&pre.encoder, positives)?;
    let trained = match negatives {
        Some(neg) => deepmad_finetune(pre.encoder, center, positives, neg, hp, modeled)?,
        None => svdd_train(pre.encoder, center, positives, hp, modeled)?,
    };
    Ok((trained, pre.epoch_losses))
}

fn assemble(mode: FusionMode, normal_ids: &[usize], parts: Vec<(Trained, Vec<f64>)>) -> Result<Fitted> {
    let mut detectors = Vec::with_capacity(parts.len());
    let mut logs = Vec::with_capacity(parts.len());
    for (trained, pretrain) in parts {
        logs.push(DetectorLog {
            modeled: trained.detector.modeled(),
            pretrain,
            finetune: trained.epoch_losses,
        });
        detectors.push(trained.detector);
    }
    Ok(Fitted {
        model: MultiDetector::new(mode, normal_ids.to_vec(), detectors)?,
        logs,
    })
}

/// One hypersphere detector per category, fused by Dempster-Shafer combination.
pub fn train_algorithm1(train: &[Matrix], normal_ids: &[usize], hp: &Hyperparams) -> Result<Fitted> {
    check_sets(train, normal_ids)?;
    let parts = train
        .par_iter()
        .zip(normal_ids)
        .map(|(x, &c)| fit_one(x, None, &hp.with_seed(hp.seed + c as u64), Modeled::Category(c)))
        .collect::<Result<Vec<_>>>()?;
    assemble(FusionMode::DsFusion, normal_ids, parts)
}

/// Seed of the pooled detector. With a single normal category the pooled
/// detector is that category's detector, so it shares its seed.
pub fn pooled_seed(base: u64, normal_ids: &[usize]) -> u64 {
    match normal_ids {
        [only] => base + *only as u64,
        _ => base + POOLED_SEED_OFFSET,
    }
}

/// One hypersphere detector on the union of all normal categories.
pub fn train_algorithm2(train: &[Matrix], normal_ids: &[usize], hp: &Hyperparams) -> Result<Fitted> {
    check_sets(train, normal_ids)?;
    let pooled = Matrix::vstack(&train.iter().collect::<Vec<_>>())?;
    let modeled = match normal_ids {
        [only] => Modeled::Category(*only),
        _ => Modeled::Pooled,
    };
    let part = fit_one(&pooled, None, &hp.with_seed(pooled_seed(hp.seed, normal_ids)), modeled)?;
    assemble(FusionMode::Pooled, normal_ids, vec![part])
}

/// DeepMAD: per category, the remaining normal categories serve as negatives.
pub fn train_deepmad(train: &[Matrix], normal_ids: &[usize], hp: &Hyperparams) -> Result<Fitted> {
    check_sets(train, normal_ids)?;
    let parts = (0..train.len())
        .into_par_iter()
        .map(|i| {
            let others: Vec<&Matrix> = train
                .iter()
                .enumerate()
                .filter_map(|(j, x)| (j != i).then_some(x))
                .collect();
            let negatives = if others.is_empty() {
                Matrix::zeros(0, train[i].cols())
            } else {
                Matrix::vstack(&others)?
            };
            let c = normal_ids[i];
            fit_one(&train[i], Some(&negatives), &hp.with_seed(hp.seed + c as u64), Modeled::Category(c))
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(FusionMode::MinDistance, normal_ids, parts)
}

/// The three pipelines by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Alg1,
    Alg2,
    Deepmad,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Alg1, Algorithm::Alg2, Algorithm::Deepmad];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
            Algorithm::Deepmad => "deepmad",
        }
    }

    pub fn train(self, train: &[Matrix], normal_ids: &[usize], hp: &Hyperparams) -> Result<Fitted> {
        match self {
            Algorithm::Alg1 => train_algorithm1(train, normal_ids, hp),
            Algorithm::Alg2 => train_algorithm2(train, normal_ids, hp),
            Algorithm::Deepmad => train_deepmad(train, normal_ids, hp),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alg1" => Ok(Algorithm::Alg1),
            "alg2" => Ok(Algorithm::Alg2),
            "deepmad" => Ok(Algorithm::Deepmad),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}
