//! One-class detectors built on a bias-free encoder and a fixed latent center.
//!
//! Training runs in two phases: an autoencoder is fit by reconstruction MSE,
//! then the encoder alone is refined with a center loss. The center loss is
//! either the plain hypersphere objective (mean squared distance to the
//! center) or the DeepMAD objective, which adds a squared hinge pushing
//! samples of the other normal categories at least `delta` away.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{mse_loss, Activation, Adam, Matrix, Mlp};
use crate::{Error, Result};

/// Lower and upper clamp on calibrated probabilities.
pub const PROB_FLOOR: f64 = 1e-6;
pub const PROB_CEIL: f64 = 1.0 - 1e-6;

const PRETRAIN_STREAM: u64 = 0;
const FINETUNE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Weight of the hinge term.
    pub eta: f64,
    /// Hinge margin in latent space.
    pub delta: f64,
    /// Weight decay on the encoder weight matrices.
    pub lambda: f64,
    pub lr_pretrain: f64,
    pub lr_finetune: f64,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub batch_size: usize,
    pub gamma_quantile: f64,
    pub latent_dim: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            eta: 1.0,
            delta: 2.0,
            lambda: 1e-4,
            lr_pretrain: 1e-3,
            lr_finetune: 1e-4,
            epochs_pretrain: 30,
            epochs_finetune: 30,
            batch_size: 64,
            gamma_quantile: 0.95,
            latent_dim: 32,
            hidden: vec![128, 64],
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eta", self.eta),
            ("delta", self.delta),
            ("lr_pretrain", self.lr_pretrain),
            ("lr_finetune", self.lr_finetune),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.gamma_quantile > 0.0 && self.gamma_quantile < 1.0) {
            return Err(Error::Config(format!(
                "gamma_quantile must lie in (0, 1), got {}",
                self.gamma_quantile
            )));
        }
        if self.batch_size == 0 || self.latent_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("batch size and layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn encoder_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(self.latent_dim);
        dims
    }

    pub fn decoder_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = self.encoder_dims(input_dim);
        dims.reverse();
        dims
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Result of autoencoder pretraining.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub initial_mse: f64,
    pub final_mse: f64,
    /// Mean minibatch reconstruction loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

fn reconstruction_mse(encoder: &Mlp, decoder: &Mlp, x: &Matrix) -> Result<f64> {
    let latent = encoder.forward(x)?;
    mse_loss(x, &decoder.forward(&latent)?)
}

/// Fits an autoencoder (bias-free encoder, biased decoder) to `x` by minibatch Adam on MSE.
pub fn pretrain_autoencoder(x: &Matrix, hp: &Hyperparams) -> Result<Pretrained> {
    hp.validate()?;
    if x.is_empty() {
        return Err(Error::Config("cannot pretrain on an empty set".into()));
    }
    let mut rng = hp.rng(PRETRAIN_STREAM);
    let d = x.cols();
    let mut encoder = Mlp::new(&hp.encoder_dims(d), Activation::default(), false, &mut rng)?;
    let mut decoder = Mlp::new(&hp.decoder_dims(d), Activation::default(), true, &mut rng)?;
    let initial_mse = reconstruction_mse(&encoder, &decoder, x)?;

    let mut adam_enc = Adam::new(encoder.params().len());
    let mut adam_dec = Adam::new(decoder.params().len());
    let batch = hp.batch_size.min(x.rows());
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut epoch_losses = Vec::with_capacity(hp.epochs_pretrain);
    for _ in 0..hp.epochs_pretrain {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let xb = x.select_rows(chunk);
            let enc_trace = encoder.forward_trace(&xb)?;
            let dec_trace = decoder.forward_trace(enc_trace.output())?;
            let recon = dec_trace.output();
            let loss = mse_loss(&xb, recon)?;
            let scale = 2.0 / recon.as_slice().len() as f64;
            let mut grad_out = recon.clone();
            for (g, t) in grad_out.as_mut_slice().iter_mut().zip(xb.as_slice()) {
                *g = scale * (*g - t);
            }
            let (grad_dec, grad_latent) = decoder.backward_with_input(&dec_trace, &grad_out)?;
            let grad_enc = encoder.backward(&enc_trace, &grad_latent)?;
            adam_dec.step(decoder.params_mut(), &grad_dec, hp.lr_pretrain)?;
            adam_enc.step(encoder.params_mut(), &grad_enc, hp.lr_pretrain)?;
            total += loss * chunk.len() as f64;
        }
        epoch_losses.push(total / x.rows() as f64);
    }
    let final_mse = reconstruction_mse(&encoder, &decoder, x)?;
    Ok(Pretrained {
        encoder,
        decoder,
        initial_mse,
        final_mse,
        epoch_losses,
    })
}

/// Mean encoder output over `x`; coordinates with magnitude below 0.01 are
/// pushed to ±0.1 (sign kept, zero counted as positive).
pub fn compute_center(encoder: &Mlp, x: &Matrix) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Input("cannot compute a center from no samples".into()));
    }
    let z = encoder.forward(x)?;
    let mut center = vec![0.0; z.cols()];
    for row in z.iter_rows() {
        for (c, v) in center.iter_mut().zip(row) {
            *c += v;
        }
    }
    for c in &mut center {
        *c /= z.rows() as f64;
        if c.abs() < 0.01 {
            *c = if *c < 0.0 { -0.1 } else { 0.1 };
        }
    }
    Ok(center)
}

/// Weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub eta: f64,
    pub delta: f64,
    pub lambda: f64,
}

impl From<&Hyperparams> for LossWeights {
    fn from(hp: &Hyperparams) -> Self {
        Self {
            eta: hp.eta,
            delta: hp.delta,
            lambda: hp.lambda,
        }
    }
}

/// Sizes of the full sets a minibatch is drawn from.
///
/// `total` is the normalizer N; positive and negative minibatch sums are
/// scaled by `positives / batch_rows` and `negatives / batch_rows` so they
/// estimate the full-set sums without bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Population {
    pub total: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl Population {
    /// The batches are the whole sets.
    pub fn full(pos: &Matrix, neg: &Matrix) -> Self {
        Self {
            total: (pos.rows() + neg.rows()) as f64,
            positives: pos.rows(),
            negatives: neg.rows(),
        }
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// DeepMAD objective: scaled mean squared positive distance, `eta`-weighted
/// squared hinge `max(0, delta - ||E(x) - c||)^2` over negatives, and
/// `lambda/2 * sum ||W||_F^2`.
pub fn deepmad_loss(
    encoder: &Mlp,
    center: &[f64],
    pos: &Matrix,
    neg: &Matrix,
    weights: &LossWeights,
    population: &Population,
) -> Result<f64> {
    evaluate(encoder, center, pos, neg, weights, population, false).map(|(v, _)| v)
}

/// [`deepmad_loss`] together with its gradient in the encoder's parameter layout.
pub fn deepmad_loss_and_grad(
    encoder: &Mlp,
    center: &[f64],
    pos: &Matrix,
    neg: &Matrix,
    weights: &LossWeights,
    population: &Population,
) -> Result<(f64, Vec<f64>)> {
    evaluate(encoder, center, pos, neg, weights, population, true)
        .map(|(v, g)| (v, g.expect("gradient requested")))
}

fn evaluate(
    encoder: &Mlp,
    center: &[f64],
    pos: &Matrix,
    neg: &Matrix,
    weights: &LossWeights,
    population: &Population,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if weights.delta.is_nan() || weights.delta <= 0.0 {
        return Err(Error::Config(format!("hinge margin must be positive, got {}", weights.delta)));
    }
    if population.total.is_nan() || population.total <= 0.0 {
        return Err(Error::Config("loss normalizer must be positive".into()));
    }
    if center.len() != encoder.output_dim() {
        return Err(Error::Dimension(format!(
            "center has {} coordinates, encoder emits {}",
            center.len(),
            encoder.output_dim()
        )));
    }
    let n = population.total;
    let mut value = 0.5 * weights.lambda * encoder.weight_sq_norm();
    let mut grad = want_grad.then(|| vec![0.0; encoder.params().len()]);

    if !pos.is_empty() {
        let coef = population.positives as f64 / pos.rows() as f64 / n;
        let trace = encoder.forward_trace(pos)?;
        let z = trace.output();
        let mut g_out = Matrix::zeros(z.rows(), z.cols());
        for r in 0..z.rows() {
            for ((g, zv), c) in g_out.row_mut(r).iter_mut().zip(z.row(r)).zip(center) {
                value += coef * (zv - c) * (zv - c);
                *g = 2.0 * coef * (zv - c);
            }
        }
        if let Some(grad) = grad.as_mut() {
            for (a, b) in grad.iter_mut().zip(encoder.backward(&trace, &g_out)?) {
                *a += b;
            }
        }
    }

    if !neg.is_empty() && weights.eta != 0.0 {
        let coef = weights.eta * population.negatives as f64 / neg.rows() as f64 / n;
        let trace = encoder.forward_trace(neg)?;
        let z = trace.output();
        let mut g_out = Matrix::zeros(z.rows(), z.cols());
        for r in 0..z.rows() {
            let dist = euclid(z.row(r), center);
            let hinge = (weights.delta - dist).max(0.0);
            value += coef * hinge * hinge;
            if hinge > 0.0 && dist > 0.0 {
                // d/dz (delta - ||z - c||)^2 = -2 hinge (z - c) / ||z - c||
                let s = -2.0 * coef * hinge / dist;
                for ((g, zv), c) in g_out.row_mut(r).iter_mut().zip(z.row(r)).zip(center) {
                    *g = s * (zv - c);
                }
            }
        }
        if let Some(grad) = grad.as_mut() {
            for (a, b) in grad.iter_mut().zip(encoder.backward(&trace, &g_out)?) {
                *a += b;
            }
        }
    }

    if let Some(grad) = grad.as_mut() {
        encoder.add_weight_decay(grad, weights.lambda);
    }
    Ok((value, grad))
}

/// Which normal data a detector models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modeled {
    Category(usize),
    Pooled,
}

impl fmt::Display for Modeled {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modeled::Category(c) => write!(f, "{c}"),
            Modeled::Pooled => f.write_str("pooled"),
        }
    }
}

/// Threshold and temperature of the distance-to-probability map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub gamma: f64,
    pub tau: f64,
}

impl Calibration {
    /// `gamma` is the `quantile` of `distances`, `tau` their median absolute
    /// deviation (at least 1e-6).
    pub fn from_distances(distances: &[f64], quantile: f64) -> Result<Self> {
        if distances.is_empty() {
            return Err(Error::Input("cannot calibrate on no distances".into()));
        }
        let mut sorted = distances.to_vec();
        sorted.sort_by(f64::total_cmp);
        let gamma = quantile_sorted(&sorted, quantile);
        let median = quantile_sorted(&sorted, 0.5);
        let mut dev: Vec<f64> = sorted.iter().map(|d| (d - median).abs()).collect();
        dev.sort_by(f64::total_cmp);
        let tau = quantile_sorted(&dev, 0.5).max(1e-6);
        Ok(Self { gamma, tau })
    }

    /// `logistic((gamma - distance) / tau)`, clamped to `[1e-6, 1 - 1e-6]`.
    pub fn probability(&self, distance: f64) -> f64 {
        let p = 1.0 / (1.0 + (-(self.gamma - distance) / self.tau).exp());
        p.clamp(PROB_FLOOR, PROB_CEIL)
    }
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Encoder, center and calibration of one trained one-class detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneClassDetector {
    encoder: Mlp,
    center: Vec<f64>,
    calibration: Option<Calibration>,
    modeled: Modeled,
}

impl OneClassDetector {
    pub fn new(encoder: Mlp, center: Vec<f64>, modeled: Modeled) -> Result<Self> {
        if encoder.use_bias() {
            return Err(Error::Config("center-loss encoders must be bias-free".into()));
        }
        if center.len() != encoder.output_dim() {
            return Err(Error::Dimension(format!(
                "center has {} coordinates, encoder emits {}",
                center.len(),
                encoder.output_dim()
            )));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric("non-finite center".into()));
        }
        Ok(Self {
            encoder,
            center,
            calibration: None,
            modeled,
        })
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn calibration(&self) -> Option<Calibration> {
        self.calibration
    }

    pub fn modeled(&self) -> Modeled {
        self.modeled
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Distance `||E(x) - c||` of one sample.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let z = self.encoder.forward_one(x)?;
        Ok(euclid(&z, &self.center))
    }

    /// Distances of every row of `x`.
    pub fn score_batch(&self, x: &Matrix) -> Result<Vec<f64>> {
        let z = self.encoder.forward(x)?;
        Ok(z.iter_rows().map(|r| euclid(r, &self.center)).collect())
    }

    /// Calibrates against the distances of `x`, normally the training set.
    pub fn calibrate(&mut self, x: &Matrix, quantile: f64) -> Result<()> {
        let distances = self.score_batch(x)?;
        self.calibration = Some(Calibration::from_distances(&distances, quantile)?);
        Ok(())
    }

    pub fn set_calibration(&mut self, calibration: Calibration) {
        self.calibration = Some(calibration);
    }

    /// Probability that a sample at `distance` belongs to the modeled category.
    pub fn calibrate_probability(&self, distance: f64) -> Result<f64> {
        self.calibration
            .map(|c| c.probability(distance))
            .ok_or_else(|| Error::State("detector has not been calibrated".into()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        // re-run constructor checks on the decoded parts
        let calibration = d.calibration;
        let mut checked = Self::new(
            Mlp::from_params(
                d.encoder.dims(),
                d.encoder.activation(),
                d.encoder.use_bias(),
                d.encoder.params().to_vec(),
            )?,
            d.center,
            d.modeled,
        )?;
        if let Some(c) = calibration {
            if !(c.tau > 0.0 && c.gamma >= 0.0 && c.tau.is_finite() && c.gamma.is_finite()) {
                return Err(Error::Serde(format!("invalid calibration {c:?}")));
            }
            checked.calibration = Some(c);
        }
        Ok(checked)
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

/// A trained detector plus the mean minibatch objective of every epoch.
#[derive(Debug, Clone)]
pub struct Trained {
    pub detector: OneClassDetector,
    pub epoch_losses: Vec<f64>,
}

/// Walks a shuffled permutation, reshuffling whenever it runs out.
struct CyclicSampler {
    order: Vec<usize>,
    pos: usize,
}

impl CyclicSampler {
    fn new<R: Rng>(n: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn draw<R: Rng>(&mut self, count: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let take = (count - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

/// Minibatch sizes for `n_pos : n_neg` proportional sampling.
fn batch_split(batch: usize, n_pos: usize, n_neg: usize) -> (usize, usize) {
    if n_neg == 0 {
        return (batch.min(n_pos), 0);
    }
    let batch = batch.min(n_pos + n_neg).max(2);
    let share = (batch as f64 * n_pos as f64 / (n_pos + n_neg) as f64).round() as usize;
    let b_pos = share.clamp(1, batch - 1);
    (b_pos, batch - b_pos)
}

fn train_center_loss(
    mut encoder: Mlp,
    center: Vec<f64>,
    pos: &Matrix,
    neg: &Matrix,
    hp: &Hyperparams,
    modeled: Modeled,
) -> Result<Trained> {
    hp.validate()?;
    if pos.is_empty() {
        return Err(Error::Config("no training samples for the modeled category".into()));
    }
    if !neg.is_empty() && neg.cols() != pos.cols() {
        return Err(Error::Dimension("positive and negative sets differ in width".into()));
    }
    let mut detector = OneClassDetector::new(encoder.clone(), center, modeled)?;
    let mut rng = hp.rng(FINETUNE_STREAM);
    let weights = LossWeights::from(hp);
    let population = Population::full(pos, neg);
    let (b_pos, b_neg) = batch_split(hp.batch_size, pos.rows(), neg.rows());
    let steps = (pos.rows() + neg.rows()).div_ceil(b_pos + b_neg);
    let mut pos_sampler = CyclicSampler::new(pos.rows(), &mut rng);
    let mut neg_sampler = CyclicSampler::new(neg.rows(), &mut rng);
    let mut adam = Adam::new(encoder.params().len());
    let empty = Matrix::zeros(0, pos.cols());
    let mut epoch_losses = Vec::with_capacity(hp.epochs_finetune);

    for _ in 0..hp.epochs_finetune {
        let mut total = 0.0;
        for _ in 0..steps {
            let pb = pos.select_rows(&pos_sampler.draw(b_pos, &mut rng));
            let nb = if b_neg > 0 {
                neg.select_rows(&neg_sampler.draw(b_neg, &mut rng))
            } else {
                empty.clone()
            };
            let (loss, grad) = deepmad_loss_and_grad(&encoder, &detector.center, &pb, &nb, &weights, &population)?;
            adam.step(encoder.params_mut(), &grad, hp.lr_finetune)?;
            total += loss;
        }
        epoch_losses.push(total / steps as f64);
    }
    detector.encoder = encoder;
    detector.calibrate(pos, hp.gamma_quantile)?;
    Ok(Trained {
        detector,
        epoch_losses,
    })
}

/// Hypersphere training: minimizes mean squared distance to the fixed
/// center plus weight decay, then calibrates on `x_normal`.
pub fn svdd_train(
    encoder: Mlp,
    center: Vec<f64>,
    x_normal: &Matrix,
    hp: &Hyperparams,
    modeled: Modeled,
) -> Result<Trained> {
    let empty = Matrix::zeros(0, x_normal.cols());
    train_center_loss(encoder, center, x_normal, &empty, hp, modeled)
}

/// DeepMAD refinement of a pretrained encoder: samples of the modeled
/// category are pulled to the center, samples of the other normal
/// categories pushed beyond the margin.
pub fn deepmad_finetune(
    encoder: Mlp,
    center: Vec<f64>,
    x_own: &Matrix,
    x_other: &Matrix,
    hp: &Hyperparams,
    modeled: Modeled,
) -> Result<Trained> {
    train_center_loss(encoder, center, x_own, x_other, hp, modeled)
}
