//! Minimal dense network engine: forward/backward passes, the fixed set of
//! differentiated losses, Adam, and a finite-difference gradient check.

mod adam;
mod gradcheck;
mod matrix;
mod mlp;

use std::str::FromStr;

pub use adam::Adam;
pub use gradcheck::finite_diff_gradcheck;
pub use matrix::Matrix;
pub use mlp::{Activation, Mlp, Trace};

use crate::{Error, Result};

/// Mean over all entries of the squared difference.
pub fn mse_loss(x: &Matrix, x_hat: &Matrix) -> Result<f64> {
    if x.rows() != x_hat.rows() || x.cols() != x_hat.cols() {
        return Err(Error::Dimension(format!(
            "mse of {}x{} against {}x{}",
            x.rows(),
            x.cols(),
            x_hat.rows(),
            x_hat.cols()
        )));
    }
    let n = x.as_slice().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = x
        .as_slice()
        .iter()
        .zip(x_hat.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / n as f64)
}

/// Losses the engine knows how to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTag {
    /// Reconstruction error against a target batch.
    Mse,
    /// Mean squared distance of the outputs to a fixed center.
    CenterDistance,
    /// Center distance plus the squared hinge on negatives.
    DeepMad,
}

impl FromStr for LossTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossTag::Mse),
            "center" | "center_distance" => Ok(LossTag::CenterDistance),
            "deepmad" => Ok(LossTag::DeepMad),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

/// Auxiliary data a loss needs besides the batch.
#[derive(Debug, Clone, Copy)]
pub enum LossAux<'a> {
    Target(&'a Matrix),
    Center(&'a [f64]),
}

/// Loss value and parameter gradient of a single network for the output-level
/// losses ([`LossTag::Mse`] against a target, [`LossTag::CenterDistance`]).
///
/// The DeepMAD objective needs a negative batch as well and is
/// differentiated by [`crate::detectors::deepmad_loss_and_grad`].
pub fn backward(net: &Mlp, loss: LossTag, batch: &Matrix, aux: LossAux<'_>) -> Result<(f64, Vec<f64>)> {
    let trace = net.forward_trace(batch)?;
    let out = trace.output();
    let n = out.rows().max(1) as f64;
    let mut grad_out = Matrix::zeros(out.rows(), out.cols());
    let value = match (loss, aux) {
        (LossTag::Mse, LossAux::Target(target)) => {
            let value = mse_loss(target, out)?;
            let scale = 2.0 / out.as_slice().len().max(1) as f64;
            for ((g, o), t) in grad_out
                .as_mut_slice()
                .iter_mut()
                .zip(out.as_slice())
                .zip(target.as_slice())
            {
                *g = scale * (o - t);
            }
            value
        }
        (LossTag::CenterDistance, LossAux::Center(center)) => {
            if center.len() != out.cols() {
                return Err(Error::Dimension(format!(
                    "center has {} coordinates, output has {}",
                    center.len(),
                    out.cols()
                )));
            }
            let mut value = 0.0;
            for r in 0..out.rows() {
                for ((g, o), c) in grad_out.row_mut(r).iter_mut().zip(out.row(r)).zip(center) {
                    value += (o - c) * (o - c);
                    *g = 2.0 * (o - c) / n;
                }
            }
            value / n
        }
        (LossTag::DeepMad, _) => {
            return Err(Error::Config(
                "deepmad loss needs a negative batch; use detectors::deepmad_loss_and_grad".into(),
            ))
        }
        (tag, _) => {
            return Err(Error::Config(format!("auxiliary data does not fit loss {tag:?}")));
        }
    };
    let grad = net.backward(&trace, &grad_out)?;
    Ok((value, grad))
}
