//! Dense feed-forward network.
//!
//! Every hidden layer computes `act(W x + b)`; the final layer is linear.
//! Parameters live in one flat buffer so optimizers and gradient checks can
//! treat them as a single vector. Per layer the buffer holds the weight
//! matrix (row-major, `out x in`) followed by the bias vector when the
//! network uses biases.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Identity,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu { slope: 0.01 }
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    activation: Activation,
    use_bias: bool,
    params: Vec<f64>,
}

/// Intermediate values of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Matrix>,
    /// Pre-activation values of each layer.
    pre: Vec<Matrix>,
}

impl Trace {
    /// Pre-activation values of every layer, first layer first.
    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }

    /// Network output (the last layer is linear, so it equals its pre-activation).
    pub fn output(&self) -> &Matrix {
        self.pre.last().expect("trace of a network with at least one layer")
    }

    pub fn into_output(mut self) -> Matrix {
        self.pre.pop().expect("trace of a network with at least one layer")
    }
}

fn param_count(dims: &[usize], use_bias: bool) -> usize {
    dims.windows(2)
        .map(|w| w[0] * w[1] + if use_bias { w[1] } else { 0 })
        .sum()
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Config(format!(
            "a network needs at least input and output widths, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Config(format!("layer widths must be positive: {dims:?}")));
    }
    Ok(())
}

impl Mlp {
    /// Randomly initialized network: weights uniform in `±sqrt(6 / (fan_in + fan_out))`,
    /// biases zero.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        activation: Activation,
        use_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        validate_dims(dims)?;
        let mut params = Vec::with_capacity(param_count(dims, use_bias));
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit)
                .map_err(|e| Error::Config(format!("init range: {e}")))?;
            params.extend((0..fan_in * fan_out).map(|_| dist.sample(rng)));
            if use_bias {
                params.extend(std::iter::repeat_n(0.0, fan_out));
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
            activation,
            use_bias,
            params,
        })
    }

    /// Network from an existing flat parameter buffer.
    pub fn from_params(
        dims: &[usize],
        activation: Activation,
        use_bias: bool,
        params: Vec<f64>,
    ) -> Result<Self> {
        validate_dims(dims)?;
        let expected = param_count(dims, use_bias);
        if params.len() != expected {
            return Err(Error::Dimension(format!(
                "{} parameters given, layout {dims:?} needs {expected}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(Self {
            dims: dims.to_vec(),
            activation,
            use_bias,
            params,
        })
    }

    /// Network from explicit per-layer weight matrices (`out x in`) and optional biases.
    pub fn from_layers(
        weights: &[Matrix],
        biases: Option<&[Vec<f64>]>,
        activation: Activation,
    ) -> Result<Self> {
        let first = weights
            .first()
            .ok_or_else(|| Error::Config("no layers given".into()))?;
        let mut dims = vec![first.cols()];
        for w in weights {
            if w.cols() != *dims.last().unwrap() {
                return Err(Error::Dimension(format!(
                    "layer expects {} inputs but previous layer emits {}",
                    w.cols(),
                    dims.last().unwrap()
                )));
            }
            dims.push(w.rows());
        }
        let mut params = Vec::new();
        for (l, w) in weights.iter().enumerate() {
            params.extend_from_slice(w.as_slice());
            if let Some(b) = biases {
                let b = b
                    .get(l)
                    .ok_or_else(|| Error::Dimension(format!("missing bias for layer {l}")))?;
                if b.len() != w.rows() {
                    return Err(Error::Dimension(format!("bias {l} has wrong length")));
                }
                params.extend_from_slice(b);
            }
        }
        Self::from_params(&dims, activation, biases.is_some(), params)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn use_bias(&self) -> bool {
        self.use_bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offsets `(weights_start, bias_start, layer_end)` of layer `l` in the buffer.
    fn span(&self, l: usize) -> (usize, usize, usize) {
        let start = param_count(&self.dims[..=l], self.use_bias);
        let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
        let bias_start = start + fan_in * fan_out;
        let end = bias_start + if self.use_bias { fan_out } else { 0 };
        (start, bias_start, end)
    }

    /// Row-major weight matrix of layer `l`.
    pub fn weights(&self, l: usize) -> &[f64] {
        let (w, b, _) = self.span(l);
        &self.params[w..b]
    }

    pub fn bias(&self, l: usize) -> Option<&[f64]> {
        let (_, b, e) = self.span(l);
        self.use_bias.then(|| &self.params[b..e])
    }

    /// Sum of squared Frobenius norms of the weight matrices (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        (0..self.n_layers())
            .map(|l| self.weights(l).iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    /// Adds `lambda * W` to the weight entries of `grad` (gradient of `lambda/2 * sum ||W||^2`).
    pub fn add_weight_decay(&self, grad: &mut [f64], lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        for l in 0..self.n_layers() {
            let (w, b, _) = self.span(l);
            for (g, p) in grad[w..b].iter_mut().zip(&self.params[w..b]) {
                *g += lambda * p;
            }
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "batch has {} features, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn affine(&self, l: usize, input: &Matrix) -> Matrix {
        let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
        let w = self.weights(l);
        let bias = self.bias(l);
        let mut out = Matrix::zeros(input.rows(), fan_out);
        for r in 0..input.rows() {
            let x = input.row(r);
            let o = out.row_mut(r);
            for (j, oj) in o.iter_mut().enumerate() {
                let wj = &w[j * fan_in..(j + 1) * fan_in];
                let mut acc = 0.0;
                for (a, b) in wj.iter().zip(x) {
                    acc += a * b;
                }
                *oj = acc + bias.map_or(0.0, |b| b[j]);
            }
        }
        out
    }

    fn activate(&self, z: &Matrix) -> Matrix {
        let mut a = z.clone();
        for v in a.as_mut_slice() {
            *v = self.activation.apply(*v);
        }
        a
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let last = self.n_layers() - 1;
        let mut h = self.affine(0, x);
        for l in 1..=last {
            let a = self.activate(&h);
            h = self.affine(l, &a);
        }
        Ok(h)
    }

    /// Forward pass of a single sample.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward(&m)?.into_vec())
    }

    /// Forward pass that keeps what [`Mlp::backward`] needs.
    pub fn forward_trace(&self, x: &Matrix) -> Result<Trace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut pre = Vec::with_capacity(self.n_layers());
        inputs.push(x.clone());
        for l in 0..self.n_layers() {
            let z = self.affine(l, &inputs[l]);
            if l + 1 < self.n_layers() {
                inputs.push(self.activate(&z));
            }
            pre.push(z);
        }
        Ok(Trace { inputs, pre })
    }

    /// Backpropagates `grad_out` (d loss / d output, one row per sample) and
    /// returns the parameter gradient in buffer layout.
    pub fn backward(&self, trace: &Trace, grad_out: &Matrix) -> Result<Vec<f64>> {
        self.backprop(trace, grad_out, false).map(|(g, _)| g)
    }

    /// Like [`Mlp::backward`], additionally returning d loss / d input.
    pub fn backward_with_input(&self, trace: &Trace, grad_out: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        self.backprop(trace, grad_out, true)
            .map(|(g, gi)| (g, gi.expect("input gradient requested")))
    }

    fn backprop(
        &self,
        trace: &Trace,
        grad_out: &Matrix,
        want_input: bool,
    ) -> Result<(Vec<f64>, Option<Matrix>)> {
        let out = trace.output();
        if grad_out.rows() != out.rows() || grad_out.cols() != out.cols() {
            return Err(Error::Dimension(format!(
                "output gradient is {}x{}, output is {}x{}",
                grad_out.rows(),
                grad_out.cols(),
                out.rows(),
                out.cols()
            )));
        }
        let mut grad = vec![0.0; self.params.len()];
        // d loss / d pre-activation of the current layer
        let mut delta = grad_out.clone();
        for l in (0..self.n_layers()).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let (ws, bs, _) = self.span(l);
            let input = &trace.inputs[l];
            {
                let gw = &mut grad[ws..bs];
                for r in 0..input.rows() {
                    let x = input.row(r);
                    for (j, &dj) in delta.row(r).iter().enumerate() {
                        if dj == 0.0 {
                            continue;
                        }
                        for (g, xi) in gw[j * fan_in..(j + 1) * fan_in].iter_mut().zip(x) {
                            *g += dj * xi;
                        }
                    }
                }
            }
            if self.use_bias {
                let gb = &mut grad[bs..bs + fan_out];
                for r in 0..delta.rows() {
                    for (g, d) in gb.iter_mut().zip(delta.row(r)) {
                        *g += d;
                    }
                }
            }
            if l == 0 && !want_input {
                break;
            }
            let w = self.weights(l);
            let mut prev = Matrix::zeros(delta.rows(), fan_in);
            for r in 0..delta.rows() {
                let p = prev.row_mut(r);
                for (j, &dj) in delta.row(r).iter().enumerate() {
                    if dj == 0.0 {
                        continue;
                    }
                    for (pi, wi) in p.iter_mut().zip(&w[j * fan_in..(j + 1) * fan_in]) {
                        *pi += dj * wi;
                    }
                }
            }
            if l == 0 {
                return Ok((grad, Some(prev)));
            }
            let z = &trace.pre[l - 1];
            for (d, zv) in prev.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *d *= self.activation.derivative(*zv);
            }
            delta = prev;
        }
        Ok((grad, None))
    }
}
