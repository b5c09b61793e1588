//! A small differentiable kernel for point-wise networks.
//!
//! Activations are N×d matrices with one row per point. Dense layers are
//! shared across rows, so every op here is row-parallel except the max-pool,
//! which reduces over rows.

mod adam;
mod gradcheck;
mod serialize;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use gradcheck::gradient_check;
pub use serialize::{load_params, read_params, save_params, write_params, PARAMS_MAGIC, PARAMS_VERSION};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{derive_rng_stream, fill_dropout_mask, RngStreamKey};
use crate::types::ClassProbabilities;

/// Affine layer applied to every point row: `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// out×in
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Uniform in ±sqrt(6/(fan_in+fan_out)), zero bias.
    pub fn glorot(inputs: usize, outputs: usize, key: RngStreamKey) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut rng = derive_rng_stream(key);
        Dense {
            weight: Array2::from_shape_simple_fn((outputs, inputs), || {
                rng.random_range(-limit..limit)
            }),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Ordered dense layers of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Dense>,
}

/// Gradients mirroring a [`ModelParams`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Dense>,
}

impl ModelParams {
    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    /// Flat view of parameter `k` in (layer-major, weight-then-bias) order.
    pub fn get_flat(&self, k: usize) -> f64 {
        flat_get(&self.layers, k)
    }

    pub fn set_flat(&mut self, mut k: usize, value: f64) {
        for l in &mut self.layers {
            if k < l.weight.len() {
                let cols = l.weight.ncols();
                l.weight[[k / cols, k % cols]] = value;
                return;
            }
            k -= l.weight.len();
            if k < l.bias.len() {
                l.bias[k] = value;
                return;
            }
            k -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    /// Checks consecutive dimension compatibility of a plain layer chain.
    pub fn check_chain(&self) -> Result<()> {
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} outputs {} but layer {} takes {}",
                    i,
                    w[0].outputs(),
                    i + 1,
                    w[1].inputs()
                )));
            }
        }
        Ok(())
    }
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        GradientSet {
            layers: params
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn is_congruent(&self, params: &ModelParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, p)| g.weight.dim() == p.weight.dim() && g.bias.dim() == p.bias.dim())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    pub fn get_flat(&self, k: usize) -> f64 {
        flat_get(&self.layers, k)
    }

    /// `self += other`, layer by layer.
    pub fn accumulate(&mut self, other: &GradientSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight *= s;
            l.bias *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn flat_get(layers: &[Dense], mut k: usize) -> f64 {
    for l in layers {
        if k < l.weight.len() {
            return l.weight[[k / l.weight.ncols(), k % l.weight.ncols()]];
        }
        k -= l.weight.len();
        if k < l.bias.len() {
            return l.bias[k];
        }
        k -= l.bias.len();
    }
    panic!("parameter index out of range")
}

/// `out[i] = W · act[i] + b` for every row.
pub fn dense_forward(layer: &Dense, activations: ArrayView2<f64>) -> Result<Array2<f64>> {
    if activations.ncols() != layer.inputs() {
        return Err(Error::ShapeMismatch(format!(
            "dense layer expects {} inputs, got {}",
            layer.inputs(),
            activations.ncols()
        )));
    }
    let mut out = activations.dot(&layer.weight.t());
    out += &layer.bias;
    Ok(out)
}

/// Gradients of a dense layer given its input and the upstream gradient.
/// Returns `(grad_layer, grad_input)`.
pub fn dense_backward(
    layer: &Dense,
    input: ArrayView2<f64>,
    upstream: ArrayView2<f64>,
) -> (Dense, Array2<f64>) {
    let grad = Dense {
        weight: upstream.t().dot(&input),
        bias: upstream.sum_axis(Axis(0)),
    };
    (grad, upstream.dot(&layer.weight))
}

pub fn relu_inplace(x: &mut Array2<f64>) {
    x.par_mapv_inplace(|v| v.max(0.0));
}

/// Masks `upstream` where the ReLU output was not positive.
pub fn relu_backward(output: ArrayView2<f64>, upstream: &mut Array2<f64>) {
    Zip::from(upstream)
        .and(output)
        .par_for_each(|g, &o| {
            if o <= 0.0 {
                *g = 0.0;
            }
        });
}

/// Which hidden layers are followed by dropout, and at what rate.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutSpec {
    pub flags: Vec<bool>,
    pub rate: f64,
}

impl DropoutSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must be in [0, 1), got {}",
                self.rate
            )));
        }
        Ok(())
    }

    pub fn any_enabled(&self) -> bool {
        self.flags.iter().any(|&f| f)
    }
}

/// Inverted dropout with an independent mask per point row. Row `i` draws
/// its mask from the stream `keys[i]`. Returns the masked activations and
/// the multiplier matrix (0 or 1/(1-p)) for the backward pass.
pub fn pointwise_dropout(
    activations: ArrayView2<f64>,
    rate: f64,
    keys: &[RngStreamKey],
) -> Result<(Array2<f64>, Array2<f64>)> {
    if keys.len() != activations.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} mask keys for {} rows",
            keys.len(),
            activations.nrows()
        )));
    }
    let mut mask = Array2::<f64>::zeros(activations.raw_dim());
    mask.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(keys.par_iter())
        .for_each(|(mut row, &key)| {
            fill_dropout_mask(key, rate, row.as_slice_mut().expect("standard layout"));
        });
    let out = &activations * &mask;
    Ok((out, mask))
}

/// Column-wise maximum over points, with the winning row per column
/// (first row on ties).
pub fn maxpool_points(activations: ArrayView2<f64>) -> Result<(Array1<f64>, Vec<usize>)> {
    if activations.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    let d = activations.ncols();
    let mut best = activations.row(0).to_owned();
    let mut arg = vec![0usize; d];
    for (i, row) in activations.rows().into_iter().enumerate().skip(1) {
        for j in 0..d {
            if row[j] > best[j] {
                best[j] = row[j];
                arg[j] = i;
            }
        }
    }
    Ok((best, arg))
}

/// Routes a pooled gradient back to the argmax rows.
pub fn maxpool_backward(pooled_grad: &Array1<f64>, argmax: &[usize], n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, pooled_grad.len()));
    for (j, &i) in argmax.iter().enumerate() {
        out[[i, j]] += pooled_grad[j];
    }
    out
}

/// Max-subtracted softmax of every row.
pub fn softmax_rows(logits: ArrayView2<f64>) -> ClassProbabilities {
    let mut out = logits.to_owned();
    out.axis_iter_mut(Axis(0)).into_par_iter().for_each(|mut row| {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    });
    ClassProbabilities(out)
}
