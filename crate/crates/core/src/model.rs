//! Small fully connected network with manual backpropagation.
//!
//! Parameters live in one flat vector (per layer: row-major weight block
//! `fan_in x fan_out`, then biases), which keeps server-side aggregation a
//! plain weighted vector sum. Hidden layers use ReLU; the output layer is
//! linear and feeds a stable log-softmax cross-entropy.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numkernel::Matrix;
use crate::scalar::Scalar;

/// Flat MLP parameter vector plus its layer-shape descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    layer_sizes: Vec<usize>,
    values: Vec<T>,
}

/// Which layer's output feeds the activation-vector summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActivationLayer {
    /// Post-ReLU output of the last hidden layer.
    #[default]
    Penultimate,
    /// Raw output logits.
    Final,
}

/// A batch of training data: features row-per-sample plus integer labels.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub features: Matrix<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(features: Matrix<T>, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::contract(format!(
                "batch has {} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(Batch { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-client activation summary: a log-probability vector over the chosen
/// layer's units (entries <= 0, exponentials summing to one).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationVector<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> ActivationVector<T> {
    /// Check the log-probability invariant.
    pub fn validate(&self) -> Result<()> {
        if self.values.iter().any(|v| *v > T::zero() || !v.is_finite()) {
            return Err(Error::contract(
                "activation vector entries must be finite log-probabilities <= 0",
            ));
        }
        let mass: f64 = self.values.iter().map(|v| v.as_f64().exp()).sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!(
                "activation vector exponentials sum to {mass}, expected 1"
            )));
        }
        Ok(())
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Total parameter count for a layer-size list.
    pub fn dim_for(layer_sizes: &[usize]) -> usize {
        layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn total_dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    /// Width of the layer feeding the output layer (the input itself for a
    /// single-layer net).
    pub fn penultimate_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 2]
    }

    /// Replace the parameter vector; lengths must match and entries must be
    /// finite.
    pub fn with_values(&self, values: Vec<T>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::contract(format!(
                "parameter vector length {} does not match model dimension {}",
                values.len(),
                self.values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "with_values" });
        }
        Ok(ModelParams {
            layer_sizes: self.layer_sizes.clone(),
            values,
        })
    }

    fn weight_range(&self, l: usize) -> (usize, usize) {
        let mut offset = 0;
        for k in 0..l {
            offset += self.layer_sizes[k] * self.layer_sizes[k + 1] + self.layer_sizes[k + 1];
        }
        (offset, offset + self.layer_sizes[l] * self.layer_sizes[l + 1])
    }

    fn bias_range(&self, l: usize) -> (usize, usize) {
        let (_, wend) = self.weight_range(l);
        (wend, wend + self.layer_sizes[l + 1])
    }

    fn weights(&self, l: usize) -> &[T] {
        let (a, b) = self.weight_range(l);
        &self.values[a..b]
    }

    fn biases(&self, l: usize) -> &[T] {
        let (a, b) = self.bias_range(l);
        &self.values[a..b]
    }

    fn num_weight_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }
}

/// Initialize an MLP with Glorot-uniform weights and zero biases.
pub fn init_mlp<T: Scalar>(layer_sizes: &[usize], rng: &mut impl Rng) -> Result<ModelParams<T>> {
    if layer_sizes.len() < 2 {
        return Err(Error::contract(
            "init_mlp requires at least an input and an output layer",
        ));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::contract("layer sizes must be >= 1"));
    }
    let mut values = Vec::with_capacity(ModelParams::<T>::dim_for(layer_sizes));
    for w in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            let u: f64 = rng.random();
            values.push(T::real(bound * (2.0 * u - 1.0)));
        }
        values.extend(std::iter::repeat_n(T::zero(), fan_out));
    }
    Ok(ModelParams {
        layer_sizes: layer_sizes.to_vec(),
        values,
    })
}

/// Forward pass. Returns `(logits, penult)` where `penult` is the post-ReLU
/// output of the last hidden layer (the input features for a single-layer
/// net).
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Batch<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    if batch.features.cols() != params.input_dim() {
        return Err(Error::contract(format!(
            "batch features have {} columns but the model expects {}",
            batch.features.cols(),
            params.input_dim()
        )));
    }
    let layers = params.num_weight_layers();
    let mut activation = batch.features.clone();
    let mut penult = activation.clone();
    for l in 0..layers {
        let z = affine(params, l, &activation)?;
        if l + 1 < layers {
            activation = relu(z);
            if l + 2 == layers {
                penult = activation.clone();
            }
        } else {
            activation = z;
        }
    }
    Ok((activation, penult))
}

/// Mean cross-entropy loss and its gradient with respect to every parameter.
pub fn loss_and_grad<T: Scalar>(params: &ModelParams<T>, batch: &Batch<T>) -> Result<(T, Vec<T>)> {
    let (loss, grad) = backward(params, batch, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

/// Mean cross-entropy loss only (no gradient work).
pub fn loss<T: Scalar>(params: &ModelParams<T>, batch: &Batch<T>) -> Result<T> {
    let (loss, _) = backward(params, batch, false)?;
    Ok(loss)
}

fn backward<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Batch<T>,
    want_grad: bool,
) -> Result<(T, Option<Vec<T>>)> {
    if batch.is_empty() {
        return Err(Error::contract("loss over an empty batch is undefined"));
    }
    let classes = params.num_classes();
    for &label in &batch.labels {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
    }
    if batch.features.cols() != params.input_dim() {
        return Err(Error::contract(format!(
            "batch features have {} columns but the model expects {}",
            batch.features.cols(),
            params.input_dim()
        )));
    }

    let layers = params.num_weight_layers();
    let b = batch.len();

    // Forward, keeping every layer's activation for the backward pass.
    let mut acts: Vec<Matrix<T>> = Vec::with_capacity(layers + 1);
    acts.push(batch.features.clone());
    for l in 0..layers {
        let z = affine(params, l, &acts[l])?;
        acts.push(if l + 1 < layers { relu(z) } else { z });
    }
    let logits = &acts[layers];

    // Loss and dL/dlogits in one pass over rows.
    let inv_b = T::count(b).recip();
    let mut loss = T::zero();
    let mut dlogits = Matrix::zeros(b, classes);
    for i in 0..b {
        let row = logits.row(i);
        let log_probs = log_softmax_slice(row);
        loss -= log_probs[batch.labels[i]];
        if want_grad {
            for j in 0..classes {
                let p = log_probs[j].exp();
                let indicator = if j == batch.labels[i] { T::one() } else { T::zero() };
                dlogits[(i, j)] = (p - indicator) * inv_b;
            }
        }
    }
    loss *= inv_b;

    if !want_grad {
        return Ok((loss, None));
    }

    let mut grad = vec![T::zero(); params.total_dim()];
    let mut delta = dlogits;
    for l in (0..layers).rev() {
        // dW = acts[l]^T . delta, db = column sums of delta.
        let (wstart, _) = params.weight_range(l);
        let (bstart, _) = params.bias_range(l);
        let fan_in = params.layer_sizes[l];
        let fan_out = params.layer_sizes[l + 1];
        let dw = acts[l].transpose().matmul(&delta)?;
        for r in 0..fan_in {
            for c in 0..fan_out {
                grad[wstart + r * fan_out + c] = dw[(r, c)];
            }
        }
        for c in 0..fan_out {
            let mut sum = T::zero();
            for r in 0..b {
                sum += delta[(r, c)];
            }
            grad[bstart + c] = sum;
        }
        if l > 0 {
            // delta_prev = (delta . W^T) masked by ReLU'.
            let w = weight_matrix(params, l);
            let mut prev = delta.matmul(&w.transpose())?;
            for r in 0..b {
                for c in 0..fan_in {
                    if acts[l][(r, c)] <= T::zero() {
                        prev[(r, c)] = T::zero();
                    }
                }
            }
            delta = prev;
        }
    }

    Ok((loss, Some(grad)))
}

/// Activation vector over a probe batch: per-sample log-softmax of the
/// selected layer's output, averaged across samples and renormalized back
/// onto the log-simplex. For a single-sample probe this is exactly that
/// sample's log-softmax.
pub fn activation_vector<T: Scalar>(
    params: &ModelParams<T>,
    probe: &Batch<T>,
    layer: ActivationLayer,
) -> Result<ActivationVector<T>> {
    if probe.is_empty() {
        return Err(Error::contract(
            "activation vector over an empty probe is undefined",
        ));
    }
    let (logits, penult) = forward(params, probe)?;
    let source = match layer {
        ActivationLayer::Penultimate => &penult,
        ActivationLayer::Final => &logits,
    };
    let dim = source.cols();
    let inv_n = T::count(source.rows()).recip();
    let mut mean = vec![T::zero(); dim];
    for i in 0..source.rows() {
        let lp = log_softmax_slice(source.row(i));
        for (m, v) in mean.iter_mut().zip(&lp) {
            *m += *v * inv_n;
        }
    }
    // The arithmetic mean of log-probability vectors leaks total mass
    // (sum of exponentials < 1); shift it back onto the simplex.
    let values = log_softmax_slice(&mean);
    let av = ActivationVector { values };
    av.validate()?;
    Ok(av)
}

/// Numerically stable log-softmax: `v_i - max(v) - ln(sum exp(v_j - max(v)))`.
pub fn log_softmax<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::contract("log_softmax of an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "log_softmax" });
    }
    Ok(log_softmax_slice(v))
}

fn log_softmax_slice<T: Scalar>(v: &[T]) -> Vec<T> {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let log_sum = v
        .iter()
        .map(|x| (*x - max).exp())
        .sum::<T>()
        .ln();
    v.iter().map(|x| *x - max - log_sum).collect()
}

fn affine<T: Scalar>(params: &ModelParams<T>, l: usize, input: &Matrix<T>) -> Result<Matrix<T>> {
    let w = weight_matrix(params, l);
    let mut z = input.matmul(&w)?;
    let biases = params.biases(l);
    for i in 0..z.rows() {
        for (j, bias) in biases.iter().enumerate() {
            z[(i, j)] += *bias;
        }
    }
    Ok(z)
}

fn weight_matrix<T: Scalar>(params: &ModelParams<T>, l: usize) -> Matrix<T> {
    let fan_in = params.layer_sizes[l];
    let fan_out = params.layer_sizes[l + 1];
    Matrix::from_vec(fan_in, fan_out, params.weights(l).to_vec())
        .expect("weight block is finite by construction")
}

fn relu<T: Scalar>(mut m: Matrix<T>) -> Matrix<T> {
    for i in 0..m.rows() {
        for v in m.row_mut(i) {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
    }
    m
}
