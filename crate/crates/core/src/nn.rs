//! Feed-forward ReLU network with a single logit output.
//!
//! Parameters live in one flat [`ParamVector`] in canonical layer-major order
//! (`W_0` row-major, `b_0`, `W_1`, `b_1`, ...). Aggregation, distances and
//! kernel dot products all work on that flat view directly.

use std::io::{Read, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Flat parameter vector in canonical order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn check_len(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_len(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) -> Result<()> {
        self.check_len(other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
        Ok(())
    }

    /// `self - other`
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_len(other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Euclidean distance between two parameter vectors.
pub fn l2_distance(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    a.check_len(b)?;
    Ok(a.0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a raw logit, in log-sum-exp form.
pub fn bce_loss(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// d bce / d logit
pub fn bce_grad(logit: f64, y: f64) -> f64 {
    sigmoid(logit) - y
}

/// Activations recorded during a forward pass.
///
/// `activations[0]` is the input, `activations[l]` the post-ReLU output of
/// layer `l` (for hidden layers) and `activations[L]` holds the single logit.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub activations: Vec<Vec<f64>>,
    pub pre_activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn logit(&self) -> f64 {
        self.activations.last().expect("trace has an output layer")[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    params: ParamVector,
}

pub fn param_count(layer_dims: &[usize]) -> usize {
    layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::InvalidModel(
            "need at least an input and an output layer".into(),
        ));
    }
    if layer_dims.contains(&0) {
        return Err(Error::InvalidModel("layer widths must be positive".into()));
    }
    if *layer_dims.last().unwrap() != 1 {
        return Err(Error::InvalidModel(
            "output layer must have exactly one unit".into(),
        ));
    }
    Ok(())
}

impl MlpModel {
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        validate_dims(layer_dims)?;
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            params: ParamVector::zeros(param_count(layer_dims)),
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(layer_dims: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut model = Self::zeros(layer_dims)?;
        for l in 0..model.num_layers() {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let off = model.weight_offset(l);
            for v in &mut model.params.0[off..off + fan_in * fan_out] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    /// Builds a model from explicit per-layer `(weights, biases)`, weights
    /// given as rows (`out` rows of `in` entries).
    pub fn from_layers(layer_dims: &[usize], layers: &[(Vec<Vec<f64>>, Vec<f64>)]) -> Result<Self> {
        let mut model = Self::zeros(layer_dims)?;
        if layers.len() != model.num_layers() {
            return Err(Error::InvalidModel(format!(
                "expected {} layers, got {}",
                model.num_layers(),
                layers.len()
            )));
        }
        for (l, (w, b)) in layers.iter().enumerate() {
            let (n_in, n_out) = (layer_dims[l], layer_dims[l + 1]);
            if w.len() != n_out || w.iter().any(|r| r.len() != n_in) || b.len() != n_out {
                return Err(Error::InvalidModel(format!("layer {l} has wrong shape")));
            }
            for q in 0..n_out {
                for p in 0..n_in {
                    model.set_weight(l, q, p, w[q][p]);
                }
                model.set_bias(l, q, b[q]);
            }
        }
        Ok(model)
    }

    /// Rebuilds a model from its flat parameters.
    pub fn unflatten(layer_dims: &[usize], params: ParamVector) -> Result<Self> {
        validate_dims(layer_dims)?;
        let expected = param_count(layer_dims);
        if params.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: params.len(),
            });
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            params,
        })
    }

    pub fn flatten(&self) -> ParamVector {
        self.params.clone()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Number of weight layers.
    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn weight_offset(&self, layer: usize) -> usize {
        param_count(&self.layer_dims[..=layer])
    }

    pub fn bias_offset(&self, layer: usize) -> usize {
        self.weight_offset(layer) + self.layer_dims[layer] * self.layer_dims[layer + 1]
    }

    pub fn weight(&self, layer: usize, q: usize, p: usize) -> f64 {
        self.params.0[self.weight_offset(layer) + q * self.layer_dims[layer] + p]
    }

    pub fn set_weight(&mut self, layer: usize, q: usize, p: usize, v: f64) {
        let i = self.weight_offset(layer) + q * self.layer_dims[layer] + p;
        self.params.0[i] = v;
    }

    pub fn bias(&self, layer: usize, q: usize) -> f64 {
        self.params.0[self.bias_offset(layer) + q]
    }

    pub fn set_bias(&mut self, layer: usize, q: usize, v: f64) {
        let i = self.bias_offset(layer) + q;
        self.params.0[i] = v;
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let n_layers = self.num_layers();
        let mut activations = Vec::with_capacity(n_layers + 1);
        let mut pre_activations = Vec::with_capacity(n_layers);
        activations.push(x.to_vec());
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = &self.params.0[self.weight_offset(l)..self.bias_offset(l)];
            let b = &self.params.0[self.bias_offset(l)..self.bias_offset(l) + n_out];
            let input = &activations[l];
            let z: Vec<f64> = (0..n_out)
                .map(|q| {
                    let row = &w[q * n_in..(q + 1) * n_in];
                    b[q] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let a = if l + 1 == n_layers {
                z.clone()
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardTrace {
            activations,
            pre_activations,
        })
    }

    /// Raw pre-sigmoid output.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_trace(x)?.logit())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.forward(x)?))
    }

    /// Accumulates `scale * d logit / d theta` into `grad` using a recorded trace.
    fn accumulate_output_grad(&self, trace: &ForwardTrace, scale: f64, grad: &mut [f64]) {
        let mut delta = vec![scale];
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w_off = self.weight_offset(l);
            let b_off = self.bias_offset(l);
            let input = &trace.activations[l];
            for q in 0..n_out {
                let d = delta[q];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[w_off + q * n_in..w_off + (q + 1) * n_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[b_off + q] += d;
            }
            if l > 0 {
                let w = &self.params.0[w_off..b_off];
                let z_prev = &trace.pre_activations[l - 1];
                let mut prev = vec![0.0; n_in];
                for q in 0..n_out {
                    let d = delta[q];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, v) in prev.iter_mut().enumerate() {
                        *v += w[q * n_in + p] * d;
                    }
                }
                for (v, z) in prev.iter_mut().zip(z_prev) {
                    if *z <= 0.0 {
                        *v = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Gradient of the raw logit with respect to every parameter.
    pub fn per_sample_output_grad(&self, x: &[f64]) -> Result<ParamVector> {
        let trace = self.forward_trace(x)?;
        let mut grad = vec![0.0; self.num_params()];
        self.accumulate_output_grad(&trace, 1.0, &mut grad);
        Ok(ParamVector(grad))
    }

    /// Gradient of `mean_i bce(f(x_i), y_i) + sum_i extra_i * f(x_i)`.
    ///
    /// `extra` carries per-sample derivatives of any additional batch-level
    /// objective with respect to the sample's logit (the fairness penalty
    /// uses this); it is added to the output gradient unscaled.
    pub fn backward(&self, batch: &[&Sample], extra: Option<&[f64]>) -> Result<ParamVector> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("backward batch"));
        }
        if let Some(e) = extra {
            if e.len() != batch.len() {
                return Err(Error::LengthMismatch {
                    expected: batch.len(),
                    got: e.len(),
                });
            }
        }
        let inv_n = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.num_params()];
        for (i, s) in batch.iter().enumerate() {
            let trace = self.forward_trace(&s.features)?;
            let mut d = bce_grad(trace.logit(), s.label_f64()) * inv_n;
            if let Some(e) = extra {
                d += e[i];
            }
            self.accumulate_output_grad(&trace, d, &mut grad);
        }
        Ok(ParamVector(grad))
    }

    /// Mean BCE over a set of samples.
    pub fn mean_loss<'a>(&self, samples: impl IntoIterator<Item = &'a Sample>) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for s in samples {
            total += bce_loss(self.forward(&s.features)?, s.label_f64());
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyInput("loss evaluation set"));
        }
        Ok(total / n as f64)
    }
}

/// SGD with heavy-ball momentum.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub momentum_buffer: ParamVector,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl OptimizerState {
    pub fn new(num_params: usize, learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        Ok(Self {
            momentum_buffer: ParamVector::zeros(num_params),
            learning_rate,
            momentum,
        })
    }

    /// `v <- momentum * v + grad; theta <- theta - lr * v`
    pub fn step(&mut self, model: &mut MlpModel, grad: &ParamVector) -> Result<()> {
        if grad.len() != model.num_params() || self.momentum_buffer.len() != model.num_params() {
            return Err(Error::LengthMismatch {
                expected: model.num_params(),
                got: grad.len(),
            });
        }
        for ((v, g), theta) in self
            .momentum_buffer
            .0
            .iter_mut()
            .zip(&grad.0)
            .zip(model.params.0.iter_mut())
        {
            *v = self.momentum * *v + g;
            *theta -= self.learning_rate * *v;
        }
        Ok(())
    }
}

/// Functional form of [`OptimizerState::step`].
pub fn sgd_step(
    mut model: MlpModel,
    grad: &ParamVector,
    state: &mut OptimizerState,
) -> Result<MlpModel> {
    state.step(&mut model, grad)?;
    Ok(model)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"EABM";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes a model checkpoint.
///
/// Layout (all integers and floats little-endian):
/// `b"EABM"`, `u32` version (1), `u32` number of layer widths `n`,
/// `n` x `u32` layer widths, `u64` parameter count `P`, `P` x `f64`
/// parameters in canonical order.
pub fn write_checkpoint<W: Write>(model: &MlpModel, mut out: W) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(model.layer_dims.len() as u32).to_le_bytes())?;
    for &d in &model.layer_dims {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    out.write_all(&(model.num_params() as u64).to_le_bytes())?;
    for v in &model.params.0 {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<MlpModel> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    input.read_exact(&mut u32buf)?;
    let n = u32::from_le_bytes(u32buf) as usize;
    let mut dims = Vec::with_capacity(n);
    for _ in 0..n {
        input.read_exact(&mut u32buf)?;
        dims.push(u32::from_le_bytes(u32buf) as usize);
    }
    let mut u64buf = [0u8; 8];
    input.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    validate_dims(&dims)?;
    if count != param_count(&dims) {
        return Err(Error::Checkpoint(format!(
            "parameter count {count} does not match layer widths"
        )));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        input.read_exact(&mut u64buf)?;
        params.push(f64::from_le_bytes(u64buf));
    }
    MlpModel::unflatten(&dims, ParamVector(params))
}
