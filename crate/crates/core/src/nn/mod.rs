//! Minimal dense-network runtime.
//!
//! Networks are plain MLPs described by a [`NetworkSpec`]; parameters live in
//! a flat [`ParamVector`] whose layout is a pure function of the spec, so
//! serialization round-trips bit-exactly. [`forward`] and [`backward`] give
//! exact reverse-mode gradients with respect to both parameters and inputs,
//! which is everything the alternating training loop and the c-transform
//! ascent need.
//!
//! Dropout masks are derived from a counter-based stream keyed by
//! `(rng_seed, layer)`, so a backward pass replays the exact mask of its
//! paired forward pass without carrying state between the calls.

mod optim;
mod serialize;

pub use optim::{adam_step, ema_update, AdamState, EmaState};
pub use serialize::{decode_network, encode_network};

pub(crate) mod serialize_internal {
    pub(crate) use super::serialize::{decode_network_from, Reader};
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    /// Leaky rectifier with one learnable slope scalar per hidden layer.
    PRelu,
    Tanh,
    Relu,
}

impl Activation {
    /// True when the activation owns a learnable parameter.
    pub fn has_param(self) -> bool {
        matches!(self, Activation::PRelu)
    }
}

/// Architecture of a dense network.
///
/// When `condition_dim > 0` the network consumes `input_dim + condition_dim`
/// features (sample plus one-hot label block). A residual spec computes
/// `output = input + F(input)` on the first `input_dim` columns and requires
/// `input_dim == output_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub residual: bool,
    pub dropout_p: f64,
    pub condition_dim: usize,
}

impl NetworkSpec {
    /// Plain MLP: no residual path, no dropout, no conditioning.
    pub fn mlp(input_dim: usize, output_dim: usize, hidden: &[usize], activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden_dims: hidden.to_vec(),
            activation,
            residual: false,
            dropout_p: 0.0,
            condition_dim: 0,
        }
    }

    /// Residual variant of [`NetworkSpec::mlp`].
    pub fn residual(input_dim: usize, hidden: &[usize], activation: Activation) -> Self {
        Self {
            residual: true,
            ..Self::mlp(input_dim, input_dim, hidden, activation)
        }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout_p = p;
        self
    }

    pub fn with_condition(mut self, condition_dim: usize) -> Self {
        self.condition_dim = condition_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidSpec("zero input or output dimension".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidSpec("zero hidden width".into()));
        }
        if self.residual && self.input_dim != self.output_dim {
            return Err(Error::InvalidSpec(format!(
                "residual network needs input_dim == output_dim, got {} and {}",
                self.input_dim, self.output_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidSpec(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }

    /// Width of the network input including the condition block.
    pub fn feature_dim(&self) -> usize {
        self.input_dim + self.condition_dim
    }

    /// Per-layer parameter layout. Hidden layers carry the activation (and
    /// the PReLU slope when applicable); the final layer is purely affine.
    pub fn layers(&self) -> Vec<LayerLayout> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.feature_dim());
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut offset = 0;
        for l in 0..dims.len() - 1 {
            let (in_dim, out_dim) = (dims[l], dims[l + 1]);
            let hidden = l + 1 < dims.len() - 1;
            let w = offset..offset + in_dim * out_dim;
            offset = w.end;
            let b = offset..offset + out_dim;
            offset = b.end;
            let slope = if hidden && self.activation.has_param() {
                let s = offset;
                offset += 1;
                Some(s)
            } else {
                None
            };
            layers.push(LayerLayout {
                w,
                b,
                slope,
                in_dim,
                out_dim,
                hidden,
            });
        }
        layers
    }

    /// Total parameter count implied by the layout.
    pub fn param_len(&self) -> usize {
        self.layers()
            .last()
            .map(|l| l.slope.map(|s| s + 1).unwrap_or(l.b.end))
            .unwrap_or(0)
    }
}

/// Offsets of one layer inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct LayerLayout {
    /// Row-major `out_dim x in_dim` weight block.
    pub w: std::ops::Range<usize>,
    pub b: std::ops::Range<usize>,
    /// PReLU slope scalar, hidden layers only.
    pub slope: Option<usize>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden: bool,
}

/// Flat parameter state of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    /// Wraps raw values after checking the length against the spec layout.
    pub fn from_values(spec: &NetworkSpec, values: Vec<f64>) -> Result<Self> {
        let expected = spec.param_len();
        if values.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Evaluation mode. Dropout fires only in `Train`, where the seed keys the
/// mask stream so a paired backward pass can replay it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { rng_seed: u64 },
}

/// Scaled-uniform fan-in initialization, deterministic in `(spec, seed)`.
/// PReLU slopes start at 0.25.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    let mut values = vec![0.0; spec.param_len()];
    let mut gen = rng::stream_rng(seed, 0x6e6e_696e_6974);
    for layer in spec.layers() {
        let bound = 1.0 / (layer.in_dim as f64).sqrt();
        for i in layer.w.clone().chain(layer.b.clone()) {
            values[i] = gen.gen_range(-bound..bound);
        }
        if let Some(s) = layer.slope {
            values[s] = 0.25;
        }
    }
    ParamVector::from_values(spec, values)
}

fn check_params(spec: &NetworkSpec, params: &ParamVector) -> Result<()> {
    let expected = spec.param_len();
    if params.len() != expected {
        return Err(Error::ShapeMismatch {
            expected,
            got: params.len(),
        });
    }
    Ok(())
}

fn activate(a: Activation, slope: f64, z: f64) -> f64 {
    match a {
        Activation::PRelu => {
            if z >= 0.0 {
                z
            } else {
                slope * z
            }
        }
        Activation::Tanh => z.tanh(),
        Activation::Relu => z.max(0.0),
    }
}

fn activate_dz(a: Activation, slope: f64, z: f64) -> f64 {
    match a {
        Activation::PRelu => {
            if z >= 0.0 {
                1.0
            } else {
                slope
            }
        }
        Activation::Tanh => {
            let t = z.tanh();
            1.0 - t * t
        }
        Activation::Relu => {
            if z >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Inverted dropout mask for one layer: entry is `1/(1-p)` (kept) or 0.
fn dropout_mask(rng_seed: u64, layer: usize, n: usize, p: f64) -> Vec<f64> {
    let mut gen = rng::stream_rng(rng_seed, 0xd09 ^ ((layer as u64) << 8));
    let scale = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if gen.gen::<f64>() >= p { scale } else { 0.0 })
        .collect()
}

struct ForwardCache {
    /// Input of each layer, `layer_inputs[0]` being the network input.
    layer_inputs: Vec<Tensor>,
    /// Pre-activation values for hidden layers (`None` for the last layer).
    pre_acts: Vec<Option<Tensor>>,
    masks: Vec<Option<Vec<f64>>>,
    output: Tensor,
}

fn run_forward(
    spec: &NetworkSpec,
    params: &ParamVector,
    input: &Tensor,
    mode: Mode,
) -> Result<ForwardCache> {
    spec.validate()?;
    check_params(spec, params)?;
    if input.cols() != spec.feature_dim() {
        return Err(Error::DimMismatch {
            context: "network input width",
            expected: spec.feature_dim(),
            got: input.cols(),
        });
    }

    let batch = input.rows();
    let p = params.values();
    let mut layer_inputs = vec![input.clone()];
    let mut pre_acts = Vec::new();
    let mut masks = Vec::new();

    for (li, layer) in spec.layers().iter().enumerate() {
        let h = layer_inputs.last().unwrap();
        let w = &p[layer.w.clone()];
        let b = &p[layer.b.clone()];
        let mut z = vec![0.0; batch * layer.out_dim];
        for r in 0..batch {
            let hr = h.row(r);
            let zr = &mut z[r * layer.out_dim..(r + 1) * layer.out_dim];
            for o in 0..layer.out_dim {
                let wrow = &w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let mut acc = b[o];
                for i in 0..layer.in_dim {
                    acc += wrow[i] * hr[i];
                }
                zr[o] = acc;
            }
        }

        if layer.hidden {
            let slope = layer.slope.map(|s| p[s]).unwrap_or(0.0);
            let mut a: Vec<f64> = z
                .iter()
                .map(|&v| activate(spec.activation, slope, v))
                .collect();
            let mask = match mode {
                Mode::Train { rng_seed } if spec.dropout_p > 0.0 => {
                    let m = dropout_mask(rng_seed, li, a.len(), spec.dropout_p);
                    for (av, mv) in a.iter_mut().zip(&m) {
                        *av *= mv;
                    }
                    Some(m)
                }
                _ => None,
            };
            pre_acts.push(Some(Tensor::matrix(batch, layer.out_dim, z)?));
            masks.push(mask);
            layer_inputs.push(Tensor::matrix(batch, layer.out_dim, a)?);
        } else {
            if spec.residual {
                for r in 0..batch {
                    let xr = input.row(r);
                    let zr = &mut z[r * layer.out_dim..(r + 1) * layer.out_dim];
                    for c in 0..spec.input_dim {
                        zr[c] += xr[c];
                    }
                }
            }
            pre_acts.push(None);
            masks.push(None);
            let output = Tensor::matrix(batch, layer.out_dim, z)?;
            return Ok(ForwardCache {
                layer_inputs,
                pre_acts,
                masks,
                output,
            });
        }
    }
    unreachable!("spec.layers() always ends with an output layer")
}

/// Batch evaluation: `input` is `B x feature_dim`, result is `B x output_dim`.
pub fn forward(
    spec: &NetworkSpec,
    params: &ParamVector,
    input: &Tensor,
    mode: Mode,
) -> Result<Tensor> {
    Ok(run_forward(spec, params, input, mode)?.output)
}

/// Reverse-mode gradients of `<upstream, forward(input)>`.
///
/// Returns the flat parameter gradient and the gradient with respect to the
/// full network input (`B x feature_dim`, condition columns included). In
/// train mode the dropout mask of the paired forward pass is replayed.
pub fn backward(
    spec: &NetworkSpec,
    params: &ParamVector,
    input: &Tensor,
    mode: Mode,
    upstream: &Tensor,
) -> Result<(Vec<f64>, Tensor)> {
    let cache = run_forward(spec, params, input, mode)?;
    if upstream.rows() != input.rows() || upstream.cols() != spec.output_dim {
        return Err(Error::DimMismatch {
            context: "upstream gradient width",
            expected: spec.output_dim,
            got: upstream.cols(),
        });
    }

    let batch = input.rows();
    let p = params.values();
    let layers = spec.layers();
    let mut param_grads = vec![0.0; p.len()];
    let mut input_grads = Tensor::zeros(vec![batch, spec.feature_dim()]);

    // Residual path: identity contribution on the first input_dim columns.
    if spec.residual {
        for r in 0..batch {
            let ur = upstream.row(r);
            let gr = input_grads.row_mut(r);
            for c in 0..spec.input_dim {
                gr[c] += ur[c];
            }
        }
    }

    // grad holds d(loss)/d(layer output after activation and dropout).
    let mut grad = upstream.clone();
    for (li, layer) in layers.iter().enumerate().rev() {
        let h = &cache.layer_inputs[li];

        // Through dropout and activation to the pre-activation gradient.
        let dz = if layer.hidden {
            let z = cache.pre_acts[li].as_ref().unwrap();
            let slope = layer.slope.map(|s| p[s]).unwrap_or(0.0);
            let mut dz = Tensor::zeros(vec![batch, layer.out_dim]);
            let mut slope_grad = 0.0;
            for r in 0..batch {
                let gr = grad.row(r);
                let zr = z.row(r);
                let dzr = dz.row_mut(r);
                for o in 0..layer.out_dim {
                    let mut g = gr[o];
                    if let Some(mask) = &cache.masks[li] {
                        g *= mask[r * layer.out_dim + o];
                    }
                    if layer.slope.is_some() && zr[o] < 0.0 {
                        slope_grad += g * zr[o];
                    }
                    dzr[o] = g * activate_dz(spec.activation, slope, zr[o]);
                }
            }
            if let Some(s) = layer.slope {
                param_grads[s] = slope_grad;
            }
            dz
        } else {
            grad.clone()
        };

        // Weight, bias and propagated input gradients.
        let w = &p[layer.w.clone()];
        let wg = layer.w.start;
        let bg = layer.b.start;
        let mut dh = Tensor::zeros(vec![batch, layer.in_dim]);
        for r in 0..batch {
            let hr = h.row(r);
            let dzr = dz.row(r);
            let dhr = dh.row_mut(r);
            for o in 0..layer.out_dim {
                let g = dzr[o];
                if g == 0.0 {
                    continue;
                }
                let wrow = &w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let wgrow = &mut param_grads[wg + o * layer.in_dim..wg + (o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    wgrow[i] += g * hr[i];
                    dhr[i] += g * wrow[i];
                }
            }
            for o in 0..layer.out_dim {
                param_grads[bg + o] += dzr[o];
            }
        }

        if li == 0 {
            for r in 0..batch {
                let dhr = dh.row(r);
                let gr = input_grads.row_mut(r);
                for i in 0..layer.in_dim {
                    gr[i] += dhr[i];
                }
            }
        } else {
            grad = dh;
        }
    }

    Ok((param_grads, input_grads))
}

/// A `(spec, params)` pair viewed as a function, always in eval mode.
#[derive(Clone, Copy)]
pub struct NetFn<'a> {
    pub spec: &'a NetworkSpec,
    pub params: &'a ParamVector,
}

impl<'a> NetFn<'a> {
    pub fn new(spec: &'a NetworkSpec, params: &'a ParamVector) -> Self {
        Self { spec, params }
    }

    pub fn eval_batch(&self, input: &Tensor) -> Result<Tensor> {
        forward(self.spec, self.params, input, Mode::Eval)
    }

    pub fn eval_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        let t = Tensor::matrix(1, row.len(), row.to_vec())?;
        Ok(self.eval_batch(&t)?.into_data())
    }

    /// Scalar output of a potential network (`output_dim == 1`).
    pub fn scalar(&self, row: &[f64]) -> Result<f64> {
        Ok(self.eval_row(row)?[0])
    }

    /// Scalar value and its gradient in the input.
    pub fn scalar_and_grad(&self, row: &[f64]) -> Result<(f64, Vec<f64>)> {
        let t = Tensor::matrix(1, row.len(), row.to_vec())?;
        let value = self.eval_batch(&t)?.data()[0];
        let upstream = Tensor::matrix(1, 1, vec![1.0])?;
        let (_, input_grads) = backward(self.spec, self.params, &t, Mode::Eval, &upstream)?;
        Ok((value, input_grads.into_data()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_1h() -> NetworkSpec {
        NetworkSpec::mlp(1, 1, &[2], Activation::Tanh)
    }

    #[test]
    fn layout_counts_weights_and_biases() {
        // 1 -> 2 -> 1 with tanh: 2 + 2 + 2 + 1 = 7 parameters.
        assert_eq!(spec_1h().param_len(), 7);
        // PReLU adds one slope scalar per hidden layer.
        let prelu = NetworkSpec::mlp(1, 1, &[2], Activation::PRelu);
        assert_eq!(prelu.param_len(), 8);
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let spec = NetworkSpec::mlp(3, 2, &[5, 4], Activation::PRelu);
        let a = init_params(&spec, 1).unwrap();
        let b = init_params(&spec, 1).unwrap();
        let c = init_params(&spec, 2).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn zero_residual_params_give_identity() {
        let spec = NetworkSpec::residual(2, &[4, 4], Activation::PRelu);
        let params = ParamVector::zeros(spec.param_len());
        let x = Tensor::matrix(1, 2, vec![0.3, -1.2]).unwrap();
        let y = forward(&spec, &params, &x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[0.3, -1.2]);
    }

    #[test]
    fn single_linear_layer_matches_hand_computation() {
        // W = [[2]], b = [1], x = 3 -> 7.
        let spec = NetworkSpec::mlp(1, 1, &[], Activation::Tanh);
        let params = ParamVector::from_values(&spec, vec![2.0, 1.0]).unwrap();
        let x = Tensor::matrix(1, 1, vec![3.0]).unwrap();
        let y = forward(&spec, &params, &x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[7.0]);

        let upstream = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let (pg, ig) = backward(&spec, &params, &x, Mode::Eval, &upstream).unwrap();
        assert_eq!(pg, vec![3.0, 1.0]); // dW = x, db = 1
        assert_eq!(ig.data(), &[2.0]); // dx = W
    }

    #[test]
    fn eval_mode_ignores_rng_seed() {
        let spec = NetworkSpec::mlp(2, 2, &[8], Activation::Tanh).with_dropout(0.5);
        let params = init_params(&spec, 3).unwrap();
        let x = Tensor::matrix(2, 2, vec![0.1, -0.2, 0.7, 0.4]).unwrap();
        let a = forward(&spec, &params, &x, Mode::Eval).unwrap();
        let b = forward(&spec, &params, &x, Mode::Eval).unwrap();
        assert_eq!(a.data(), b.data());

        let t1 = forward(&spec, &params, &x, Mode::Train { rng_seed: 1 }).unwrap();
        let t2 = forward(&spec, &params, &x, Mode::Train { rng_seed: 1 }).unwrap();
        let t3 = forward(&spec, &params, &x, Mode::Train { rng_seed: 2 }).unwrap();
        assert_eq!(t1.data(), t2.data());
        assert_ne!(t1.data(), t3.data());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let spec = NetworkSpec::mlp(2, 3, &[4], Activation::PRelu);
        let params = init_params(&spec, 5).unwrap();
        let x = Tensor::matrix(2, 2, vec![0.5, -0.3, 1.0, 2.0]).unwrap();
        let upstream = Tensor::zeros(vec![2, 3]);
        let (pg, ig) = backward(&spec, &params, &x, Mode::Eval, &upstream).unwrap();
        assert!(pg.iter().all(|&g| g == 0.0));
        assert!(ig.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn rejects_bad_input_width() {
        let spec = spec_1h();
        let params = init_params(&spec, 0).unwrap();
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(forward(&spec, &params, &x, Mode::Eval).is_err());
    }

    #[test]
    fn residual_spec_validation() {
        let bad = NetworkSpec {
            residual: true,
            ..NetworkSpec::mlp(2, 3, &[4], Activation::Tanh)
        };
        assert!(bad.validate().is_err());
        // Condition block does not break the residual width rule.
        let ok = NetworkSpec::residual(2, &[4], Activation::Tanh).with_condition(3);
        assert!(ok.validate().is_ok());
        assert_eq!(ok.feature_dim(), 5);
    }
}
