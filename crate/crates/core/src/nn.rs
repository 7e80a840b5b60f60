//! Fixed-topology dense networks.
//!
//! Parameters live in one flat `f64` vector ([`ParamStore`]) with a per-layer
//! view table; each layer stores its weight matrix row-major (`out x in`)
//! followed by its bias. Gradients come back in the same layout, so the
//! optimizer never needs to know about layers.

use std::io::{Read, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Identity),
            other => Err(Error::Format(format!("unknown activation code {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Appends `[x | sin(2^k pi x_i) | cos(2^k pi x_i)]` for `k < octaves` to
/// `out`. With `octaves = 0` this is the identity encoding.
pub fn fourier_encode(x: &[f64], octaves: usize, out: &mut Vec<f64>) {
    out.extend_from_slice(x);
    for &xi in x {
        let mut w = std::f64::consts::PI * xi;
        for _ in 0..octaves {
            let (sn, cs) = w.sin_cos();
            out.push(sn);
            out.push(cs);
            w *= 2.0;
        }
    }
}

/// Width of [`fourier_encode`] output for a `dim`-vector.
pub fn fourier_width(dim: usize, octaves: usize) -> usize {
    dim * (1 + 2 * octaves)
}

/// Builds `input -> hidden... -> output` with `hidden_act` on every hidden
/// layer and an identity output layer.
pub fn mlp_specs(
    input: usize,
    hidden: &[usize],
    output: usize,
    hidden_act: Activation,
) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input;
    for &h in hidden {
        specs.push(LayerSpec::new(prev, h, hidden_act));
        prev = h;
    }
    specs.push(LayerSpec::new(prev, output, Activation::Identity));
    specs
}

pub fn validate_chain(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Invalid("network needs at least one layer".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::Invalid(format!("layer {i} has a zero dimension")));
        }
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::ChainMismatch {
                index: i + 1,
                expected: pair[1].in_dim,
                actual: pair[0].out_dim,
            });
        }
    }
    Ok(())
}

/// One layer's slice of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerView {
    pub name: String,
    /// (rows = out_dim, cols = in_dim)
    pub weight_shape: (usize, usize),
    pub bias_len: usize,
    pub offset: usize,
}

impl LayerView {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.weight_shape.0 * self.weight_shape.1
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.weight_range().end;
        start..start + self.bias_len
    }

    fn len(&self) -> usize {
        self.weight_shape.0 * self.weight_shape.1 + self.bias_len
    }
}

/// Flat parameter vector with per-layer views. Equality compares values and
/// layout; the init seed is provenance only.
#[derive(Debug, Clone)]
pub struct ParamStore {
    values: Vec<f64>,
    layout: Vec<LayerView>,
    seed: u64,
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values && self.layout == other.layout
    }
}

impl ParamStore {
    fn layout_for(specs: &[LayerSpec]) -> Vec<LayerView> {
        let mut offset = 0;
        specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let view = LayerView {
                    name: format!("layer{i}"),
                    weight_shape: (s.out_dim, s.in_dim),
                    bias_len: s.out_dim,
                    offset,
                };
                offset += view.len();
                view
            })
            .collect()
    }

    /// Glorot-uniform weights, zero biases; a pure function of `(specs, seed)`.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_chain(specs)?;
        let layout = Self::layout_for(specs);
        let total = layout.iter().map(LayerView::len).sum();
        let mut values = vec![0.0; total];
        let mut rng = rng::from_seed(seed);
        for (spec, view) in specs.iter().zip(&layout) {
            let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
            for w in &mut values[view.weight_range()] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(Self {
            values,
            layout,
            seed,
        })
    }

    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        Self::from_values(
            specs,
            vec![0.0; specs.iter().map(LayerSpec::param_count).sum()],
        )
    }

    pub fn from_values(specs: &[LayerSpec], values: Vec<f64>) -> Result<Self> {
        validate_chain(specs)?;
        let layout = Self::layout_for(specs);
        let total: usize = layout.iter().map(LayerView::len).sum();
        if values.len() != total {
            return Err(Error::Dim {
                context: "parameter vector",
                expected: total,
                actual: values.len(),
            });
        }
        check_finite(&values, "parameter vector")?;
        Ok(Self {
            values,
            layout,
            seed: 0,
        })
    }

    pub fn with_names(mut self, prefix: &str) -> Self {
        for (i, view) in self.layout.iter_mut().enumerate() {
            view.name = format!("{prefix}.{i}");
        }
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[LayerView] {
        &self.layout
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.values[self.layout[layer].weight_range()]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let r = self.layout[layer].weight_range();
        &mut self.values[r]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.values[self.layout[layer].bias_range()]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let r = self.layout[layer].bias_range();
        &mut self.values[r]
    }
}

/// Layer inputs/outputs recorded by a forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the network input, `acts[k + 1]` the output of layer `k`.
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace always holds the input")
    }
}

fn forward_unchecked(params: &ParamStore, specs: &[LayerSpec], input: &[f64]) -> Trace {
    let mut acts = Vec::with_capacity(specs.len() + 1);
    acts.push(input.to_vec());
    for (k, spec) in specs.iter().enumerate() {
        let w = params.weights(k);
        let b = params.bias(k);
        let x = &acts[k];
        let mut y = b.to_vec();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * spec.in_dim..(o + 1) * spec.in_dim];
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            *yo = spec.activation.apply(*yo + acc);
        }
        acts.push(y);
    }
    Trace { acts }
}

/// Accumulates `scale * d(upstream . output)/d(params)` into `grad`; returns
/// the gradient with respect to the network input.
fn backward_unchecked(
    params: &ParamStore,
    specs: &[LayerSpec],
    trace: &Trace,
    upstream: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let mut delta = upstream.to_vec();
    for (k, spec) in specs.iter().enumerate().rev() {
        let out = &trace.acts[k + 1];
        for (d, &y) in delta.iter_mut().zip(out) {
            *d *= spec.activation.grad_from_output(y);
        }
        let view = &params.layout[k];
        let x = &trace.acts[k];
        {
            let gw = &mut grad[view.weight_range()];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * spec.in_dim..(o + 1) * spec.in_dim];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
        }
        for (g, d) in grad[view.bias_range()].iter_mut().zip(&delta) {
            *g += d;
        }
        let w = params.weights(k);
        let mut below = vec![0.0; spec.in_dim];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &w[o * spec.in_dim..(o + 1) * spec.in_dim];
            for (b, wi) in below.iter_mut().zip(row) {
                *b += d * wi;
            }
        }
        delta = below;
    }
    delta
}

pub fn forward(params: &ParamStore, specs: &[LayerSpec], input: &[f64]) -> Result<Vec<f64>> {
    check_shapes(params, specs)?;
    if input.len() != specs[0].in_dim {
        return Err(Error::Dim {
            context: "network input",
            expected: specs[0].in_dim,
            actual: input.len(),
        });
    }
    check_finite(input, "network input")?;
    Ok(forward_unchecked(params, specs, input)
        .acts
        .pop()
        .unwrap_or_default())
}

/// Gradient of `upstream . forward(input)` with respect to every parameter.
pub fn backward(
    params: &ParamStore,
    specs: &[LayerSpec],
    input: &[f64],
    upstream: &[f64],
) -> Result<Vec<f64>> {
    check_shapes(params, specs)?;
    if input.len() != specs[0].in_dim {
        return Err(Error::Dim {
            context: "network input",
            expected: specs[0].in_dim,
            actual: input.len(),
        });
    }
    let out_dim = specs[specs.len() - 1].out_dim;
    if upstream.len() != out_dim {
        return Err(Error::Dim {
            context: "upstream gradient",
            expected: out_dim,
            actual: upstream.len(),
        });
    }
    let trace = forward_unchecked(params, specs, input);
    let mut grad = vec![0.0; params.len()];
    backward_unchecked(params, specs, &trace, upstream, &mut grad);
    Ok(grad)
}

fn check_shapes(params: &ParamStore, specs: &[LayerSpec]) -> Result<()> {
    validate_chain(specs)?;
    let ok = params.layout.len() == specs.len()
        && params
            .layout
            .iter()
            .zip(specs)
            .all(|(v, s)| v.weight_shape == (s.out_dim, s.in_dim) && v.bias_len == s.out_dim);
    if ok {
        Ok(())
    } else {
        Err(Error::Invalid(
            "parameter layout does not match layer specs".into(),
        ))
    }
}

/// A network: layer specs plus their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    specs: Vec<LayerSpec>,
    params: ParamStore,
}

impl Mlp {
    pub fn new(specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let params = ParamStore::init(&specs, seed)?;
        Ok(Self { specs, params })
    }

    pub fn from_parts(specs: Vec<LayerSpec>, params: ParamStore) -> Result<Self> {
        check_shapes(&params, &specs)?;
        Ok(Self { specs, params })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn in_dim(&self) -> usize {
        self.specs[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        forward(&self.params, &self.specs, input)
    }

    /// Forward pass keeping intermediate activations. Input length is the
    /// caller's responsibility.
    pub fn trace(&self, input: &[f64]) -> Trace {
        debug_assert_eq!(input.len(), self.in_dim());
        forward_unchecked(&self.params, &self.specs, input)
    }

    /// Adds the parameter gradient of `upstream . output` into `grad` and
    /// returns the input gradient.
    pub fn backward_into(&self, trace: &Trace, upstream: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(upstream.len(), self.out_dim());
        debug_assert_eq!(grad.len(), self.num_params());
        backward_unchecked(&self.params, &self.specs, trace, upstream, grad)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// In-place update using `lr * lr_scale` as the step size.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64], lr_scale: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dim {
                context: "adam step",
                expected: self.m.len(),
                actual: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        check_finite(grads, "gradient")?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let lr = self.lr * lr_scale;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Pure Adam step: returns updated copies, leaving the inputs untouched.
pub fn adam_step(
    state: &AdamState,
    params: &ParamStore,
    grads: &[f64],
) -> Result<(ParamStore, AdamState)> {
    let mut state = state.clone();
    let mut params = params.clone();
    state.apply(&mut params.values, grads, 1.0)?;
    Ok((params, state))
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DRLP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// What a checkpoint file holds; stored as the tag byte after the version.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Gail,
    Diffail,
    Drail,
    Policy,
    Network,
}

impl CheckpointKind {
    pub fn tag(self) -> u8 {
        match self {
            CheckpointKind::Gail => 0,
            CheckpointKind::Diffail => 1,
            CheckpointKind::Drail => 2,
            CheckpointKind::Policy => 3,
            CheckpointKind::Network => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => CheckpointKind::Gail,
            1 => CheckpointKind::Diffail,
            2 => CheckpointKind::Drail,
            3 => CheckpointKind::Policy,
            4 => CheckpointKind::Network,
            other => {
                return Err(Error::Format(format!(
                    "unknown checkpoint kind tag {other}"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            CheckpointKind::Gail => "gail",
            CheckpointKind::Diffail => "diffail",
            CheckpointKind::Drail => "drail",
            CheckpointKind::Policy => "policy",
            CheckpointKind::Network => "network",
        }
    }
}

/// Container written as
/// `"DRLP" | version u32 | kind u8 | n_nets u32 | nets... | n_extra u64 | extra f64...`
/// where each net is `n_layers u32 | (name_len u32, name, in u32, out u32, act u8)... | f64 values`.
/// All integers and floats are little-endian.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub nets: Vec<Mlp>,
    pub extra: Vec<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.kind.tag());
        out.extend_from_slice(&(self.nets.len() as u32).to_le_bytes());
        for net in &self.nets {
            out.extend_from_slice(&(net.specs.len() as u32).to_le_bytes());
            for (spec, view) in net.specs.iter().zip(net.params.layout()) {
                out.extend_from_slice(&(view.name.len() as u32).to_le_bytes());
                out.extend_from_slice(view.name.as_bytes());
                out.extend_from_slice(&(spec.in_dim as u32).to_le_bytes());
                out.extend_from_slice(&(spec.out_dim as u32).to_le_bytes());
                out.push(spec.activation.code());
            }
            for v in net.params.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.extra.len() as u64).to_le_bytes());
        for v in &self.extra {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic.to_vec(),
            });
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let kind = CheckpointKind::from_tag(r.u8()?)?;
        let n_nets = r.u32()? as usize;
        let mut nets = Vec::with_capacity(n_nets.min(16));
        for _ in 0..n_nets {
            let n_layers = r.u32()? as usize;
            let mut specs = Vec::with_capacity(n_layers.min(64));
            let mut names = Vec::with_capacity(n_layers.min(64));
            for _ in 0..n_layers {
                let len = r.u32()? as usize;
                let name = std::str::from_utf8(r.take(len)?)
                    .map_err(|_| Error::Format("layer name is not UTF-8".into()))?
                    .to_owned();
                let in_dim = r.u32()? as usize;
                let out_dim = r.u32()? as usize;
                let activation = Activation::from_code(r.u8()?)?;
                specs.push(LayerSpec::new(in_dim, out_dim, activation));
                names.push(name);
            }
            validate_chain(&specs)?;
            let count: usize = specs.iter().map(LayerSpec::param_count).sum();
            let values = r.f64s(count)?;
            let mut params = ParamStore::from_values(&specs, values)?;
            for (view, name) in params.layout.iter_mut().zip(names) {
                view.name = name;
            }
            nets.push(Mlp { specs, params });
        }
        let n_extra = r.u64()? as usize;
        let extra = r.f64s(n_extra)?;
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { kind, nets, extra })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Little-endian cursor that reports truncation with byte counts.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("length overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_net(seed: u64) -> Mlp {
        Mlp::new(
            vec![
                LayerSpec::new(3, 5, Activation::Tanh),
                LayerSpec::new(5, 4, Activation::Relu),
                LayerSpec::new(4, 2, Activation::Identity),
            ],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn init_single_layer_has_zero_bias() {
        let specs = [LayerSpec::new(2, 3, Activation::Tanh)];
        let p = ParamStore::init(&specs, 7).unwrap();
        assert_eq!(p.len(), 9);
        assert!(p.bias(0).iter().all(|&b| b == 0.0));
        let limit = (6.0f64 / 5.0).sqrt();
        assert!(p.weights(0).iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn init_is_deterministic() {
        let specs = mlp_specs(4, &[8, 8], 2, Activation::Tanh);
        let a = ParamStore::init(&specs, 11).unwrap();
        let b = ParamStore::init(&specs, 11).unwrap();
        let bits = |p: &ParamStore| p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&ParamStore::init(&specs, 12).unwrap()));
    }

    #[test]
    fn init_rejects_broken_chain() {
        let specs = [
            LayerSpec::new(2, 3, Activation::Tanh),
            LayerSpec::new(4, 1, Activation::Identity),
        ];
        let err = ParamStore::init(&specs, 0).unwrap_err();
        assert!(err.to_string().contains("chain mismatch"), "{err}");
    }

    #[test]
    fn views_cover_the_vector() {
        let specs = mlp_specs(3, &[7, 5], 2, Activation::Relu);
        let p = ParamStore::init(&specs, 1).unwrap();
        let mut next = 0;
        for view in p.layout() {
            assert_eq!(view.weight_range().start, next);
            next = view.bias_range().end;
        }
        assert_eq!(next, p.len());
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let specs = [LayerSpec::new(2, 2, Activation::Identity)];
        let p = ParamStore::from_values(&specs, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(forward(&p, &specs, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_tanh_layer_outputs_zero() {
        let specs = [LayerSpec::new(3, 2, Activation::Tanh)];
        let p = ParamStore::zeros(&specs).unwrap();
        assert_eq!(
            forward(&p, &specs, &[5.0, -3.0, 0.1]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn forward_matches_hand_unrolled_matrices() {
        let specs = [
            LayerSpec::new(2, 4, Activation::Tanh),
            LayerSpec::new(4, 1, Activation::Identity),
        ];
        let p = ParamStore::init(&specs, 3).unwrap();
        let x = [0.3, -0.7];
        let w1 = p.weights(0);
        let b1 = p.bias(0);
        let h: Vec<f64> = (0..4)
            .map(|o| (w1[o * 2] * x[0] + w1[o * 2 + 1] * x[1] + b1[o]).tanh())
            .collect();
        let w2 = p.weights(1);
        let y = w2[0] * h[0] + w2[1] * h[1] + w2[2] * h[2] + w2[3] * h[3] + p.bias(1)[0];
        let out = forward(&p, &specs, &x).unwrap();
        assert!((out[0] - y).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = random_net(0);
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Dim { .. })));
        assert!(matches!(
            net.forward(&[1.0, f64::NAN, 0.0]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let specs = [LayerSpec::new(3, 2, Activation::Identity)];
        let p = ParamStore::init(&specs, 5).unwrap();
        let x = [0.5, -1.0, 2.0];
        let u = [0.25, -3.0];
        let g = backward(&p, &specs, &x, &u).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g[o * 3 + i], u[o] * x[i]);
            }
            assert_eq!(g[6 + o], u[o]);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = random_net(2);
        let g = backward(net.params(), net.specs(), &[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_upstream_mismatch() {
        let net = random_net(2);
        assert!(backward(net.params(), net.specs(), &[0.1, 0.2, 0.3], &[1.0]).is_err());
    }

    fn finite_difference_check(seed: u64) -> f64 {
        let net = Mlp::new(
            vec![
                LayerSpec::new(3, 6, Activation::Tanh),
                LayerSpec::new(6, 5, Activation::Tanh),
                LayerSpec::new(5, 2, Activation::Identity),
            ],
            seed,
        )
        .unwrap();
        let x = [0.4, -0.2, 0.9];
        let u = [0.7, -1.3];
        let g = backward(net.params(), net.specs(), &x, &u).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..net.num_params() {
            let eval = |delta: f64| {
                let mut p = net.params().clone();
                p.values_mut()[i] += delta;
                let y = forward(&p, net.specs(), &x).unwrap();
                u[0] * y[0] + u[1] * y[1]
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..5 {
            let err = finite_difference_check(seed);
            assert!(err < 1e-6, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let specs = [LayerSpec::new(2, 2, Activation::Identity)];
        let p = ParamStore::init(&specs, 1).unwrap();
        let state = AdamState::new(p.len(), 1e-3);
        let (q, s) = adam_step(&state, &p, &vec![1.0; p.len()]).unwrap();
        assert_eq!(s.step, 1);
        for (a, b) in p.values().iter().zip(q.values()) {
            // m_hat = v_hat = 1 -> step = lr / (1 + eps)
            assert!((a - b - 1e-3).abs() < 1e-10);
        }
        // inputs untouched
        assert_eq!(state.step, 0);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op_on_params() {
        let specs = [LayerSpec::new(2, 2, Activation::Identity)];
        let p = ParamStore::init(&specs, 1).unwrap();
        let state = AdamState::new(p.len(), 1e-2);
        let (q, s) = adam_step(&state, &p, &vec![0.0; p.len()]).unwrap();
        assert_eq!(p, q);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_is_deterministic_and_rejects_nan() {
        let specs = [LayerSpec::new(2, 2, Activation::Identity)];
        let p = ParamStore::init(&specs, 1).unwrap();
        let state = AdamState::new(p.len(), 1e-2);
        let g: Vec<f64> = (0..p.len()).map(|i| i as f64 - 2.5).collect();
        assert_eq!(
            adam_step(&state, &p, &g).unwrap(),
            adam_step(&state, &p, &g).unwrap()
        );
        let mut bad = g.clone();
        bad[4] = f64::NAN;
        match adam_step(&state, &p, &bad) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 4),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_rejects_bad_magic_and_truncation() {
        let ckpt = Checkpoint {
            kind: CheckpointKind::Network,
            nets: vec![random_net(4)],
            extra: vec![1.5],
        };
        let bytes = ckpt.to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad)
            .unwrap_err()
            .to_string()
            .contains("bad magic"));
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), hidden in 1usize..9, extra in proptest::collection::vec(-1e6f64..1e6, 0..5)) {
            let net = Mlp::new(mlp_specs(3, &[hidden], 2, Activation::Tanh), seed).unwrap();
            let ckpt = Checkpoint { kind: CheckpointKind::Policy, nets: vec![net], extra };
            let bytes = ckpt.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back, ckpt);
        }

        #[test]
        fn adam_preserves_finiteness(grads in proptest::collection::vec(-1e3f64..1e3, 6)) {
            let specs = [LayerSpec::new(2, 2, Activation::Identity)];
            let p = ParamStore::init(&specs, 9).unwrap();
            let s = AdamState::new(6, 0.1);
            let (q, s) = adam_step(&s, &p, &grads).unwrap();
            prop_assert!(q.values().iter().all(|v| v.is_finite()));
            prop_assert!(s.v.iter().all(|&v| v >= 0.0));
        }
    }
}
