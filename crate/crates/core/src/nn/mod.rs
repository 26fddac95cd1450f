//! Dense feed-forward autoencoder with hand-written backpropagation.
//!
//! Weights are stored row-major as `[out × in]`. Everything is `f64`.

mod train;

pub use train::{train, train_with_monitor, TrainConfig, TrainOutcome, DIVERGENCE_FACTOR};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("input has {found} components, layer expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("input component {0} is not finite")]
    NonFiniteInput(usize),
    #[error("training diverged at epoch {epoch}: {reason}")]
    DivergenceDetected {
        epoch: usize,
        reason: String,
        partial_curve: Vec<f64>,
    },
    #[error("invalid layer stack: {0}")]
    InvalidStack(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty training set")]
    EmptyData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Self::Sigmoid => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
            // relu'(0) is taken as 0
            Self::Relu => z.max(0.0),
            Self::Tanh => z.tanh(),
            Self::Linear => z,
        }
    }

    /// Derivative expressed through the activation's output `a = f(z)`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Self::Sigmoid => a * (1.0 - a),
            Self::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - a * a,
            Self::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_size: usize,
    pub output_size: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_size: usize, output_size: usize, activation: Activation) -> Self {
        Self {
            input_size,
            output_size,
            activation,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.output_size * self.input_size + self.output_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Uniform in ±√(6 / (fan_in + fan_out)).
    #[default]
    UniformScaled,
    /// Normal with σ = √(2 / (fan_in + fan_out)).
    NormalScaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(flatten)]
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeroed(spec: LayerSpec) -> Self {
        Self {
            spec,
            weights: vec![0.0; spec.input_size * spec.output_size],
            biases: vec![0.0; spec.output_size],
        }
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.spec.input_size + col]
    }

    fn apply_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let n = self.spec.input_size;
        for (row, &b) in self.weights.chunks_exact(n).zip(&self.biases) {
            let z = row.iter().zip(input).fold(b, |acc, (w, x)| acc + w * x);
            out.push(self.spec.activation.apply(z));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub version: u32,
    pub seed: u64,
    pub init_scheme: InitScheme,
    /// Decoder layers reuse the transposed encoder weights.
    #[serde(default)]
    pub tied: bool,
    pub layers: Vec<Layer>,
}

/// Hidden sizes and activations of the default stack, for any input width.
pub fn default_stack(dimension: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(dimension, 200, Activation::Sigmoid),
        LayerSpec::new(200, 100, Activation::Relu),
        LayerSpec::new(100, 100, Activation::Tanh),
        LayerSpec::new(100, dimension, Activation::Sigmoid),
    ]
}

/// The 40 → 200 → 100 → 100 → 40 network.
pub fn build_default_network(seed: u64) -> Network {
    build_network(&default_stack(40), seed, InitScheme::UniformScaled, false).expect("default stack is valid")
}

pub fn build_network(specs: &[LayerSpec], seed: u64, init: InitScheme, tied: bool) -> Result<Network, NnError> {
    validate_stack(specs, tied)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers: Vec<Layer> = specs.iter().map(|&s| Layer::zeroed(s)).collect();
    let shared = if tied { specs.len() / 2 } else { specs.len() };
    for layer in &mut layers[..shared] {
        let fan = (layer.spec.input_size + layer.spec.output_size) as f64;
        match init {
            InitScheme::UniformScaled => {
                let limit = (6.0 / fan).sqrt();
                for w in &mut layer.weights {
                    *w = rng.gen_range(-limit..=limit);
                }
            }
            InitScheme::NormalScaled => {
                let normal = Normal::new(0.0, (2.0 / fan).sqrt()).expect("finite sigma");
                for w in &mut layer.weights {
                    *w = normal.sample(&mut rng);
                }
            }
        }
    }
    let mut net = Network {
        version: MODEL_FORMAT_VERSION,
        seed,
        init_scheme: init,
        tied,
        layers,
    };
    net.sync_tied();
    Ok(net)
}

fn validate_stack(specs: &[LayerSpec], tied: bool) -> Result<(), NnError> {
    if specs.is_empty() {
        return Err(NnError::InvalidStack("no layers".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.input_size == 0 || s.output_size == 0 {
            return Err(NnError::InvalidStack(format!("layer {i} has a zero size")));
        }
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if pair[0].output_size != pair[1].input_size {
            return Err(NnError::InvalidStack(format!(
                "layer {i} outputs {} but layer {} takes {}",
                pair[0].output_size,
                i + 1,
                pair[1].input_size
            )));
        }
    }
    if tied {
        let n = specs.len();
        if !n.is_multiple_of(2) {
            return Err(NnError::InvalidStack("tied weights need an even number of layers".into()));
        }
        for k in 0..n / 2 {
            let (enc, dec) = (specs[k], specs[n - 1 - k]);
            if enc.input_size != dec.output_size || enc.output_size != dec.input_size {
                return Err(NnError::InvalidStack(format!(
                    "tied weights need layer {} to mirror layer {k}",
                    n - 1 - k
                )));
            }
        }
    }
    Ok(())
}

/// Values kept from a forward pass. `activations[0]` is the input, the last
/// entry is the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Same shapes as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.biases.iter_mut()).for_each(|g| *g *= factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// Where a flat parameter index lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    Weight { layer: usize, index: usize },
    Bias { layer: usize, index: usize },
}

impl Network {
    pub fn input_size(&self) -> usize {
        self.layers[0].spec.input_size
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().expect("non-empty").spec.output_size
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    fn is_tied_decoder(&self, layer: usize) -> bool {
        self.tied && layer >= self.layers.len() / 2
    }

    /// Trainable parameters per layer; tied decoder layers only own biases.
    pub fn layer_parameter_counts(&self) -> Vec<usize> {
        (0..self.layers.len())
            .map(|k| {
                let l = &self.layers[k];
                if self.is_tied_decoder(k) {
                    l.biases.len()
                } else {
                    l.weights.len() + l.biases.len()
                }
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_parameter_counts().iter().sum()
    }

    /// Maps a flat index over the trainable parameters (layer by layer,
    /// weights before biases) to its storage slot.
    pub fn param_slot(&self, mut idx: usize) -> Option<ParamSlot> {
        for (k, l) in self.layers.iter().enumerate() {
            if !self.is_tied_decoder(k) {
                if idx < l.weights.len() {
                    return Some(ParamSlot::Weight { layer: k, index: idx });
                }
                idx -= l.weights.len();
            }
            if idx < l.biases.len() {
                return Some(ParamSlot::Bias { layer: k, index: idx });
            }
            idx -= l.biases.len();
        }
        None
    }

    pub fn param(&self, idx: usize) -> f64 {
        match self.param_slot(idx).expect("parameter index in range") {
            ParamSlot::Weight { layer, index } => self.layers[layer].weights[index],
            ParamSlot::Bias { layer, index } => self.layers[layer].biases[index],
        }
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        match self.param_slot(idx).expect("parameter index in range") {
            ParamSlot::Weight { layer, index } => {
                self.layers[layer].weights[index] = value;
                self.sync_tied();
            }
            ParamSlot::Bias { layer, index } => self.layers[layer].biases[index] = value,
        }
    }

    /// Gradient component for the same flat index as [`Network::param`].
    pub fn gradient_at(&self, grads: &Gradients, idx: usize) -> f64 {
        match self.param_slot(idx).expect("parameter index in range") {
            ParamSlot::Weight { layer, index } => grads.layers[layer].weights[index],
            ParamSlot::Bias { layer, index } => grads.layers[layer].biases[index],
        }
    }

    /// Copies transposed encoder weights into the decoder layers.
    fn sync_tied(&mut self) {
        if !self.tied {
            return;
        }
        let n = self.layers.len();
        for k in 0..n / 2 {
            let (head, tail) = self.layers.split_at_mut(n - 1 - k);
            let enc = &head[k];
            let dec = &mut tail[0];
            let (rows, cols) = (enc.spec.output_size, enc.spec.input_size);
            for r in 0..rows {
                for c in 0..cols {
                    dec.weights[c * rows + r] = enc.weights[r * cols + c];
                }
            }
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input_size() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_size(),
                found: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteInput(i));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Trace, NnError> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &[f64]) -> Trace {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.spec.output_size);
            layer.apply_into(activations.last().expect("non-empty"), &mut out);
            activations.push(out);
        }
        Trace { activations }
    }

    /// Σᵢ (x̂ᵢ − xᵢ)².
    pub fn reconstruction_error(&self, x: &[f64]) -> Result<f64, NnError> {
        let trace = self.forward(x)?;
        if trace.output().len() != x.len() {
            return Err(NnError::DimensionMismatch {
                expected: x.len(),
                found: trace.output().len(),
            });
        }
        Ok(squared_error(trace.output(), x))
    }

    /// Exact gradient of [`Network::reconstruction_error`] at `x`.
    pub fn backward(&self, x: &[f64]) -> Result<Gradients, NnError> {
        let mut grads = Gradients::zeros_like(self);
        self.accumulate_gradient(x, &mut grads)?;
        Ok(grads)
    }

    /// Adds the gradient at `x` into `grads` and returns the sample's error.
    pub fn accumulate_gradient(&self, x: &[f64], grads: &mut Gradients) -> Result<f64, NnError> {
        self.check_input(x)?;
        if self.output_size() != x.len() {
            return Err(NnError::DimensionMismatch {
                expected: x.len(),
                found: self.output_size(),
            });
        }
        let trace = self.forward_unchecked(x);
        let output = trace.output();
        let loss = squared_error(output, x);

        let mut delta: Vec<f64> = output.iter().zip(x).map(|(y, t)| 2.0 * (y - t)).collect();
        let mut upstream = Vec::new();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let act = &trace.activations[k + 1];
            let input = &trace.activations[k];
            for (d, &a) in delta.iter_mut().zip(act) {
                *d *= layer.spec.activation.derivative_from_output(a);
            }
            let n = layer.spec.input_size;
            let g = &mut grads.layers[k];
            for (i, &d) in delta.iter().enumerate() {
                g.biases[i] += d;
                if d != 0.0 {
                    for (gw, &inp) in g.weights[i * n..(i + 1) * n].iter_mut().zip(input) {
                        *gw += d * inp;
                    }
                }
            }
            if k > 0 {
                upstream.clear();
                upstream.resize(n, 0.0);
                for (row, &d) in layer.weights.chunks_exact(n).zip(&delta) {
                    if d != 0.0 {
                        for (u, &w) in upstream.iter_mut().zip(row) {
                            *u += w * d;
                        }
                    }
                }
                std::mem::swap(&mut delta, &mut upstream);
            }
        }
        if self.tied {
            self.fold_tied_gradients(grads);
        }
        Ok(loss)
    }

    /// Moves decoder weight gradients onto their encoder twins.
    fn fold_tied_gradients(&self, grads: &mut Gradients) {
        let n = self.layers.len();
        for k in 0..n / 2 {
            let (rows, cols) = (self.layers[k].spec.output_size, self.layers[k].spec.input_size);
            let (head, tail) = grads.layers.split_at_mut(n - 1 - k);
            let enc = &mut head[k];
            let dec = &mut tail[0];
            for r in 0..rows {
                for c in 0..cols {
                    enc.weights[r * cols + c] += dec.weights[c * rows + r];
                    dec.weights[c * rows + r] = 0.0;
                }
            }
        }
    }

    /// Plain gradient-descent step `θ ← θ − lr·g`.
    pub fn apply_gradients(&mut self, grads: &Gradients, learning_rate: f64) {
        for (k, (layer, g)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            let skip_weights = self.tied && k >= grads.layers.len() / 2;
            if !skip_weights {
                for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                    *w -= learning_rate * gw;
                }
            }
            for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
                *b -= learning_rate * gb;
            }
        }
        self.sync_tied();
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let mut net: Network = serde_json::from_str(text).map_err(|e| e.to_string())?;
        net.validate()?;
        net.sync_tied();
        Ok(net)
    }

    /// Checks layer chaining and parameter array lengths of a loaded network.
    pub fn validate(&self) -> Result<(), String> {
        validate_stack(&self.specs(), self.tied).map_err(|e| e.to_string())?;
        for (k, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.spec.input_size * l.spec.output_size || l.biases.len() != l.spec.output_size {
                return Err(format!("layer {k} parameter arrays do not match its sizes"));
            }
        }
        Ok(())
    }
}

#[inline]
fn squared_error(output: &[f64], target: &[f64]) -> f64 {
    output.iter().zip(target).map(|(y, t)| (y - t) * (y - t)).sum()
}
