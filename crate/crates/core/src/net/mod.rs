//! Small autoregressive networks with an interval (or scalar) head.
//!
//! A model reads one lag window and emits either `(lower, upper)` or a single
//! quantile. Recurrent and convolutional bodies consume the window as a
//! length-`lag` scalar sequence; the MLP sees it as one flat vector. The head
//! is affine on the last time step and places no ordering constraint on the
//! two bounds.
//!
//! Everything runs in `f64` with exact hand-written gradients, so
//! [`grad_check`] can compare against central differences at tight tolerance.

mod layers;

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use layers::{Activation, Block, Layer, LayerCache, Seq};

use crate::losses::IntervalPrediction;
use crate::series::Scaler;

/// Bumped whenever the saved model layout changes.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("window has length {got}, model expects lag {expected}")]
    WrongWindowLength { expected: usize, got: usize },
    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("parameter vector has length {got}, spec requires {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("cache does not match this model")]
    CacheMismatch,
    #[error("expected {expected} output gradients, got {got}")]
    OutputGradLength { expected: usize, got: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Mlp,
    Gru,
    Lstm,
    Tcn,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [Self::Mlp, Self::Gru, Self::Lstm, Self::Tcn];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mlp => "mlp",
            Self::Gru => "gru",
            Self::Lstm => "lstm",
            Self::Tcn => "tcn",
        }
    }

    /// Hidden sizes used when a config leaves them out.
    pub fn default_hidden(self) -> Vec<usize> {
        match self {
            Self::Mlp => vec![16, 16],
            Self::Gru | Self::Lstm => vec![32],
            Self::Tcn => vec![32],
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Architecture {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| NetError::InvalidSpec(format!("unknown architecture `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Two outputs: lower and upper bound.
    Interval,
    /// One output, used by the quantile baseline.
    Scalar,
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::Interval => 2,
            Head::Scalar => 1,
        }
    }
}

/// Shape of a network. Recurrent gates always use sigmoid/tanh;
/// `activation` applies to MLP and TCN layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub hidden_sizes: Vec<usize>,
    pub lag: usize,
    pub head: Head,
    #[serde(default = "ModelSpec::default_activation")]
    pub activation: Activation,
    #[serde(default = "ModelSpec::default_dilations")]
    pub tcn_dilations: Vec<usize>,
    #[serde(default = "ModelSpec::default_kernel")]
    pub kernel_width: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    fn default_activation() -> Activation {
        Activation::Relu
    }

    fn default_dilations() -> Vec<usize> {
        vec![1, 2, 4]
    }

    fn default_kernel() -> usize {
        3
    }

    /// Spec with the default sizes for `architecture`.
    pub fn new(architecture: Architecture, lag: usize, head: Head) -> Self {
        Self {
            architecture,
            hidden_sizes: architecture.default_hidden(),
            lag,
            head,
            activation: Self::default_activation(),
            tcn_dilations: Self::default_dilations(),
            kernel_width: Self::default_kernel(),
            seed: 0,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden_sizes = hidden;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    pub fn with_tcn(mut self, kernel_width: usize, dilations: Vec<usize>) -> Self {
        self.kernel_width = kernel_width;
        self.tcn_dilations = dilations;
        self
    }

    /// `1 + (kernel - 1) * sum(dilations)`.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel_width.saturating_sub(1)) * self.tcn_dilations.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::InvalidSpec(m));
        if self.lag == 0 {
            return bad("lag must be positive".into());
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return bad("hidden_sizes must be non-empty and positive".into());
        }
        if self.architecture == Architecture::Tcn {
            if self.kernel_width == 0 || self.tcn_dilations.is_empty() || self.tcn_dilations.contains(&0) {
                return bad("tcn needs a positive kernel width and positive dilations".into());
            }
            if self.receptive_field() <= 1 {
                return bad("tcn receptive field must exceed 1".into());
            }
        }
        Ok(())
    }
}

/// The layer stack for a spec, with parameter offsets resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    /// Affine head on the final step of the last layer.
    head: Layer,
    /// Whether the input window is one step of width `lag` (MLP) or `lag`
    /// steps of width 1.
    flat_input: bool,
    lag: usize,
    param_count: usize,
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    head: LayerCache,
    body_steps: usize,
    body_dim: usize,
}

impl Network {
    pub fn new(spec: &ModelSpec) -> Result<Self, NetError> {
        spec.validate()?;
        let mut offset = 0;
        let mut layers = Vec::new();
        let next = |layer: Layer, offset: &mut usize| {
            *offset += layer.param_count();
            layer
        };
        let (flat_input, mut width) = match spec.architecture {
            Architecture::Mlp => (true, spec.lag),
            _ => (false, 1),
        };
        for (i, &size) in spec.hidden_sizes.iter().enumerate() {
            let here = offset;
            let layer = match spec.architecture {
                Architecture::Mlp => Layer::Dense {
                    input: width,
                    output: size,
                    act: spec.activation,
                    offset: here,
                },
                Architecture::Gru => Layer::Gru {
                    input: width,
                    hidden: size,
                    offset: here,
                },
                Architecture::Lstm => Layer::Lstm {
                    input: width,
                    hidden: size,
                    offset: here,
                },
                Architecture::Tcn => {
                    // tcn has one block per dilation; hidden_sizes only sets channels
                    if i > 0 {
                        break;
                    }
                    for (b, &dilation) in spec.tcn_dilations.iter().enumerate() {
                        let output = spec.hidden_sizes[b.min(spec.hidden_sizes.len() - 1)];
                        let layer = Layer::Conv {
                            input: width,
                            output,
                            kernel: spec.kernel_width,
                            dilation,
                            act: spec.activation,
                            offset,
                        };
                        width = output;
                        layers.push(next(layer, &mut offset));
                    }
                    continue;
                }
            };
            width = layer.output_dim();
            layers.push(next(layer, &mut offset));
        }
        let head = Layer::Dense {
            input: width,
            output: spec.head.outputs(),
            act: Activation::Identity,
            offset,
        };
        offset += head.param_count();
        Ok(Self {
            layers,
            head,
            flat_input,
            lag: spec.lag,
            param_count: offset,
        })
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Parameter blocks in storage order.
    pub fn blocks(&self) -> Vec<(usize, Block)> {
        self.layers
            .iter()
            .chain(std::iter::once(&self.head))
            .enumerate()
            .flat_map(|(i, l)| l.blocks().into_iter().map(move |b| (i, b)))
            .collect()
    }

    fn input_seq(&self, window: &[f64]) -> Seq {
        if self.flat_input {
            Seq {
                steps: 1,
                dim: window.len(),
                data: window.to_vec(),
            }
        } else {
            Seq {
                steps: window.len(),
                dim: 1,
                data: window.to_vec(),
            }
        }
    }

    /// Runs the network on one window; returns head outputs and the cache.
    pub fn forward(&self, params: &[f64], window: &[f64]) -> Result<(Vec<f64>, ForwardCache), NetError> {
        if window.len() != self.lag {
            return Err(NetError::WrongWindowLength {
                expected: self.lag,
                got: window.len(),
            });
        }
        if params.len() != self.param_count {
            return Err(NetError::ParamCount {
                expected: self.param_count,
                got: params.len(),
            });
        }
        let mut x = self.input_seq(window);
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = layer.forward(params, x);
            if !y.data.iter().all(|v| v.is_finite()) {
                return Err(NetError::NonFiniteActivation { layer: i });
            }
            caches.push(cache);
            x = y;
        }
        let (body_steps, body_dim) = (x.steps, x.dim);
        let last = Seq {
            steps: 1,
            dim: x.dim,
            data: x.last().to_vec(),
        };
        let (out, head) = self.head.forward(params, last);
        if !out.data.iter().all(|v| v.is_finite()) {
            return Err(NetError::NonFiniteActivation {
                layer: self.layers.len(),
            });
        }
        Ok((
            out.data,
            ForwardCache {
                layers: caches,
                head,
                body_steps,
                body_dim,
            },
        ))
    }

    /// Adds `d loss / d params` into `grad` for one forward pass.
    pub fn backward_into(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        d_outputs: &[f64],
        grad: &mut [f64],
    ) -> Result<(), NetError> {
        if cache.layers.len() != self.layers.len()
            || !self.head.accepts(&cache.head)
            || self.layers.iter().zip(&cache.layers).any(|(l, c)| !l.accepts(c))
            || grad.len() != self.param_count
            || params.len() != self.param_count
        {
            return Err(NetError::CacheMismatch);
        }
        let outputs = self.head.output_dim();
        if d_outputs.len() != outputs {
            return Err(NetError::OutputGradLength {
                expected: outputs,
                got: d_outputs.len(),
            });
        }
        let d_head = Seq {
            steps: 1,
            dim: outputs,
            data: d_outputs.to_vec(),
        };
        let d_last = self.head.backward(params, &cache.head, &d_head, grad);
        let mut d = Seq::zeros(cache.body_steps, cache.body_dim);
        d.row_mut(cache.body_steps - 1).copy_from_slice(&d_last.data);
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            d = layer.backward(params, c, &d, grad);
        }
        Ok(())
    }
}

/// All weights and biases in one flat vector, with the block layout they
/// were created for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub values: Vec<f64>,
    pub layout: Vec<ParamBlock>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub layer: usize,
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zeros(spec: &ModelSpec) -> Result<Self, NetError> {
        let net = Network::new(spec)?;
        Ok(Self {
            values: vec![0.0; net.param_count()],
            layout: layout_of(&net),
        })
    }
}

fn layout_of(net: &Network) -> Vec<ParamBlock> {
    net.blocks()
        .into_iter()
        .map(|(layer, b)| ParamBlock {
            layer,
            name: b.name,
            offset: b.offset,
            shape: b.shape,
        })
        .collect()
}

/// Weights ~ U(-l, l) with `l = sqrt(3 * gain / fan_in)`; biases zero except
/// the LSTM forget gate, which starts at one, and an interval head, which
/// starts at (-1, 1) so bounds begin ordered one scaled unit either side.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamSet, NetError> {
    let net = Network::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; net.param_count()];
    for (_, block) in net.blocks() {
        let slot = &mut values[block.offset..block.offset + block.len()];
        if block.fan_in == 0 {
            slot.fill(block.bias_fill);
            continue;
        }
        let limit = (3.0 * block.gain / block.fan_in as f64).sqrt();
        for v in slot.iter_mut() {
            *v = rng.gen_range(-limit..limit);
        }
    }
    for layer in net.layers() {
        if let Layer::Lstm { hidden, .. } = *layer {
            let bias = layer.blocks().into_iter().find(|b| b.name == "bias").expect("lstm bias block");
            values[bias.offset + hidden..bias.offset + 2 * hidden].fill(1.0);
        }
    }
    if spec.head == Head::Interval {
        let bias = net.head.blocks().into_iter().find(|b| b.name == "bias").expect("head bias block");
        values[bias.offset] = -1.0;
        values[bias.offset + 1] = 1.0;
    }
    Ok(ParamSet {
        values,
        layout: layout_of(&net),
    })
}

/// A trained (or freshly initialised) forecaster: spec, weights and the
/// scaler that maps raw observations into network units.
#[derive(Debug, Clone, PartialEq)]
pub struct PiModel {
    spec: ModelSpec,
    params: ParamSet,
    scaler: Scaler,
    net: Network,
}

/// Head outputs plus whatever backward needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub outputs: Vec<f64>,
    pub cache: ForwardCache,
}

impl PiModel {
    pub fn new(spec: ModelSpec, params: ParamSet, scaler: Scaler) -> Result<Self, NetError> {
        let net = Network::new(&spec)?;
        if params.values.len() != net.param_count() {
            return Err(NetError::ParamCount {
                expected: net.param_count(),
                got: params.values.len(),
            });
        }
        if !params.values.iter().all(|v| v.is_finite()) {
            return Err(NetError::Format("non-finite parameter".into()));
        }
        Ok(Self {
            spec,
            params,
            scaler,
            net,
        })
    }

    /// Fresh model initialised from `spec.seed`.
    pub fn init(spec: ModelSpec, scaler: Scaler) -> Result<Self, NetError> {
        let params = init_params(&spec, spec.seed)?;
        Self::new(spec, params, scaler)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn lag(&self) -> usize {
        self.spec.lag
    }

    pub(crate) fn set_values(&mut self, values: &[f64]) {
        self.params.values.copy_from_slice(values);
    }

    /// Forward pass on a window that is already in scaled units.
    pub fn forward(&self, window: &[f64]) -> Result<ForwardPass, NetError> {
        let (outputs, cache) = self.net.forward(&self.params.values, window)?;
        Ok(ForwardPass { outputs, cache })
    }

    /// Gradient of `sum_j d_outputs[j] * output_j` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, d_outputs: &[f64]) -> Result<Vec<f64>, NetError> {
        let mut grad = vec![0.0; self.net.param_count()];
        self.net.backward_into(&self.params.values, cache, d_outputs, &mut grad)?;
        Ok(grad)
    }

    /// Raw head outputs for a window in original units, mapped back to
    /// original units. Bounds may be crossed.
    pub fn predict_raw(&self, window: &[f64]) -> Result<Vec<f64>, NetError> {
        let scaled: Vec<f64> = window.iter().map(|&v| self.scaler.apply(v)).collect();
        let out = self.forward(&scaled)?.outputs;
        Ok(out.into_iter().map(|v| self.scaler.invert(v)).collect())
    }

    /// Unordered `(first, second)` outputs of an interval head in original units.
    pub fn predict_interval_raw(&self, window: &[f64]) -> Result<IntervalPrediction, NetError> {
        let out = self.predict_raw(window)?;
        match self.spec.head {
            Head::Interval => Ok(IntervalPrediction::new(out[0], out[1])),
            Head::Scalar => Ok(IntervalPrediction::new(out[0], out[0])),
        }
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<(), NetError> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            spec: self.spec.clone(),
            scaler: self.scaler,
            layout: self.params.layout.clone(),
            params: self.params.values.clone(),
        };
        serde_json::to_writer_pretty(writer, &file).map_err(|e| NetError::Format(e.to_string()))
    }

    pub fn load<R: Read>(reader: R) -> Result<Self, NetError> {
        let file: ModelFile = serde_json::from_reader(reader).map_err(|e| NetError::Format(e.to_string()))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(NetError::Format(format!(
                "unsupported format_version {} (expected {MODEL_FORMAT_VERSION})",
                file.format_version
            )));
        }
        let net = Network::new(&file.spec)?;
        if file.layout != layout_of(&net) {
            return Err(NetError::Format("parameter layout does not match spec".into()));
        }
        Self::new(
            file.spec,
            ParamSet {
                values: file.params,
                layout: file.layout,
            },
            file.scaler,
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    spec: ModelSpec,
    scaler: Scaler,
    layout: Vec<ParamBlock>,
    params: Vec<f64>,
}

/// Largest relative error between [`PiModel::backward`] and central
/// differences of `h`, over every parameter.
///
/// The scalar being differentiated is `sum_windows sum_j c_j * output_j` with
/// fixed pseudo-random `c`, so every head output contributes. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(model: &PiModel, batch: &[Vec<f64>], h: f64) -> Result<f64, NetError> {
    let outputs = model.spec.head.outputs();
    let coeffs: Vec<f64> = (0..outputs).map(|j| 0.7 - 1.3 * j as f64).collect();
    let objective = |values: &[f64]| -> Result<f64, NetError> {
        let mut total = 0.0;
        for w in batch {
            let (out, _) = model.net.forward(values, w)?;
            total += out.iter().zip(&coeffs).map(|(o, c)| o * c).sum::<f64>();
        }
        Ok(total)
    };

    let mut analytic = vec![0.0; model.net.param_count()];
    for w in batch {
        let (_, cache) = model.net.forward(&model.params.values, w)?;
        model
            .net
            .backward_into(&model.params.values, &cache, &coeffs, &mut analytic)?;
    }

    let mut values = model.params.values.clone();
    let mut worst: f64 = 0.0;
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = orig + h;
        let plus = objective(&values)?;
        values[i] = orig - h;
        let minus = objective(&values)?;
        values[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
