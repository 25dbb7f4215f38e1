//! The two-branch convolutional-recurrent change network.
//!
//! Optical (13 bands) and SAR (4 bands) frames each pass a 3×3 ReLU
//! convolution and a ConvLSTM; the final hidden states are concatenated and
//! fed through a 3×3 ReLU convolution, a single-step ConvLSTM, another 3×3
//! ReLU convolution and a 1×1 sigmoid head. Gates use the hard sigmoid
//! `clamp(0.2x + 0.5, 0, 1)`; cell and output activations use tanh.

mod checkpoint;
mod network;
pub mod ops;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{AssembledSequence, Window, BANDS, OPT_BANDS, SAR_BANDS};
use crate::raster::Raster;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use network::{ForwardContext, Gradients, Network, RunMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LayerKind {
    Conv,
    ConvRecurrent,
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    HardSigmoid,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub filters: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub activations: Vec<Activation>,
    pub dropout: f32,
}

impl LayerSpec {
    fn conv(filters: usize) -> Self {
        Self {
            kind: LayerKind::Conv,
            filters,
            kernel: (3, 3),
            stride: (1, 1),
            activations: vec![Activation::Relu],
            dropout: 0.0,
        }
    }

    fn recurrent(filters: usize) -> Self {
        Self {
            kind: LayerKind::ConvRecurrent,
            filters,
            kernel: (3, 3),
            stride: (1, 1),
            activations: vec![Activation::Tanh, Activation::HardSigmoid],
            dropout: 0.4,
        }
    }

    fn head() -> Self {
        Self {
            kind: LayerKind::Head,
            filters: 1,
            kernel: (1, 1),
            stride: (1, 1),
            activations: vec![Activation::Sigmoid],
            dropout: 0.0,
        }
    }
}

/// Layer configurations in order: branch conv, branch ConvLSTM, fused conv,
/// fused ConvLSTM, head conv, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub optical_bands: usize,
    pub sar_bands: usize,
    pub layers: Vec<LayerSpec>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self::with_filters([10, 10, 26, 26, 8])
    }
}

impl Architecture {
    /// Same layer kinds with custom filter counts (reduced test networks).
    pub fn with_filters(filters: [usize; 5]) -> Self {
        Self {
            optical_bands: OPT_BANDS,
            sar_bands: SAR_BANDS,
            layers: vec![
                LayerSpec::conv(filters[0]),
                LayerSpec::recurrent(filters[1]),
                LayerSpec::conv(filters[2]),
                LayerSpec::recurrent(filters[3]),
                LayerSpec::conv(filters[4]),
                LayerSpec::head(),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let kinds = [
            LayerKind::Conv,
            LayerKind::ConvRecurrent,
            LayerKind::Conv,
            LayerKind::ConvRecurrent,
            LayerKind::Conv,
            LayerKind::Head,
        ];
        if self.layers.len() != kinds.len() {
            return Err(Error::InvalidParams(format!("expected 6 layers, got {}", self.layers.len())));
        }
        if self.optical_bands + self.sar_bands != BANDS {
            return Err(Error::InvalidParams("branch bands must add up to 17".into()));
        }
        for (i, (layer, kind)) in self.layers.iter().zip(kinds).enumerate() {
            if layer.kind != kind {
                return Err(Error::InvalidParams(format!("layer {} must be {kind:?}", i + 1)));
            }
            if layer.filters == 0 || layer.kernel.0 % 2 == 0 || layer.kernel.1 % 2 == 0 {
                return Err(Error::InvalidParams(format!("layer {} needs filters > 0 and odd kernels", i + 1)));
            }
            if layer.stride != (1, 1) {
                return Err(Error::InvalidParams("only unit strides are supported".into()));
            }
            if !(0.0..1.0).contains(&layer.dropout) {
                return Err(Error::InvalidParams("dropout must lie in [0, 1)".into()));
            }
        }
        if self.layers[5].filters != 1 {
            return Err(Error::InvalidParams("the output layer has a single filter".into()));
        }
        Ok(())
    }

    /// Names and shapes of all parameter tensors, in storage order.
    ///
    /// Kernels are `[out][in][kh][kw]`; ConvLSTM kernels stack the gates
    /// `i, f, g, o` along `out`.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let l = &self.layers;
        let k = |s: &LayerSpec| (s.kernel.0, s.kernel.1);
        let mut shapes = Vec::new();
        let lstm = |shapes: &mut Vec<(String, Vec<usize>)>, name: &str, cin: usize, spec: &LayerSpec| {
            let (kh, kw) = k(spec);
            let h = spec.filters;
            shapes.push((format!("{name}/kernel"), vec![4 * h, cin, kh, kw]));
            shapes.push((format!("{name}/recurrent_kernel"), vec![4 * h, h, kh, kw]));
            shapes.push((format!("{name}/bias"), vec![4 * h]));
        };
        let push_conv = |shapes: &mut Vec<(String, Vec<usize>)>, name: &str, cin: usize, spec: &LayerSpec| {
            let (kh, kw) = k(spec);
            shapes.push((format!("{name}/kernel"), vec![spec.filters, cin, kh, kw]));
            shapes.push((format!("{name}/bias"), vec![spec.filters]));
        };
        push_conv(&mut shapes, "opt_conv", self.optical_bands, &l[0]);
        lstm(&mut shapes, "opt_lstm", l[0].filters, &l[1]);
        push_conv(&mut shapes, "sar_conv", self.sar_bands, &l[0]);
        lstm(&mut shapes, "sar_lstm", l[0].filters, &l[1]);
        push_conv(&mut shapes, "fuse_conv", 2 * l[1].filters, &l[2]);
        lstm(&mut shapes, "fuse_lstm", l[2].filters, &l[3]);
        push_conv(&mut shapes, "head_conv", l[3].filters, &l[4]);
        push_conv(&mut shapes, "output", l[4].filters, &l[5]);
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.tensor_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub architecture: Architecture,
    /// Seed used by [`init_params`].
    pub seed: u64,
    pub tensors: Vec<NamedTensor>,
}

impl ModelParams {
    pub fn zeros(architecture: Architecture) -> Self {
        let tensors = architecture
            .tensor_shapes()
            .into_iter()
            .map(|(name, shape)| NamedTensor {
                data: vec![0.0; shape.iter().product()],
                name,
                shape,
            })
            .collect();
        Self {
            architecture,
            seed: 0,
            tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Checks tensor names and shapes against the architecture.
    pub fn check_layout(&self) -> Result<()> {
        self.architecture.validate()?;
        let expected = self.architecture.tensor_shapes();
        if expected.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(&self.tensors) {
            if &t.name != name || &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Shape(format!("tensor {} does not match {name} {shape:?}", t.name)));
            }
        }
        Ok(())
    }
}

/// Exact number of scalar parameters.
pub fn param_count(params: &ModelParams) -> usize {
    params.tensors.iter().map(NamedTensor::len).sum()
}

/// Deterministic initialisation.
///
/// Kernels feeding ReLU layers draw from `U(±sqrt(6/fan_in))`; ConvLSTM input
/// and recurrent kernels and the output head draw from `U(±sqrt(3/fan_in))`.
/// All biases start at zero.
pub fn init_params(seed: u64) -> ModelParams {
    init_with(Architecture::default(), seed)
}

pub fn init_with(architecture: Architecture, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = architecture
        .tensor_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let data = if name.ends_with("/bias") {
                vec![0.0; n]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let gain = if name.contains("_lstm/") || name.starts_with("output/") { 3.0 } else { 6.0 };
                let limit = (gain / fan_in as f64).sqrt() as f32;
                (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
            };
            NamedTensor { name, shape, data }
        })
        .collect();
    ModelParams {
        architecture,
        seed,
        tensors,
    }
}

/// Network input: `[T][17][h][w]` frames with per-frame validity.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTensor {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub validity: Vec<bool>,
}

impl WindowTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>, validity: Vec<bool>) -> Result<Self> {
        if data.len() != validity.len() * BANDS * height * width {
            return Err(Error::Shape(format!(
                "window data of {} values does not hold {} frames of 17x{height}x{width}",
                data.len(),
                validity.len()
            )));
        }
        Ok(Self { height, width, data, validity })
    }

    /// Copies the window's frames out of `seq`, front-padding with invalid
    /// zero frames up to `pad_to` when given.
    pub fn from_window(seq: &AssembledSequence, window: &Window, pad_to: Option<usize>) -> Self {
        let t = window.len();
        let total = pad_to.map_or(t, |p| p.max(t));
        let frame_len = BANDS * seq.pixels();
        let mut data = vec![0.0f32; (total - t) * frame_len];
        data.reserve(t * frame_len);
        for f in window.frames() {
            data.extend_from_slice(&seq.frames[f]);
        }
        let mut validity = vec![false; total - t];
        validity.extend(std::iter::repeat_n(true, t));
        Self {
            height: seq.height,
            width: seq.width,
            data,
            validity,
        }
    }

    pub fn frames(&self) -> usize {
        self.validity.len()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = BANDS * self.pixels();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn valid_frames(&self) -> usize {
        self.validity.iter().filter(|&&v| v).count()
    }
}

/// Inference-mode prediction for one window.
pub fn forward(params: &ModelParams, window: &WindowTensor) -> Result<Raster> {
    let net = Network::<f32>::from_params(params)?;
    net.predict(window)
}
