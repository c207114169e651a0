//! Architecture description: config schema, validated layer graph with
//! inferred shapes, parameter initialization and the channel dependency map.

mod deps;
mod init;

pub use deps::{ChannelSource, DependencyMap};
pub use init::{init_params, InitScheme, LayerParams, ParamSet};

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{RanpError, Result};

/// Reserved id naming the network input in `inputs` lists.
pub const INPUT_ID: &str = "input";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "conv3d")]
    Conv3d,
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "maxpool")]
    MaxPool,
    #[serde(rename = "upsample")]
    Upsample,
    #[serde(rename = "concat")]
    Concat,
    #[serde(rename = "linear")]
    Linear,
    #[serde(rename = "softmax-head")]
    SoftmaxHead,
}

impl LayerKind {
    /// Conv and linear layers own parameters and neurons.
    pub fn is_compute(self) -> bool {
        matches!(self, LayerKind::Conv3d | LayerKind::Linear)
    }
}

/// One entry of the `layers` array in an architecture config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub id: String,
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<bool>,
    /// Upsampling scale factor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<usize>,
    pub inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protected: Option<bool>,
}

/// Top-level architecture config document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub input_shape: [usize; 4],
    pub classes: usize,
    pub layers: Vec<LayerConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    /// Output channel count (neuron count for compute layers).
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: [usize; 3],
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
    pub factor: usize,
    /// Indices of predecessor layers; `None` is the network input.
    pub inputs: Vec<Option<usize>>,
    pub protected: bool,
    /// Inferred `(C, D, H, W)` of this layer's output, batch excluded.
    pub output_shape: [usize; 4],
}

impl LayerSpec {
    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn output_spatial(&self) -> usize {
        self.output_shape[1..].iter().product()
    }

    pub fn output_elements(&self) -> usize {
        self.output_shape.iter().product()
    }

    /// Shape of this layer's weight tensor; compute layers only.
    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Linear => vec![self.out_channels, self.in_channels],
            _ => {
                let [kd, kh, kw] = self.kernel;
                vec![self.out_channels, self.in_channels, kd, kh, kw]
            }
        }
    }
}

/// A validated layer graph with inferred shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct NetSpec {
    pub layers: Vec<LayerSpec>,
    pub input_shape: [usize; 4],
    pub classes: usize,
}

impl NetSpec {
    pub fn parse(document: &str) -> Result<Self> {
        let cfg: NetConfig = serde_json::from_str(document)?;
        Self::from_config(&cfg)
    }

    pub fn from_config(cfg: &NetConfig) -> Result<Self> {
        build(cfg)
    }

    pub fn to_config(&self) -> NetConfig {
        let name = |i: Option<usize>| i.map_or(INPUT_ID.to_string(), |i| self.layers[i].id.clone());
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let compute = l.kind.is_compute();
                LayerConfig {
                    id: l.id.clone(),
                    kind: l.kind,
                    out_channels: compute.then_some(l.out_channels),
                    kernel: matches!(l.kind, LayerKind::Conv3d | LayerKind::MaxPool).then_some(l.kernel),
                    stride: matches!(l.kind, LayerKind::Conv3d | LayerKind::MaxPool).then_some(l.stride),
                    padding: (l.kind == LayerKind::Conv3d).then_some(l.padding),
                    bias: compute.then_some(l.bias),
                    factor: (l.kind == LayerKind::Upsample).then_some(l.factor),
                    inputs: l.inputs.iter().map(|&i| name(i)).collect(),
                    protected: compute.then_some(l.protected),
                }
            })
            .collect();
        NetConfig { input_shape: self.input_shape, classes: self.classes, layers }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_config()).expect("config serializes")
    }

    /// Indices of conv/linear layers in declared order.
    pub fn compute_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].kind.is_compute()).collect()
    }

    pub fn layer_index(&self, id: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.id == id)
    }

    pub fn head(&self) -> usize {
        self.layers.len() - 1
    }

    /// Number of stride-reducing stages along the deepest path, as a power of two
    /// bound on the smallest admissible input extent.
    pub fn min_spatial_extent(&self) -> usize {
        let mut reduction = vec![1usize; self.layers.len()];
        for (i, l) in self.layers.iter().enumerate() {
            let prev = l.inputs.iter().map(|&p| p.map_or(1, |p| reduction[p])).max().unwrap_or(1);
            reduction[i] = match l.kind {
                LayerKind::MaxPool | LayerKind::Conv3d => prev * l.stride,
                _ => prev,
            };
        }
        reduction.into_iter().max().unwrap_or(1)
    }

    /// Same graph and widths re-inferred at a new `(C, D, H, W)` input.
    pub fn with_input_shape(&self, input_shape: [usize; 4]) -> Result<Self> {
        let mut cfg = self.to_config();
        cfg.input_shape = input_shape;
        Self::from_config(&cfg)
    }

    /// Same graph with compute-layer widths replaced; shapes re-inferred.
    pub fn with_widths(&self, widths: &HashMap<usize, usize>) -> Result<Self> {
        let mut cfg = self.to_config();
        for (&i, &w) in widths {
            cfg.layers[i].out_channels = Some(w);
        }
        Self::from_config(&cfg)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.kind.is_compute())
            .map(|l| l.weight_shape().iter().product::<usize>() + if l.bias { l.out_channels } else { 0 })
            .sum()
    }
}

fn layer_err(id: &str, detail: impl Into<String>) -> RanpError {
    RanpError::Layer { layer: id.to_string(), detail: detail.into() }
}

fn build(cfg: &NetConfig) -> Result<NetSpec> {
    if cfg.input_shape.contains(&0) {
        return Err(RanpError::Config(format!("input_shape {:?} has a zero extent", cfg.input_shape)));
    }
    if cfg.classes == 0 {
        return Err(RanpError::Config("classes must be positive".into()));
    }
    if cfg.layers.is_empty() {
        return Err(RanpError::Config("no layers".into()));
    }

    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, l) in cfg.layers.iter().enumerate() {
        if l.id == INPUT_ID {
            return Err(layer_err(&l.id, format!("`{INPUT_ID}` is reserved")));
        }
        if index.insert(l.id.as_str(), i).is_some() {
            return Err(layer_err(&l.id, "duplicate layer id"));
        }
    }

    let mut layers: Vec<LayerSpec> = Vec::with_capacity(cfg.layers.len());
    for (i, l) in cfg.layers.iter().enumerate() {
        let mut inputs = Vec::with_capacity(l.inputs.len());
        for name in &l.inputs {
            if name == INPUT_ID {
                inputs.push(None);
                continue;
            }
            match index.get(name.as_str()) {
                Some(&j) if j < i => inputs.push(Some(j)),
                Some(_) => {
                    return Err(layer_err(&l.id, format!("input `{name}` must be declared earlier")))
                }
                None => {
                    return Err(RanpError::UnknownInput { layer: l.id.clone(), input: name.clone() })
                }
            }
        }
        let in_shape = |k: usize| -> [usize; 4] {
            inputs[k].map_or(cfg.input_shape, |j: usize| layers[j].output_shape)
        };

        let expect_arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(layer_err(&l.id, format!("expects {n} input(s), got {}", inputs.len())));
            }
            Ok(())
        };

        let mut spec = LayerSpec {
            id: l.id.clone(),
            kind: l.kind,
            out_channels: 0,
            in_channels: 0,
            kernel: [1, 1, 1],
            stride: 1,
            padding: 0,
            bias: l.bias.unwrap_or(false),
            factor: 1,
            inputs: inputs.clone(),
            protected: false,
            output_shape: [0; 4],
        };

        match l.kind {
            LayerKind::Conv3d => {
                expect_arity(1)?;
                let x = in_shape(0);
                let out = positive(l.out_channels, &l.id, "out_channels")?;
                let kernel = l.kernel.ok_or_else(|| layer_err(&l.id, "conv3d needs `kernel`"))?;
                if kernel.contains(&0) {
                    return Err(layer_err(&l.id, "kernel extents must be positive"));
                }
                let stride = l.stride.unwrap_or(1);
                if stride == 0 {
                    return Err(layer_err(&l.id, "stride must be positive"));
                }
                let padding = l.padding.unwrap_or(0);
                let mut shape = [out, 0, 0, 0];
                for a in 0..3 {
                    let span = x[1 + a] + 2 * padding;
                    if span < kernel[a] {
                        return Err(layer_err(
                            &l.id,
                            format!("shape inference failed: output extent < 1 on axis {a}"),
                        ));
                    }
                    shape[1 + a] = (span - kernel[a]) / stride + 1;
                }
                spec.out_channels = out;
                spec.in_channels = x[0];
                spec.kernel = kernel;
                spec.stride = stride;
                spec.padding = padding;
                spec.output_shape = shape;
            }
            LayerKind::Linear => {
                expect_arity(1)?;
                let x = in_shape(0);
                if x[1..] != [1, 1, 1] {
                    return Err(layer_err(
                        &l.id,
                        format!("linear needs a 1x1x1 spatial input, got {:?}", &x[1..]),
                    ));
                }
                let out = positive(l.out_channels, &l.id, "out_channels")?;
                spec.out_channels = out;
                spec.in_channels = x[0];
                spec.output_shape = [out, 1, 1, 1];
            }
            LayerKind::Relu | LayerKind::SoftmaxHead => {
                expect_arity(1)?;
                let x = in_shape(0);
                spec.out_channels = x[0];
                spec.in_channels = x[0];
                spec.output_shape = x;
            }
            LayerKind::MaxPool => {
                expect_arity(1)?;
                let x = in_shape(0);
                let kernel = l.kernel.unwrap_or([2, 2, 2]);
                if kernel[0] == 0 || kernel.iter().any(|&k| k != kernel[0]) {
                    return Err(layer_err(&l.id, "maxpool window must be a positive cube"));
                }
                let window = kernel[0];
                let stride = l.stride.unwrap_or(window);
                if stride == 0 {
                    return Err(layer_err(&l.id, "stride must be positive"));
                }
                let mut shape = [x[0], 0, 0, 0];
                for a in 0..3 {
                    if x[1 + a] < window {
                        return Err(layer_err(
                            &l.id,
                            format!(
                                "shape inference failed: pooling extent {} below window {window}",
                                x[1 + a]
                            ),
                        ));
                    }
                    shape[1 + a] = (x[1 + a] - window) / stride + 1;
                }
                spec.kernel = kernel;
                spec.stride = stride;
                spec.out_channels = x[0];
                spec.in_channels = x[0];
                spec.output_shape = shape;
            }
            LayerKind::Upsample => {
                expect_arity(1)?;
                let x = in_shape(0);
                let f = l.factor.unwrap_or(2);
                if f == 0 {
                    return Err(layer_err(&l.id, "factor must be positive"));
                }
                spec.factor = f;
                spec.out_channels = x[0];
                spec.in_channels = x[0];
                spec.output_shape = [x[0], x[1] * f, x[2] * f, x[3] * f];
            }
            LayerKind::Concat => {
                if inputs.len() < 2 {
                    return Err(layer_err(&l.id, "concat expects at least 2 inputs"));
                }
                let first = in_shape(0);
                let mut channels = 0;
                for k in 0..inputs.len() {
                    let s = in_shape(k);
                    if s[1..] != first[1..] {
                        return Err(layer_err(
                            &l.id,
                            format!("concat inputs differ spatially: {:?} vs {:?}", &first[1..], &s[1..]),
                        ));
                    }
                    channels += s[0];
                }
                spec.out_channels = channels;
                spec.in_channels = channels;
                spec.output_shape = [channels, first[1], first[2], first[3]];
            }
        }
        if !l.kind.is_compute() && (l.out_channels.is_some() || l.protected.is_some()) {
            log::warn!("layer `{}`: out_channels/protected ignored for {:?}", l.id, l.kind);
        }
        layers.push(spec);
    }

    let heads: Vec<usize> =
        (0..layers.len()).filter(|&i| layers[i].kind == LayerKind::SoftmaxHead).collect();
    let last = layers.len() - 1;
    if heads != [last] {
        return Err(RanpError::Config(
            "exactly one softmax-head is required and it must be the last layer".into(),
        ));
    }
    if layers[last].out_channels != cfg.classes {
        return Err(layer_err(
            &layers[last].id,
            format!("head has {} channels but classes = {}", layers[last].out_channels, cfg.classes),
        ));
    }

    // Default protection: the compute layer that produces the class scores.
    let score_layer = score_producer(&layers, last);
    for (i, l) in cfg.layers.iter().enumerate() {
        if layers[i].kind.is_compute() {
            layers[i].protected = l.protected.unwrap_or(Some(i) == score_layer);
        }
    }
    if layers.iter().all(|l| !l.kind.is_compute()) {
        return Err(RanpError::Config("network has no conv/linear layers".into()));
    }
    Ok(NetSpec { layers, input_shape: cfg.input_shape, classes: cfg.classes })
}

fn score_producer(layers: &[LayerSpec], head: usize) -> Option<usize> {
    let mut cur = head;
    loop {
        match layers[cur].inputs.as_slice() {
            [Some(p)] if layers[*p].kind.is_compute() => return Some(*p),
            [Some(p)] => cur = *p,
            _ => return None,
        }
    }
}

fn positive(v: Option<usize>, id: &str, field: &str) -> Result<usize> {
    match v {
        Some(n) if n > 0 => Ok(n),
        _ => Err(layer_err(id, format!("`{field}` must be a positive integer"))),
    }
}

/// Bundled desk-scale architectures, by name.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name.trim_end_matches(".json") {
        "mini-unet3d" => Some(include_str!("../../configs/mini-unet3d.json")),
        "mini-cls3d" => Some(include_str!("../../configs/mini-cls3d.json")),
        _ => None,
    }
}

pub fn bundled_spec(name: &str) -> Result<NetSpec> {
    let doc = bundled(name).ok_or_else(|| RanpError::Config(format!("no bundled config `{name}`")))?;
    NetSpec::parse(doc)
}
