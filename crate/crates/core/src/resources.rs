//! Per-layer FLOPs and activation-memory costs.
//!
//! FLOPs of a conv layer with kernel volume `K`, `C_in` input channels and
//! output `(C_out, D, H, W)`: `(2 K C_in - 1 + [bias]) C_out D H W`, i.e. one
//! multiply and one add per tap, minus the first add, plus the bias add.
//! Linear layers are 1x1x1 convs on a 1x1x1 grid. Memory is the number of
//! output elements (batch excluded); every layer contributes its output.

use serde::{Deserialize, Serialize};

use crate::error::{RanpError, Result};
use crate::masks::MaskSet;
use crate::netgraph::{ChannelSource, DependencyMap, LayerKind, LayerSpec, NetSpec};

/// Bytes per activation element used for MB figures.
pub const BYTES_PER_ELEMENT: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceKind {
    Flops,
    Memory,
}

/// How raw τ is scaled before the softmax over layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauNormalization {
    #[default]
    Max,
    Mean,
    Sum,
}

/// A layer cut off from every input (possible under infeasible masks) costs
/// nothing: its output is at most the bias.
pub fn layer_flops(layer: &LayerSpec) -> u128 {
    if !layer.kind.is_compute() || layer.in_channels == 0 {
        return 0;
    }
    let kvol = match layer.kind {
        LayerKind::Linear => 1,
        _ => layer.kernel_volume() as u128,
    };
    let per_output = 2 * kvol * layer.in_channels as u128 - 1 + u128::from(layer.bias);
    per_output * layer.out_channels as u128 * layer.output_spatial() as u128
}

pub fn layer_mem(layer: &LayerSpec) -> u64 {
    layer.output_elements() as u64
}

fn layer_params(layer: &LayerSpec) -> u64 {
    if !layer.kind.is_compute() {
        return 0;
    }
    let w: usize = layer.weight_shape().iter().product();
    (w + if layer.bias { layer.out_channels } else { 0 }) as u64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerResources {
    pub id: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub flops: u128,
    pub mem: u64,
    pub params: u64,
}

impl LayerResources {
    pub fn is_compute(&self) -> bool {
        self.kind.is_compute()
    }

    pub fn tau(&self, kind: ResourceKind) -> f64 {
        match kind {
            ResourceKind::Flops => self.flops as f64,
            ResourceKind::Memory => self.mem as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceProfile {
    pub layers: Vec<LayerResources>,
    pub total_flops: u128,
    pub total_mem: u64,
    pub total_params: u64,
}

impl ResourceProfile {
    pub fn mem_mb(&self) -> f64 {
        self.total_mem as f64 * BYTES_PER_ELEMENT / (1024.0 * 1024.0)
    }

    pub fn params_mb(&self) -> f64 {
        self.total_params as f64 * BYTES_PER_ELEMENT / (1024.0 * 1024.0)
    }

    pub fn get(&self, id: &str) -> Option<&LayerResources> {
        self.layers.iter().find(|l| l.id == id)
    }

    /// `(layer id, τ)` for every conv/linear layer.
    pub fn tau(&self, kind: ResourceKind) -> Vec<(&str, f64)> {
        self.layers.iter().filter(|l| l.is_compute()).map(|l| (l.id.as_str(), l.tau(kind))).collect()
    }

    /// τ of compute layers divided by their max (or mean/sum).
    pub fn normalized_tau(&self, kind: ResourceKind, norm: TauNormalization) -> Vec<(&str, f64)> {
        let tau = self.tau(kind);
        let denom = match norm {
            TauNormalization::Max => tau.iter().map(|t| t.1).fold(0.0, f64::max),
            TauNormalization::Mean => tau.iter().map(|t| t.1).sum::<f64>() / tau.len().max(1) as f64,
            TauNormalization::Sum => tau.iter().map(|t| t.1).sum::<f64>(),
        };
        tau.into_iter().map(|(id, t)| (id, if denom > 0.0 { t / denom } else { 0.0 })).collect()
    }

    pub fn reduction_against(&self, full: &ResourceProfile) -> Reduction {
        let pct = |pruned: f64, total: f64| if total > 0.0 { 100.0 * (1.0 - pruned / total) } else { 0.0 };
        Reduction {
            flops_pct: pct(self.total_flops as f64, full.total_flops as f64),
            mem_pct: pct(self.total_mem as f64, full.total_mem as f64),
            params_pct: pct(self.total_params as f64, full.total_params as f64),
        }
    }
}

/// Percentage reductions `100 (1 - pruned / full)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub flops_pct: f64,
    pub mem_pct: f64,
    pub params_pct: f64,
}

/// Costs of `spec`, optionally with channels removed per `masks`: pruned
/// neurons shrink their layer's outputs, every pass-through layer carrying
/// them, and the inputs of every consumer.
pub fn profile(spec: &NetSpec, masks: Option<&MaskSet>) -> Result<ResourceProfile> {
    let mut effective: Vec<LayerSpec> = spec.layers.clone();
    if let Some(masks) = masks {
        for m in &masks.layers {
            let l = spec.layers.get(m.layer).filter(|l| l.id == m.id && l.kind.is_compute());
            let Some(l) = l else { return Err(RanpError::UnknownLayer(m.id.clone())) };
            if m.keep.len() != l.out_channels {
                return Err(RanpError::Layer {
                    layer: m.id.clone(),
                    detail: format!("mask has {} entries for {} channels", m.keep.len(), l.out_channels),
                });
            }
        }
        let alive = |src: &ChannelSource| match *src {
            ChannelSource::Input(_) => true,
            ChannelSource::Neuron { layer, channel } => masks.keep_of(layer).is_none_or(|k| k[channel]),
        };
        let dep = DependencyMap::build(spec);
        for (li, l) in effective.iter_mut().enumerate() {
            l.out_channels = dep.output_sources(li).iter().filter(|s| alive(s)).count();
            l.in_channels = dep.input_sources(li).iter().filter(|s| alive(s)).count();
            l.output_shape[0] = l.out_channels;
        }
    }
    let layers: Vec<LayerResources> = effective
        .iter()
        .map(|l| LayerResources {
            id: l.id.clone(),
            kind: l.kind,
            in_channels: l.in_channels,
            out_channels: l.out_channels,
            flops: layer_flops(l),
            mem: layer_mem(l),
            params: layer_params(l),
        })
        .collect();
    Ok(ResourceProfile {
        total_flops: layers.iter().map(|l| l.flops).sum(),
        total_mem: layers.iter().map(|l| l.mem).sum(),
        total_params: layers.iter().map(|l| l.params).sum(),
        layers,
    })
}
