use std::collections::BTreeMap;

use super::{LayerKind, NetSpec};

/// Where a channel of some layer's output originates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelSource {
    /// Channel of the network input.
    Input(usize),
    /// Output channel (neuron) of a conv/linear layer.
    Neuron { layer: usize, channel: usize },
}

/// Producer-to-consumer channel wiring through pass-through layers and concat
/// offsets. Consumers are conv/linear layers; a slot is an input-channel index.
#[derive(Clone, Debug)]
pub struct DependencyMap {
    outputs: Vec<Vec<ChannelSource>>,
    inputs: Vec<Vec<ChannelSource>>,
    consumers: BTreeMap<(usize, usize), Vec<(usize, usize)>>,
}

impl DependencyMap {
    pub fn build(spec: &NetSpec) -> Self {
        let input: Vec<ChannelSource> = (0..spec.input_shape[0]).map(ChannelSource::Input).collect();
        let mut outputs: Vec<Vec<ChannelSource>> = Vec::with_capacity(spec.layers.len());
        let mut inputs = Vec::with_capacity(spec.layers.len());
        for (li, l) in spec.layers.iter().enumerate() {
            let incoming: Vec<ChannelSource> = l
                .inputs
                .iter()
                .flat_map(|p| p.map_or(&input, |p| &outputs[p]).iter().copied())
                .collect();
            let out = match l.kind {
                LayerKind::Conv3d | LayerKind::Linear => (0..l.out_channels)
                    .map(|channel| ChannelSource::Neuron { layer: li, channel })
                    .collect(),
                _ => incoming.clone(),
            };
            inputs.push(incoming);
            outputs.push(out);
        }
        let mut consumers: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
        for li in spec.compute_layers() {
            for (slot, src) in inputs[li].iter().enumerate() {
                if let ChannelSource::Neuron { layer, channel } = *src {
                    consumers.entry((layer, channel)).or_default().push((li, slot));
                }
            }
        }
        DependencyMap { outputs, inputs, consumers }
    }

    /// Channel origins of `layer`'s output.
    pub fn output_sources(&self, layer: usize) -> &[ChannelSource] {
        &self.outputs[layer]
    }

    /// Channel origins of `layer`'s (concatenated) input, one per slot.
    pub fn input_sources(&self, layer: usize) -> &[ChannelSource] {
        &self.inputs[layer]
    }

    /// Consumer `(layer, input slot)` pairs fed by neuron `channel` of `layer`.
    pub fn consumers(&self, layer: usize, channel: usize) -> &[(usize, usize)] {
        self.consumers.get(&(layer, channel)).map_or(&[], Vec::as_slice)
    }

    pub fn producer_of(&self, consumer: usize, slot: usize) -> ChannelSource {
        self.inputs[consumer][slot]
    }
}
