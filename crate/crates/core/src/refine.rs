//! Materializes masks into a physically smaller network.

use std::collections::HashMap;

use crate::error::{RanpError, Result};
use crate::masks::{LayerMask, MaskSet};
use crate::netgraph::{ChannelSource, DependencyMap, LayerKind, LayerParams, NetSpec, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SlimBuild {
    pub spec: NetSpec,
    pub params: ParamSet,
    /// Per compute layer (declared order): old channel index -> new index.
    pub channel_maps: Vec<(String, Vec<Option<usize>>)>,
}

fn new_index(keep: &[bool]) -> Vec<Option<usize>> {
    let mut next = 0;
    keep.iter()
        .map(|&k| {
            k.then(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// Removes pruned neurons and every input slice they feed.
pub fn refine(spec: &NetSpec, params: &ParamSet, masks: &MaskSet, dep: &DependencyMap) -> Result<SlimBuild> {
    params.validate(spec)?;
    masks.ensure_feasible()?;
    let compute = spec.compute_layers();
    let mut keep: HashMap<usize, &[bool]> = HashMap::new();
    for &li in &compute {
        let l = &spec.layers[li];
        let k = masks.keep_of(li).ok_or_else(|| RanpError::Layer {
            layer: l.id.clone(),
            detail: "missing from mask set".into(),
        })?;
        if k.len() != l.out_channels {
            return Err(RanpError::Layer {
                layer: l.id.clone(),
                detail: format!("mask has {} entries for {} channels", k.len(), l.out_channels),
            });
        }
        if l.protected && !k.iter().all(|&b| b) {
            return Err(RanpError::Layer { layer: l.id.clone(), detail: "protected layer has pruned neurons".into() });
        }
        keep.insert(li, k);
    }
    let alive = |src: &ChannelSource| match *src {
        ChannelSource::Input(_) => true,
        ChannelSource::Neuron { layer, channel } => keep[&layer][channel],
    };

    let widths: HashMap<usize, usize> =
        compute.iter().map(|&li| (li, keep[&li].iter().filter(|&&k| k).count())).collect();
    let slim_spec = spec.with_widths(&widths)?;

    let mut layers = Vec::with_capacity(compute.len());
    let mut channel_maps = Vec::with_capacity(compute.len());
    for (p, &li) in params.layers.iter().zip(&compute) {
        let l = &spec.layers[li];
        let outs: Vec<usize> = (0..l.out_channels).filter(|&u| keep[&li][u]).collect();
        let ins: Vec<usize> = (0..l.in_channels).filter(|&v| alive(&dep.producer_of(li, v))).collect();
        let taps = match l.kind {
            LayerKind::Linear => 1,
            _ => l.kernel_volume(),
        };
        let src = p.weight.data();
        let mut data = Vec::with_capacity(outs.len() * ins.len() * taps);
        for &u in &outs {
            for &v in &ins {
                let base = (u * l.in_channels + v) * taps;
                data.extend_from_slice(&src[base..base + taps]);
            }
        }
        let sl = &slim_spec.layers[li];
        let weight = Tensor::new(sl.weight_shape(), data)?;
        let bias = p.bias.as_ref().map(|b| Tensor::new(vec![outs.len()], outs.iter().map(|&u| b.data()[u]).collect()));
        layers.push(LayerParams { layer: li, weight, bias: bias.transpose()? });
        channel_maps.push((l.id.clone(), new_index(keep[&li])));
    }
    let params = ParamSet { layers };
    params.validate(&slim_spec)?;
    Ok(SlimBuild { spec: slim_spec, params, channel_maps })
}

/// Re-infers shapes at a new `(C, D, H, W)` input; weights carry over unchanged.
pub fn rebuild_at(slim: &SlimBuild, input_shape: [usize; 4]) -> Result<SlimBuild> {
    if input_shape[0] != slim.spec.input_shape[0] {
        return Err(RanpError::Config(format!(
            "input channels {} differ from the built network's {}",
            input_shape[0], slim.spec.input_shape[0]
        )));
    }
    let spec = slim.spec.with_input_shape(input_shape)?;
    slim.params.validate(&spec)?;
    Ok(SlimBuild { spec, params: slim.params.clone(), channel_maps: slim.channel_maps.clone() })
}

/// Carries masks from `source` to a structurally identical `target`, by layer
/// id; the target's protected layers are reset to all-ones at their own width.
pub fn transfer_masks(masks: &MaskSet, source: &NetSpec, target: &NetSpec) -> Result<MaskSet> {
    let n = source.layers.len().max(target.layers.len());
    for i in 0..n {
        let (s, t) = (source.layers.get(i), target.layers.get(i));
        let diverged = match (s, t) {
            (Some(s), Some(t)) => {
                s.id != t.id
                    || s.kind != t.kind
                    || s.inputs != t.inputs
                    || (s.kind.is_compute() && !t.protected && s.out_channels != t.out_channels)
            }
            _ => true,
        };
        if diverged {
            let id = t.or(s).map(|l| l.id.clone()).unwrap_or_default();
            return Err(RanpError::Layer { layer: id, detail: "graph differs from the mask source".into() });
        }
    }
    let layers = target
        .compute_layers()
        .into_iter()
        .map(|li| {
            let t = &target.layers[li];
            let keep = if t.protected {
                vec![true; t.out_channels]
            } else {
                masks.get(&t.id).ok_or_else(|| RanpError::UnknownLayer(t.id.clone()))?.keep.clone()
            };
            Ok(LayerMask { layer: li, id: t.id.clone(), protected: t.protected, keep })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MaskSet { layers })
}
