//! Runs a [`NetSpec`] forward on a fresh tape.

use crate::autodiff::{ConvParams, Tape, Var};
use crate::error::{shape_err, Result};
use crate::masks::MaskSet;
use crate::netgraph::{LayerKind, NetSpec, ParamSet};
use crate::tensor::Tensor;

/// Where explicit neuron-mask variables multiply a neuron's activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskPlacement {
    /// On the conv/linear output, before its activation.
    PreActivation,
    /// After the ReLU that is the layer's sole consumer (falls back to the
    /// layer output when there is none).
    PostActivation,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions<'a> {
    /// Fixed binary masks multiplied into compute-layer outputs.
    pub channel_masks: Option<&'a MaskSet>,
    /// Multiply every weight and bias by an all-ones leaf of the same shape.
    pub param_mask_leaves: bool,
    /// Multiply every neuron by an all-ones per-channel leaf.
    pub neuron_mask_leaves: Option<MaskPlacement>,
}

/// Taped forward pass; vectors over compute layers follow declared order.
pub struct Forward {
    pub tape: Tape,
    pub input: Var,
    /// Per layer output; for the softmax head this is the class probabilities.
    pub outputs: Vec<Var>,
    /// Pre-softmax class scores.
    pub logits: Var,
    pub weights: Vec<Var>,
    pub biases: Vec<Option<Var>>,
    pub weight_masks: Vec<Var>,
    pub bias_masks: Vec<Option<Var>>,
    pub neuron_masks: Vec<Var>,
}

pub fn forward(spec: &NetSpec, params: &ParamSet, input: &Tensor, opts: ForwardOptions) -> Result<Forward> {
    let xd = input.dims5("forward")?;
    if xd[1..] != spec.input_shape {
        return Err(shape_err(
            "forward",
            format!("input {:?} does not match network input {:?}", &xd[1..], spec.input_shape),
        ));
    }
    params.validate(spec)?;
    let batch = xd[0];
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());

    let compute = spec.compute_layers();
    let mut consumers = vec![Vec::new(); spec.layers.len()];
    for (i, l) in spec.layers.iter().enumerate() {
        for p in l.inputs.iter().flatten() {
            consumers[*p].push(i);
        }
    }
    // relu layer -> compute-order index whose post-activation mask it carries
    let mut post_mask_owner = vec![None; spec.layers.len()];

    let mut outputs: Vec<Var> = Vec::with_capacity(spec.layers.len());
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    let mut weight_masks = Vec::new();
    let mut bias_masks = Vec::new();
    let mut neuron_masks = Vec::new();
    let mut logits = None;

    for (li, l) in spec.layers.iter().enumerate() {
        let src = |k: usize| l.inputs[k].map_or(x, |p| outputs[p]);
        let out = match l.kind {
            LayerKind::Conv3d | LayerKind::Linear => {
                let ci = compute.iter().position(|&c| c == li).expect("compute layer");
                let p = &params.layers[ci];
                let mut w = tape.leaf(p.weight.clone());
                let mut b = p.bias.as_ref().map(|b| tape.leaf(b.clone()));
                weights.push(w);
                biases.push(b);
                if opts.param_mask_leaves {
                    let wm = tape.leaf(Tensor::ones(p.weight.shape()));
                    w = tape.mul(w, wm)?;
                    weight_masks.push(wm);
                    let bm = match b {
                        Some(bv) => {
                            let bm = tape.leaf(Tensor::ones(&[l.out_channels]));
                            b = Some(tape.mul(bv, bm)?);
                            Some(bm)
                        }
                        None => None,
                    };
                    bias_masks.push(bm);
                }
                let mut y = if l.kind == LayerKind::Conv3d {
                    tape.conv3d(src(0), w, b, ConvParams { stride: l.stride, padding: l.padding })?
                } else {
                    let flat = tape.reshape(src(0), &[batch, l.in_channels])?;
                    let y = tape.linear(flat, w, b)?;
                    tape.reshape(y, &[batch, l.out_channels, 1, 1, 1])?
                };
                if let Some(masks) = opts.channel_masks {
                    let keep = masks.keep_of(li).ok_or_else(|| crate::error::RanpError::Layer {
                        layer: l.id.clone(),
                        detail: "mask set has no entry for this layer".into(),
                    })?;
                    let factors = Tensor::new(
                        vec![keep.len()],
                        keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect(),
                    )?;
                    let c = tape.leaf(factors);
                    y = tape.scale_channels(y, c)?;
                }
                if let Some(placement) = opts.neuron_mask_leaves {
                    let c = tape.leaf(Tensor::ones(&[l.out_channels]));
                    neuron_masks.push(c);
                    let relu_consumer = match consumers[li].as_slice() {
                        [r] if spec.layers[*r].kind == LayerKind::Relu => Some(*r),
                        _ => None,
                    };
                    match (placement, relu_consumer) {
                        (MaskPlacement::PostActivation, Some(r)) => post_mask_owner[r] = Some(c),
                        _ => y = tape.scale_channels(y, c)?,
                    }
                }
                y
            }
            LayerKind::Relu => {
                let y = tape.relu(src(0));
                match post_mask_owner[li] {
                    Some(c) => tape.scale_channels(y, c)?,
                    None => y,
                }
            }
            LayerKind::MaxPool => tape.maxpool3d(src(0), l.kernel[0], l.stride)?,
            LayerKind::Upsample => tape.upsample_nearest3d(src(0), l.factor)?,
            LayerKind::Concat => {
                let mut acc = src(0);
                for k in 1..l.inputs.len() {
                    acc = tape.concat_channels(acc, src(k))?;
                }
                acc
            }
            LayerKind::SoftmaxHead => {
                logits = Some(src(0));
                tape.softmax(src(0), 1)?
            }
        };
        outputs.push(out);
    }

    Ok(Forward {
        tape,
        input: x,
        outputs,
        logits: logits.expect("validated spec ends in a softmax head"),
        weights,
        biases,
        weight_masks,
        bias_masks,
        neuron_masks,
    })
}

/// Class scores of `spec` on `input` with optional fixed channel masks.
pub fn predict(spec: &NetSpec, params: &ParamSet, input: &Tensor, masks: Option<&MaskSet>) -> Result<Tensor> {
    let fwd = forward(spec, params, input, ForwardOptions { channel_masks: masks, ..Default::default() })?;
    Ok(fwd.tape.value(fwd.logits).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{bundled_spec, init_params, InitScheme};

    #[test]
    fn layer_output_shapes_match_inference() {
        for name in ["mini-unet3d", "mini-cls3d"] {
            let spec = bundled_spec(name).unwrap();
            let params = init_params(&spec, InitScheme::Glorot, 1);
            let [c, d, h, w] = spec.input_shape;
            let x = Tensor::from_fn(&[2, c, d, h, w], |i| ((i * 7919) % 13) as f64 / 13.0);
            let fwd = forward(&spec, &params, &x, ForwardOptions::default()).unwrap();
            for (l, &v) in spec.layers.iter().zip(&fwd.outputs) {
                let s = fwd.tape.value(v).shape();
                assert_eq!(s[0], 2);
                assert_eq!(s[1..], l.output_shape, "{}", l.id);
            }
        }
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let spec = bundled_spec("mini-cls3d").unwrap();
        let params = init_params(&spec, InitScheme::Glorot, 1);
        let x = Tensor::zeros(&[1, 1, 8, 8, 8]);
        assert!(forward(&spec, &params, &x, ForwardOptions::default()).is_err());
    }
}
