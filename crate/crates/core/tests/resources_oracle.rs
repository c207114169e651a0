mod common;

use common::*;
use rand::Rng;
use ranp::exec::{forward, ForwardOptions};
use ranp::masks::random_masks;
use ranp::netgraph::{bundled_spec, NetSpec};
use ranp::resources::{layer_flops, layer_mem, profile};
use ranp::MaskSet;

#[test]
fn flops_match_counting_oracle() {
    let mut r = rng(21);
    for _ in 0..1000 {
        let (layer, out) = random_conv_layer(&mut r);
        assert_eq!(layer.output_shape, out, "shape inference");
        assert_eq!(layer_flops(&layer), counted_flops(layer.kernel_volume(), layer.in_channels, layer.bias, out));
    }
    for _ in 0..100 {
        let l = random_linear_layer(&mut r);
        assert_eq!(layer_flops(&l), counted_flops(1, l.in_channels, l.bias, [l.out_channels, 1, 1, 1]));
    }
    assert_eq!(counted_flops(27, 2, true, [4, 8, 8, 8]), 221_184);
}

#[test]
fn memory_matches_instrumented_forward() {
    let mut r = rng(22);
    let mut specs: Vec<NetSpec> = (0..10).map(|_| random_relu_net(&mut r)).collect();
    specs.push(bundled_spec("mini-unet3d").unwrap());
    specs.push(bundled_spec("mini-cls3d").unwrap());
    for spec in &specs {
        let params = random_params(&mut r, spec);
        let batch = random_batch(&mut r, spec, 1);
        let fwd = forward(spec, &params, &batch.inputs, ForwardOptions::default()).unwrap();
        for (l, &v) in spec.layers.iter().zip(&fwd.outputs) {
            assert_eq!(layer_mem(l), fwd.tape.value(v).len() as u64, "{}", l.id);
            assert_eq!(&fwd.tape.value(v).shape()[1..], &l.output_shape);
        }
    }
}

fn chain() -> NetSpec {
    NetSpec::parse(
        r#"{"input_shape": [1, 6, 6, 6], "classes": 2, "layers": [
            {"id": "a", "kind": "conv3d", "out_channels": 8, "kernel": [3,3,3], "padding": 1, "inputs": ["input"]},
            {"id": "ra", "kind": "relu", "inputs": ["a"]},
            {"id": "b", "kind": "conv3d", "out_channels": 8, "kernel": [3,3,3], "padding": 1, "inputs": ["ra"]},
            {"id": "rb", "kind": "relu", "inputs": ["b"]},
            {"id": "c", "kind": "conv3d", "out_channels": 8, "kernel": [3,3,3], "padding": 1, "inputs": ["rb"]},
            {"id": "rc", "kind": "relu", "inputs": ["c"]},
            {"id": "head", "kind": "conv3d", "out_channels": 2, "kernel": [1,1,1], "inputs": ["rc"]},
            {"id": "s", "kind": "softmax-head", "inputs": ["head"]}
        ]}"#,
    )
    .unwrap()
}

#[test]
fn halving_every_layer_quarters_interior_flops() {
    let spec = chain();
    let mut masks = MaskSet::all_ones(&spec);
    for m in masks.layers.iter_mut().filter(|m| !m.protected) {
        m.keep.iter_mut().skip(4).for_each(|k| *k = false);
    }
    let full = profile(&spec, None).unwrap();
    let half = profile(&spec, Some(&masks)).unwrap();
    let b_full = full.get("b").unwrap().flops as f64;
    let b_half = half.get("b").unwrap().flops as f64;
    assert_eq!(b_half, ((2 * 27 * 4 - 1) * 4 * 216) as f64);
    assert!((b_half / b_full - 0.25).abs() < 0.01);
}

#[test]
fn pruning_strictly_lowers_totals_and_reports_match() {
    let mut r = rng(23);
    let spec = bundled_spec("mini-unet3d").unwrap();
    let full = profile(&spec, None).unwrap();
    for _ in 0..30 {
        let kappa = r.random_range(0.01..0.9);
        let masks = random_masks(&spec, kappa, r.random()).unwrap();
        if masks.is_all_ones() {
            continue;
        }
        let p = profile(&spec, Some(&masks)).unwrap();
        assert!(p.total_flops < full.total_flops && p.total_mem < full.total_mem);
        let red = p.reduction_against(&full);
        let expect = 100.0 * (1.0 - p.total_flops as f64 / full.total_flops as f64);
        assert!((red.flops_pct - expect).abs() < 1e-9);
        let expect = 100.0 * (1.0 - p.total_mem as f64 / full.total_mem as f64);
        assert!((red.mem_pct - expect).abs() < 1e-9);
    }
}
