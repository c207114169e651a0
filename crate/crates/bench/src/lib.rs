//! Shared fixtures for the benchmarks in `benches/`.

use ranp::harness::data::{gen_synth, Batch, SynthTask, TaskKind};
use ranp::harness::loss::LossConfig;
use ranp::harness::train::TrainConfig;
use ranp::importance::LayerScores;
use ranp::netgraph::{bundled_spec, init_params};
use ranp::{ImportanceMap, InitScheme, NetSpec, ParamSet, Stage, Tensor};

pub struct Fixture {
    pub spec: NetSpec,
    pub params: ParamSet,
    pub batches: Vec<Batch>,
    pub loss: LossConfig,
}

/// Bundled mini-UNet at Glorot init with `batches` segmentation batches of two.
pub fn unet(batches: usize) -> Fixture {
    let spec = bundled_spec("mini-unet3d").expect("bundled config");
    let params = init_params(&spec, InitScheme::Glorot, 0);
    let [_, d, h, w] = spec.input_shape;
    let data = gen_synth(&SynthTask::segmentation([d, h, w], spec.classes, 2 * batches, 0));
    let loss = TrainConfig::for_task(TaskKind::Segmentation).loss;
    Fixture { batches: data.batches(2), spec, params, loss }
}

/// Deterministic pseudo-random values in [-1, 1).
pub fn tensor(shape: &[usize], salt: u64) -> Tensor {
    Tensor::from_fn(shape, |i| {
        let x = (i as u64 ^ salt).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 11;
        x as f64 / (1u64 << 52) as f64 - 1.0
    })
}

/// Score map with `layers` layers of `width` neurons each.
pub fn scores(layers: usize, width: usize) -> ImportanceMap {
    let flat = tensor(&[layers * width], 7);
    ImportanceMap {
        stage: Stage::Reweighted,
        layers: (0..layers)
            .map(|l| LayerScores {
                layer: l,
                id: format!("l{l}"),
                scores: flat.data()[l * width..(l + 1) * width].iter().map(|v| v.abs()).collect(),
            })
            .collect(),
    }
}
