//! Neuron importance from mask gradients.
//!
//! The gradient of the loss w.r.t. a multiplicative mask `c` on a parameter `w`
//! (evaluated at `c = 1`) is `(dL/dw) * w`, so no mask variables are needed on
//! the tape. A neuron's parameter group is its filter (all input channels and
//! kernel taps) plus its bias.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{RanpError, Result};
use crate::exec::{forward, ForwardOptions};
use crate::harness::data::Batch;
use crate::harness::loss::{taped_loss, LossConfig};
use crate::netgraph::{NetSpec, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceMode {
    /// Aggregate magnitudes of parameter mask gradients.
    Mpmg,
    /// Magnitude of the aggregated signed parameter mask gradients, which
    /// equals the neuron mask gradient for homogeneous activations.
    Mnmg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Sum,
    Mean,
    Max,
}

impl Aggregator {
    pub fn apply(self, values: impl Iterator<Item = f64>) -> f64 {
        match self {
            Aggregator::Sum => values.sum(),
            Aggregator::Mean => {
                let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                if n == 0 {
                    0.0
                } else {
                    s / n as f64
                }
            }
            Aggregator::Max => values.fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Raw,
    Weighted,
    Reweighted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerScores {
    /// Index of the layer in the spec.
    pub layer: usize,
    pub id: String,
    pub scores: Vec<f64>,
}

impl LayerScores {
    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

/// Per-neuron scores of every conv/linear layer, in declared order.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceMap {
    pub stage: Stage,
    pub layers: Vec<LayerScores>,
}

#[derive(Serialize, Deserialize)]
struct ImportanceDump {
    stage: Stage,
    layers: BTreeMap<String, Vec<f64>>,
}

impl ImportanceMap {
    pub fn get(&self, id: &str) -> Option<&LayerScores> {
        self.layers.iter().find(|l| l.id == id)
    }

    /// `{"stage": ..., "layers": {"layer_id": [s_1, ...], ...}}`
    pub fn to_json(&self) -> String {
        let dump = ImportanceDump {
            stage: self.stage,
            layers: self.layers.iter().map(|l| (l.id.clone(), l.scores.clone())).collect(),
        };
        serde_json::to_string_pretty(&dump).expect("scores serialize")
    }

    pub fn from_json(spec: &NetSpec, doc: &str) -> Result<Self> {
        let dump: ImportanceDump = serde_json::from_str(doc)?;
        let mut layers = Vec::new();
        for li in spec.compute_layers() {
            let l = &spec.layers[li];
            let scores = dump.layers.get(&l.id).ok_or_else(|| RanpError::Layer {
                layer: l.id.clone(),
                detail: "missing from importance dump".into(),
            })?;
            if scores.len() != l.out_channels {
                return Err(RanpError::Layer {
                    layer: l.id.clone(),
                    detail: format!("{} scores for {} neurons", scores.len(), l.out_channels),
                });
            }
            layers.push(LayerScores { layer: li, id: l.id.clone(), scores: scores.clone() });
        }
        if let Some(id) = dump.layers.keys().find(|id| spec.layer_index(id).is_none()) {
            return Err(RanpError::UnknownLayer(id.clone()));
        }
        Ok(ImportanceMap { stage: dump.stage, layers })
    }

    /// Long-format CSV rows `stage,layer,neuron,score` for plotting.
    pub fn csv_rows(&self) -> impl Iterator<Item = (Stage, &str, usize, f64)> + '_ {
        self.layers.iter().flat_map(move |l| {
            l.scores.iter().enumerate().map(move |(u, &s)| (self.stage, l.id.as_str(), u, s))
        })
    }
}

/// Weight-shaped mask gradients of one conv/linear layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub layer: usize,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

/// `(dL/dw) * w` (and likewise for biases) for every compute layer on one batch.
pub fn mask_gradients(
    spec: &NetSpec,
    params: &ParamSet,
    batch: &Batch,
    loss_cfg: &LossConfig,
) -> Result<Vec<LayerGrads>> {
    let mut fwd = forward(spec, params, &batch.inputs, ForwardOptions::default())?;
    let loss = taped_loss(&mut fwd.tape, fwd.logits, &batch.targets, loss_cfg)?;
    fwd.tape.backward(loss)?;
    let tape = &fwd.tape;
    let product = |v, p: &Tensor| -> Result<Tensor> {
        match tape.grad(v) {
            Some(g) => g.zip_map(p, |g, w| g * w),
            None => Ok(Tensor::zeros(p.shape())),
        }
    };
    params
        .layers
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let weight = product(fwd.weights[i], &p.weight)?;
            let bias = match (&p.bias, fwd.biases[i]) {
                (Some(b), Some(v)) => Some(product(v, b)?),
                _ => None,
            };
            Ok(LayerGrads { layer: p.layer, weight, bias })
        })
        .collect()
}

/// Running sum of per-batch mask gradients (`|g|` for MPMG, `g` for MNMG).
#[derive(Clone, Debug)]
pub struct GradAccumulator {
    pub mode: ImportanceMode,
    pub layers: Vec<LayerGrads>,
    pub batch_count: usize,
}

impl GradAccumulator {
    pub fn new(spec: &NetSpec, mode: ImportanceMode) -> Self {
        let layers = spec
            .compute_layers()
            .into_iter()
            .map(|li| {
                let l = &spec.layers[li];
                LayerGrads {
                    layer: li,
                    weight: Tensor::zeros(&l.weight_shape()),
                    bias: l.bias.then(|| Tensor::zeros(&[l.out_channels])),
                }
            })
            .collect();
        GradAccumulator { mode, layers, batch_count: 0 }
    }

    pub fn accumulate(&mut self, grads: &[LayerGrads]) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(RanpError::Shape {
                op: "accumulate",
                detail: format!("{} gradient groups for {} layers", grads.len(), self.layers.len()),
            });
        }
        let magnitude = self.mode == ImportanceMode::Mpmg;
        let add = |acc: &mut Tensor, g: &Tensor| -> Result<()> {
            acc.expect_same_shape(g, "accumulate")?;
            for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += if magnitude { v.abs() } else { v };
            }
            Ok(())
        };
        for (acc, g) in self.layers.iter_mut().zip(grads) {
            add(&mut acc.weight, &g.weight)?;
            match (&mut acc.bias, &g.bias) {
                (Some(a), Some(b)) => add(a, b)?,
                (None, None) => {}
                _ => {
                    return Err(RanpError::Shape { op: "accumulate", detail: "bias presence differs".into() })
                }
            }
        }
        self.batch_count += 1;
        Ok(())
    }
}

/// Averages the accumulator over batches and aggregates each neuron's group.
pub fn vanilla_importance(spec: &NetSpec, acc: &GradAccumulator, agg: Aggregator) -> Result<ImportanceMap> {
    if acc.batch_count == 0 {
        return Err(RanpError::Contract("importance needs at least one accumulated batch".into()));
    }
    let scale = 1.0 / acc.batch_count as f64;
    let layers = acc
        .layers
        .iter()
        .map(|g| {
            let n = g.weight.shape()[0];
            let per = g.weight.len() / n;
            let scores = (0..n)
                .map(|u| {
                    let group = g.weight.data()[u * per..(u + 1) * per]
                        .iter()
                        .chain(g.bias.iter().map(|b| &b.data()[u]))
                        .map(|v| v * scale);
                    let s = agg.apply(group);
                    match acc.mode {
                        ImportanceMode::Mpmg => s,
                        ImportanceMode::Mnmg => s.abs(),
                    }
                })
                .collect();
            LayerScores { layer: g.layer, id: spec.layers[g.layer].id.clone(), scores }
        })
        .collect();
    Ok(ImportanceMap { stage: Stage::Raw, layers })
}

/// Raw importance accumulated over `batches`.
pub fn compute_importance(
    spec: &NetSpec,
    params: &ParamSet,
    batches: &[Batch],
    loss_cfg: &LossConfig,
    mode: ImportanceMode,
    agg: Aggregator,
) -> Result<ImportanceMap> {
    let mut acc = GradAccumulator::new(spec, mode);
    for batch in batches {
        acc.accumulate(&mask_gradients(spec, params, batch, loss_cfg)?)?;
    }
    vanilla_importance(spec, &acc, agg)
}
