use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, TaskKind};
use super::loss::{taped_loss, LossConfig};
use super::metrics::{metrics, Metrics};
use crate::error::{RanpError, Result};
use crate::exec::{forward, predict, ForwardOptions};
use crate::netgraph::{NetSpec, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdNesterov,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub amsgrad: bool,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::SgdNesterov,
            lr,
            momentum: 0.9,
            weight_decay: 0.0,
            betas: (0.9, 0.999),
            eps: 1e-8,
            amsgrad: false,
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Adam, weight_decay: 1e-4, amsgrad: true, ..Self::sgd(lr) }
    }
}

/// Per-tensor optimizer state over a flat list of parameter buffers.
struct Optimizer {
    cfg: OptimizerConfig,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    v_max: Vec<Vec<f64>>,
}

impl Optimizer {
    fn new(cfg: OptimizerConfig, sizes: &[usize]) -> Self {
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Optimizer { cfg, step: 0, m: zeros(), v: zeros(), v_max: zeros() }
    }

    fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.step += 1;
        let c = self.cfg;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for j in 0..p.len() {
                let gj = g[j] + c.weight_decay * p[j];
                match c.kind {
                    OptimizerKind::SgdNesterov => {
                        let buf = &mut self.m[i][j];
                        *buf = c.momentum * *buf + gj;
                        p[j] -= c.lr * (gj + c.momentum * *buf);
                    }
                    OptimizerKind::Adam => {
                        let (b1, b2) = c.betas;
                        let m = &mut self.m[i][j];
                        *m = b1 * *m + (1.0 - b1) * gj;
                        let v = &mut self.v[i][j];
                        *v = b2 * *v + (1.0 - b2) * gj * gj;
                        let mut second = *v;
                        if c.amsgrad {
                            let vm = &mut self.v_max[i][j];
                            *vm = vm.max(*v);
                            second = *vm;
                        }
                        let m_hat = *m / (1.0 - b1.powi(self.step));
                        let v_hat = second / (1.0 - b2.powi(self.step));
                        p[j] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossConfig,
    /// Seeds the per-epoch sample shuffle.
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults: SGD-Nesterov, batch 2, 20 epochs; segmentation
    /// adds the dice term and uses a larger step.
    pub fn for_task(kind: TaskKind) -> Self {
        let (loss, lr) = match kind {
            TaskKind::Segmentation => (LossConfig::ce_plus_dice(0.25), 0.1),
            TaskKind::Classification => (LossConfig::default(), 0.02),
        };
        TrainConfig { optimizer: OptimizerConfig::sgd(lr), epochs: 20, batch_size: 2, loss, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Headline metric on the training batches (pre-update predictions).
    pub train_metric: f64,
    /// Headline metric on the evaluation set, when one is given.
    pub eval_metric: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub history: Vec<EpochRecord>,
}

/// Headline metric of `params` over a whole dataset.
pub fn evaluate(spec: &NetSpec, params: &ParamSet, data: &Dataset) -> Result<Metrics> {
    let (scores, targets) = predict_all(spec, params, data)?;
    Ok(metrics(&scores, &targets, data.task.kind))
}

fn predict_all(spec: &NetSpec, params: &ParamSet, data: &Dataset) -> Result<(Tensor, Vec<usize>)> {
    let mut chunks = Vec::new();
    let mut targets = Vec::new();
    let mut shape = Vec::new();
    for batch in data.batches(4).into_iter().chain(tail(data, 4)) {
        let s = predict(spec, params, &batch.inputs, None)?;
        if shape.is_empty() {
            shape = s.shape().to_vec();
            shape[0] = 0;
        }
        shape[0] += s.shape()[0];
        chunks.extend_from_slice(s.data());
        targets.extend(batch.targets);
    }
    Ok((Tensor::new(shape, chunks)?, targets))
}

fn tail(data: &Dataset, bs: usize) -> Option<super::data::Batch> {
    let full = (data.len() / bs) * bs;
    (data.len() > bs && full < data.len()).then(|| data.batch(&(full..data.len()).collect::<Vec<_>>()))
}

pub fn train(
    spec: &NetSpec,
    params: &ParamSet,
    data: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    params.validate(spec)?;
    let mut params = params.clone();
    let sizes: Vec<usize> = params
        .layers
        .iter()
        .flat_map(|p| std::iter::once(p.weight.len()).chain(p.bias.as_ref().map(Tensor::len)))
        .collect();
    let mut opt = Optimizer::new(cfg.optimizer, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut metric_sum, mut batches) = (0.0, 0.0, 0usize);
        for batch in data.batches_in_order(&order, cfg.batch_size) {
            let mut fwd = forward(spec, &params, &batch.inputs, ForwardOptions::default())?;
            let loss = taped_loss(&mut fwd.tape, fwd.logits, &batch.targets, &cfg.loss)?;
            let value = fwd.tape.value(loss).item();
            if !value.is_finite() {
                return Err(RanpError::Diverged { epoch, loss: value });
            }
            metric_sum += metrics(fwd.tape.value(fwd.logits), &batch.targets, data.task.kind).headline();
            fwd.tape.backward(loss)?;

            let grads: Vec<Vec<f64>> = fwd
                .weights
                .iter()
                .zip(&fwd.biases)
                .flat_map(|(&w, b)| std::iter::once(w).chain(*b))
                .map(|v| fwd.tape.grad(v).map_or_else(|| vec![0.0; fwd.tape.value(v).len()], |g| g.data().to_vec()))
                .collect();
            let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            let mut bufs: Vec<&mut [f64]> = params
                .layers
                .iter_mut()
                .flat_map(|p| {
                    std::iter::once(p.weight.data_mut()).chain(p.bias.as_mut().map(|b| b.data_mut()))
                })
                .collect();
            opt.update(&mut bufs, &grad_refs);
            loss_sum += value;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        let eval_metric = match eval {
            Some(e) => Some(evaluate(spec, &params, e)?.headline()),
            None => None,
        };
        log::debug!("epoch {epoch}: loss {:.5}", loss_sum / n);
        history.push(EpochRecord { epoch, loss: loss_sum / n, train_metric: metric_sum / n, eval_metric });
    }
    Ok(TrainOutcome { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::{gen_synth, SynthTask};
    use crate::netgraph::{bundled_spec, init_params, InitScheme};

    fn small_cls() -> (NetSpec, Dataset) {
        let spec = bundled_spec("mini-cls3d").unwrap().with_input_shape([1, 8, 8, 8]);
        // global pool window 4 needs 16^3; shrink it for 8^3 inputs
        let spec = spec.unwrap_or_else(|_| {
            let mut cfg = bundled_spec("mini-cls3d").unwrap().to_config();
            cfg.input_shape = [1, 8, 8, 8];
            cfg.layers.iter_mut().filter(|l| l.id == "global_pool").for_each(|l| {
                l.kernel = Some([2, 2, 2]);
                l.stride = Some(2);
            });
            NetSpec::from_config(&cfg).unwrap()
        });
        let data = gen_synth(&SynthTask::classification([8, 8, 8], 2, 8, 5));
        (spec, data)
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let (spec, data) = small_cls();
        let params = init_params(&spec, InitScheme::Glorot, 1);
        for opt in [OptimizerConfig::sgd(0.0), OptimizerConfig::adam(0.0)] {
            let cfg = TrainConfig { optimizer: opt, epochs: 2, batch_size: 4, loss: LossConfig::default(), seed: 0 };
            let out = train(&spec, &params, &data, None, &cfg).unwrap();
            assert_eq!(out.params, params);
            assert!(out.history.iter().all(|r| r.loss.is_finite()));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (spec, data) = small_cls();
        let params = init_params(&spec, InitScheme::Glorot, 1);
        let cfg = TrainConfig {
            optimizer: OptimizerConfig::adam(1e-2),
            epochs: 2,
            batch_size: 4,
            loss: LossConfig::default(),
            seed: 3,
        };
        let a = train(&spec, &params, &data, None, &cfg).unwrap();
        let b = train(&spec, &params, &data, None, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
    }
}
