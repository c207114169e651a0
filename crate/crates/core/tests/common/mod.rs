//! Oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ranp::exec::{forward, ForwardOptions, MaskPlacement};
use ranp::harness::data::Batch;
use ranp::harness::loss::{taped_loss, LossConfig};
use ranp::importance::{mask_gradients, vanilla_importance, GradAccumulator};
use ranp::netgraph::{init_params, InitScheme, LayerKind, LayerSpec, NetSpec, ParamSet};
use ranp::{Aggregator, ConvParams, ImportanceMode, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero, so ReLU kinks sit far from any probe.
pub fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Pairwise gaps of at least 0.04, so pooling never sees a near-tie.
pub fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    let data = ranks.into_iter().map(|r| r as f64 * 0.05 - 1.0 + rng.random_range(0.0..0.01)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub config: String,
    pub rel_err: f64,
}

type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> ranp::Result<Var> + 'a;

/// Central-difference check of `sum(build(inputs) ⊙ R)` for a random `R`.
fn check(rng: &mut ChaCha8Rng, op: &'static str, config: String, inputs: Vec<Tensor>, build: &Build) -> OpCheck {
    let eval = |xs: &[Tensor]| -> Tensor {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let out = build(&mut t, &vs).expect("forward");
        t.value(out).clone()
    };
    let probe = uniform(rng, eval(&inputs).shape(), -1.0, 1.0);
    let objective = |xs: &[Tensor]| -> f64 { eval(xs).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum() };

    let mut t = Tape::new();
    let vs: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
    let out = build(&mut t, &vs).expect("forward");
    let r = t.leaf(probe.clone());
    let prod = t.mul(out, r).expect("same shape");
    let loss = t.sum(prod);
    t.backward(loss).expect("scalar");

    let h = 1e-6;
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for (i, x) in inputs.iter().enumerate() {
        match t.grad(vs[i]) {
            Some(g) => analytic.extend_from_slice(g.data()),
            None => analytic.extend(std::iter::repeat_n(0.0, x.len())),
        }
        for j in 0..x.len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= h;
            numeric.push((objective(&plus) - objective(&minus)) / (2.0 * h));
        }
    }
    OpCheck { op, config, rel_err: rel_err(&analytic, &numeric) }
}

/// Randomized finite-difference checks over every tape operator.
pub fn gradcheck_suite(seed: u64) -> Vec<OpCheck> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let rng = &mut r;

    for _ in 0..14 {
        let n = rng.random_range(1..=2);
        let (ci, co) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let stride = rng.random_range(1..=2);
        let padding = rng.random_range(0..=1);
        let k = [0, 1, 2].map(|_| rng.random_range(1..=3usize));
        let s = [0, 1, 2].map(|a| rng.random_range(k[a].max(2)..=4));
        let bias = rng.random_bool(0.5);
        let mut inputs = vec![uniform(rng, &[n, ci, s[0], s[1], s[2]], -1.0, 1.0), uniform(rng, &[co, ci, k[0], k[1], k[2]], -1.0, 1.0)];
        if bias {
            inputs.push(uniform(rng, &[co], -1.0, 1.0));
        }
        let cfg = ConvParams { stride, padding };
        let desc = format!("x[{n},{ci},{s:?}] w[{co},{ci},{k:?}] s{stride} p{padding} bias={bias}");
        out.push(check(rng, "conv3d", desc, inputs, &move |t, v| t.conv3d(v[0], v[1], v.get(2).copied(), cfg)));
    }
    for _ in 0..8 {
        let shape = [rng.random_range(1..=2), rng.random_range(1..=3), 2, 3, rng.random_range(1..=3)];
        let x = off_zero(rng, &shape);
        out.push(check(rng, "relu", format!("{shape:?}"), vec![x], &|t, v| Ok(t.relu(v[0]))));
    }
    for _ in 0..8 {
        let window = rng.random_range(1..=2);
        let stride = rng.random_range(1..=2);
        let shape = [1, rng.random_range(1..=2), rng.random_range(2..=4), rng.random_range(2..=4), 2];
        let x = distinct(rng, &shape);
        out.push(check(rng, "maxpool3d", format!("{shape:?} w{window} s{stride}"), vec![x], &move |t, v| {
            t.maxpool3d(v[0], window, stride)
        }));
    }
    for _ in 0..8 {
        let factor = rng.random_range(1..=3);
        let shape = [rng.random_range(1..=2), rng.random_range(1..=2), 2, rng.random_range(1..=2), 2];
        let x = uniform(rng, &shape, -1.0, 1.0);
        out.push(check(rng, "upsample_nearest3d", format!("{shape:?} x{factor}"), vec![x], &move |t, v| {
            t.upsample_nearest3d(v[0], factor)
        }));
    }
    for _ in 0..8 {
        let (n, ca, cb) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
        let a = uniform(rng, &[n, ca, 2, 2, 3], -1.0, 1.0);
        let b = uniform(rng, &[n, cb, 2, 2, 3], -1.0, 1.0);
        out.push(check(rng, "concat_channels", format!("n{n} {ca}+{cb}"), vec![a, b], &|t, v| {
            t.concat_channels(v[0], v[1])
        }));
    }
    for _ in 0..8 {
        let (n, din, dout) = (rng.random_range(1..=3), rng.random_range(1..=5), rng.random_range(1..=4));
        let bias = rng.random_bool(0.5);
        let mut inputs = vec![uniform(rng, &[n, din], -1.0, 1.0), uniform(rng, &[dout, din], -1.0, 1.0)];
        if bias {
            inputs.push(uniform(rng, &[dout], -1.0, 1.0));
        }
        out.push(check(rng, "linear", format!("[{n},{din}]->{dout} bias={bias}"), inputs, &|t, v| {
            t.linear(v[0], v[1], v.get(2).copied())
        }));
    }
    for _ in 0..8 {
        let shape = [rng.random_range(1..=2), rng.random_range(2..=4), rng.random_range(1..=3)];
        let axis = rng.random_range(0..shape.len());
        let x = uniform(rng, &shape, -2.0, 2.0);
        out.push(check(rng, "softmax", format!("{shape:?} axis {axis}"), vec![x], &move |t, v| t.softmax(v[0], axis)));
    }
    for (op, f) in [
        ("mul", (|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1])) as fn(&mut Tape, &[Var]) -> ranp::Result<Var>),
        ("add", |t, v| t.add(v[0], v[1])),
    ] {
        for _ in 0..7 {
            let shape = [rng.random_range(1..=3), rng.random_range(1..=4)];
            let inputs = vec![uniform(rng, &shape, -1.0, 1.0), uniform(rng, &shape, -1.0, 1.0)];
            out.push(check(rng, op, format!("{shape:?}"), inputs, &f));
        }
    }
    for _ in 0..7 {
        let shape = [rng.random_range(1..=2), rng.random_range(1..=4), 2, rng.random_range(1..=2), 1];
        let inputs = vec![uniform(rng, &shape, -1.0, 1.0), uniform(rng, &[shape[1]], -1.0, 1.0)];
        out.push(check(rng, "scale_channels", format!("{shape:?}"), inputs, &|t, v| t.scale_channels(v[0], v[1])));
    }
    for _ in 0..6 {
        let (a, b) = (rng.random_range(1..=3), rng.random_range(1..=4));
        let x = uniform(rng, &[a, b, 2], -1.0, 1.0);
        out.push(check(rng, "reshape", format!("[{a},{b},2]->[{}]", a * b * 2), vec![x], &move |t, v| {
            t.reshape(v[0], &[2 * a * b])
        }));
    }
    for _ in 0..6 {
        let shape = [rng.random_range(1..=3), rng.random_range(1..=4)];
        let x = uniform(rng, &shape, -1.0, 1.0);
        out.push(check(rng, "sum", format!("{shape:?}"), vec![x], &|t, v| Ok(t.sum(v[0]))));
    }
    for _ in 0..6 {
        let (scale, offset) = (rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0));
        let len = rng.random_range(1..=4);
        let x = uniform(rng, &[len], -1.0, 1.0);
        out.push(check(rng, "affine", format!("{scale:.3}x+{offset:.3}"), vec![x], &move |t, v| {
            Ok(t.affine(v[0], scale, offset))
        }));
    }
    for _ in 0..8 {
        let (n, c, s) = (rng.random_range(1..=2), rng.random_range(2..=4), rng.random_range(1..=3));
        let logits = uniform(rng, &[n, c, s, 1, 2], -2.0, 2.0);
        let targets: Vec<usize> = (0..n * s * 2).map(|_| rng.random_range(0..c)).collect();
        out.push(check(rng, "softmax_cross_entropy", format!("n{n} c{c} s{s}"), vec![logits], &move |t, v| {
            t.softmax_cross_entropy(v[0], &targets)
        }));
    }
    out
}

/// A random conv/ReLU network: a chain of 1-4 conv+relu blocks with optional
/// pooling, an optional skip concat, and a 1x1 conv head.
pub fn random_relu_net(rng: &mut ChaCha8Rng) -> NetSpec {
    let side = *[4usize, 6].choose(rng).unwrap();
    let cin = rng.random_range(1..=2);
    let classes = rng.random_range(2..=3);
    let blocks = rng.random_range(1..=4);
    let mut layers = Vec::new();
    let mut prev = "input".to_string();
    let mut extent = side;
    let mut skip: Option<(String, usize)> = None;
    for b in 0..blocks {
        let k = if rng.random_bool(0.7) { 3 } else { 1 };
        let out = rng.random_range(1..=4);
        let bias = rng.random_bool(0.6);
        layers.push(format!(
            r#"{{"id": "c{b}", "kind": "conv3d", "out_channels": {out}, "kernel": [{k},{k},{k}], "padding": {}, "bias": {bias}, "inputs": ["{prev}"]}}"#,
            k / 2
        ));
        layers.push(format!(r#"{{"id": "r{b}", "kind": "relu", "inputs": ["c{b}"]}}"#));
        prev = format!("r{b}");
        if let Some((s, e)) = skip.take() {
            if e == extent && rng.random_bool(0.7) {
                layers.push(format!(r#"{{"id": "cat{b}", "kind": "concat", "inputs": ["{prev}", "{s}"]}}"#));
                prev = format!("cat{b}");
            }
        }
        if extent >= 4 && rng.random_bool(0.3) {
            layers.push(format!(r#"{{"id": "p{b}", "kind": "maxpool", "kernel": [2,2,2], "inputs": ["{prev}"]}}"#));
            prev = format!("p{b}");
            extent /= 2;
        }
        skip = Some((prev.clone(), extent));
    }
    layers.push(format!(
        r#"{{"id": "head", "kind": "conv3d", "out_channels": {classes}, "kernel": [1,1,1], "bias": true, "inputs": ["{prev}"]}}"#
    ));
    layers.push(r#"{"id": "scores", "kind": "softmax-head", "inputs": ["head"]}"#.to_string());
    let doc = format!(
        r#"{{"input_shape": [{cin}, {side}, {side}, {side}], "classes": {classes}, "layers": [{}]}}"#,
        layers.join(",\n")
    );
    NetSpec::parse(&doc).unwrap_or_else(|e| panic!("{e}\n{doc}"))
}

/// Random inputs and labels matching `spec`.
pub fn random_batch(rng: &mut ChaCha8Rng, spec: &NetSpec, n: usize) -> Batch {
    let [c, d, h, w] = spec.input_shape;
    let inputs = uniform(rng, &[n, c, d, h, w], -1.0, 1.0);
    let head = &spec.layers[spec.head()];
    let positions = n * head.output_spatial();
    let targets = (0..positions).map(|_| rng.random_range(0..spec.classes)).collect();
    Batch { inputs, targets }
}

/// Params with non-zero biases, so bias groups take part in every identity.
pub fn random_params(rng: &mut ChaCha8Rng, spec: &NetSpec) -> ParamSet {
    let mut params = init_params(spec, InitScheme::Glorot, rng.random());
    for p in &mut params.layers {
        if let Some(b) = p.bias.as_mut() {
            b.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
    }
    params
}

/// Largest per-layer relative gap between MNMG-sum importance and the
/// magnitude of explicit neuron-mask gradients.
pub fn neuron_mask_gap(spec: &NetSpec, params: &ParamSet, batch: &Batch, placement: MaskPlacement) -> f64 {
    let loss = LossConfig::default();
    let mut acc = GradAccumulator::new(spec, ImportanceMode::Mnmg);
    acc.accumulate(&mask_gradients(spec, params, batch, &loss).unwrap()).unwrap();
    let mnmg = vanilla_importance(spec, &acc, Aggregator::Sum).unwrap();

    let opts = ForwardOptions { neuron_mask_leaves: Some(placement), ..Default::default() };
    let mut fwd = forward(spec, params, &batch.inputs, opts).unwrap();
    let l = taped_loss(&mut fwd.tape, fwd.logits, &batch.targets, &loss).unwrap();
    fwd.tape.backward(l).unwrap();

    let mut worst: f64 = 0.0;
    for (scores, &c) in mnmg.layers.iter().zip(&fwd.neuron_masks) {
        let explicit: Vec<f64> = match fwd.tape.grad(c) {
            Some(g) => g.data().iter().map(|v| v.abs()).collect(),
            None => vec![0.0; scores.scores.len()],
        };
        let scale = scores.scores.iter().chain(&explicit).fold(0.0f64, |m, v| m.max(v.abs()));
        let gap = scores.scores.iter().zip(&explicit).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if scale > 0.0 {
            worst = worst.max(gap / scale);
        }
    }
    worst
}

/// Largest absolute gap between `(∂L/∂w) ⊙ w` and gradients of explicit
/// all-ones parameter masks.
pub fn param_mask_gap(spec: &NetSpec, params: &ParamSet, batch: &Batch) -> f64 {
    let loss = LossConfig::default();
    let implicit = mask_gradients(spec, params, batch, &loss).unwrap();
    let opts = ForwardOptions { param_mask_leaves: true, ..Default::default() };
    let mut fwd = forward(spec, params, &batch.inputs, opts).unwrap();
    let l = taped_loss(&mut fwd.tape, fwd.logits, &batch.targets, &loss).unwrap();
    fwd.tape.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    for (i, g) in implicit.iter().enumerate() {
        let explicit = fwd.tape.grad(fwd.weight_masks[i]).unwrap();
        worst = worst.max(g.weight.max_abs_diff(explicit));
        if let (Some(gb), Some(bm)) = (&g.bias, fwd.bias_masks[i]) {
            worst = worst.max(gb.max_abs_diff(fwd.tape.grad(bm).unwrap()));
        }
    }
    worst
}

/// Direct 7-loop cross-correlation.
pub fn naive_conv3d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let [n, ci, d, h, wd] = <[usize; 5]>::try_from(x.shape()).unwrap();
    let [co, _, kd, kh, kw] = <[usize; 5]>::try_from(w.shape()).unwrap();
    let o = |e: usize, k: usize| (e + 2 * pad - k) / stride + 1;
    let (od, oh, ow) = (o(d, kd), o(h, kh), o(wd, kw));
    let xi = |b: usize, c: usize, z: usize, y: usize, xx: usize| (((b * ci + c) * d + z) * h + y) * wd + xx;
    let wi = |u: usize, c: usize, a: usize, bb: usize, cc: usize| (((u * ci + c) * kd + a) * kh + bb) * kw + cc;
    let mut out = Tensor::zeros(&[n, co, od, oh, ow]);
    let mut idx = 0;
    for bn in 0..n {
        for u in 0..co {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = b.map_or(0.0, |b| b.data()[u]);
                        for c in 0..ci {
                            for a in 0..kd {
                                for bb in 0..kh {
                                    for cc in 0..kw {
                                        let (pz, py, px) = (z * stride + a, y * stride + bb, xx * stride + cc);
                                        if pz < pad || py < pad || px < pad {
                                            continue;
                                        }
                                        let (pz, py, px) = (pz - pad, py - pad, px - pad);
                                        if pz >= d || py >= h || px >= wd {
                                            continue;
                                        }
                                        acc += x.data()[xi(bn, c, pz, py, px)] * w.data()[wi(u, c, a, bb, cc)];
                                    }
                                }
                            }
                        }
                        out.data_mut()[idx] = acc;
                        idx += 1;
                    }
                }
            }
        }
    }
    out
}

/// Counts multiplies and adds one kernel tap at a time for every output
/// element; `out` is `[C_out, D, H, W]`.
pub fn counted_flops(taps_per_channel: usize, c_in: usize, bias: bool, out: [usize; 4]) -> u128 {
    let mut ops: u128 = 0;
    for _ in 0..out.iter().product::<usize>() {
        let mut first = true;
        for _ in 0..c_in {
            for _ in 0..taps_per_channel {
                ops += 1; // multiply
                if !first {
                    ops += 1; // add into the running sum
                }
                first = false;
            }
        }
        if bias {
            ops += 1;
        }
    }
    ops
}

/// A one-conv network for cost checks; returns the conv layer together with
/// the output extents derived independently of shape inference.
pub fn random_conv_layer(rng: &mut ChaCha8Rng) -> (LayerSpec, [usize; 4]) {
    let ci = rng.random_range(1..=4);
    let co = rng.random_range(1..=4);
    let k = [0, 1, 2].map(|_| rng.random_range(1..=3usize));
    let stride = rng.random_range(1..=2);
    let padding = rng.random_range(0..=1);
    let s = [0, 1, 2].map(|a| rng.random_range(k[a].max(1)..=6));
    let bias = rng.random_bool(0.5);
    let doc = format!(
        r#"{{"input_shape": [{ci}, {}, {}, {}], "classes": {co}, "layers": [
            {{"id": "c", "kind": "conv3d", "out_channels": {co}, "kernel": [{}, {}, {}], "stride": {stride}, "padding": {padding}, "bias": {bias}, "inputs": ["input"]}},
            {{"id": "s", "kind": "softmax-head", "inputs": ["c"]}}]}}"#,
        s[0], s[1], s[2], k[0], k[1], k[2]
    );
    let spec = NetSpec::parse(&doc).unwrap();
    let o = |a: usize| (s[a] + 2 * padding - k[a]) / stride + 1;
    let layer = spec.layers[0].clone();
    assert_eq!(layer.kind, LayerKind::Conv3d);
    (layer, [co, o(0), o(1), o(2)])
}

pub fn random_linear_layer(rng: &mut ChaCha8Rng) -> LayerSpec {
    let (din, dout) = (rng.random_range(1..=64), rng.random_range(1..=16));
    let bias = rng.random_bool(0.5);
    let doc = format!(
        r#"{{"input_shape": [{din}, 1, 1, 1], "classes": {dout}, "layers": [
            {{"id": "fc", "kind": "linear", "out_channels": {dout}, "bias": {bias}, "inputs": ["input"]}},
            {{"id": "s", "kind": "softmax-head", "inputs": ["fc"]}}]}}"#
    );
    NetSpec::parse(&doc).unwrap().layers[0].clone()
}

/// Redraws random masks until every layer keeps a neuron.
pub fn random_feasible_masks(rng: &mut ChaCha8Rng, spec: &NetSpec) -> ranp::MaskSet {
    loop {
        let kappa = rng.random_range(0.0..0.8);
        let m = ranp::masks::random_masks(spec, kappa, rng.random()).unwrap();
        if m.is_feasible() {
            return m;
        }
    }
}

/// Importance map over `widths.len()` layers with the given flat scores.
pub fn score_map(widths: &[usize], flat: &[f64]) -> ranp::ImportanceMap {
    let mut off = 0;
    let layers = widths
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let scores = flat[off..off + w].to_vec();
            off += w;
            ranp::importance::LayerScores { layer: i, id: format!("l{i}"), scores }
        })
        .collect();
    ranp::ImportanceMap { stage: ranp::Stage::Reweighted, layers }
}

/// Repeated selection of the best remaining neuron under (score desc,
/// layer asc, index asc); no sorting routine involved.
pub fn brute_force_keep(imp: &ranp::ImportanceMap, r: usize) -> Vec<Vec<bool>> {
    let mut keep: Vec<Vec<bool>> = imp.layers.iter().map(|l| vec![false; l.scores.len()]).collect();
    for _ in 0..r {
        let mut best: Option<(usize, usize)> = None;
        for (p, l) in imp.layers.iter().enumerate() {
            for (u, &s) in l.scores.iter().enumerate() {
                if keep[p][u] {
                    continue;
                }
                if best.is_none_or(|(bp, bu)| s > imp.layers[bp].scores[bu]) {
                    best = Some((p, u));
                }
            }
        }
        let (p, u) = best.expect("r <= n");
        keep[p][u] = true;
    }
    keep
}

/// Checks every subset of size `r`: the chosen one must be the only subset
/// whose members all precede every non-member in the total order.
pub fn unique_dominant_subset(imp: &ranp::ImportanceMap, chosen: &[Vec<bool>]) -> bool {
    let flat: Vec<(f64, usize, usize)> = imp
        .layers
        .iter()
        .enumerate()
        .flat_map(|(p, l)| l.scores.iter().enumerate().map(move |(u, &s)| (s, p, u)))
        .collect();
    let before = |a: &(f64, usize, usize), b: &(f64, usize, usize)| a.0 > b.0 || (a.0 == b.0 && (a.1, a.2) < (b.1, b.2));
    let n = flat.len();
    let r = chosen.iter().flatten().filter(|&&k| k).count();
    let mut dominant = Vec::new();
    for bits in 0u32..(1 << n) {
        if bits.count_ones() as usize != r {
            continue;
        }
        let inside = |i: usize| bits >> i & 1 == 1;
        let ok = (0..n).all(|i| !inside(i) || (0..n).all(|j| inside(j) || before(&flat[i], &flat[j])));
        if ok {
            dominant.push(bits);
        }
    }
    let chosen_bits = flat.iter().enumerate().fold(0u32, |acc, (i, &(_, p, u))| acc | (u32::from(chosen[p][u]) << i));
    dominant == vec![chosen_bits]
}

/// Last feasible point of a grid scan with step `step`.
pub fn linear_scan(feasible: &mut dyn FnMut(f64) -> bool, lo: f64, hi: f64, step: f64) -> f64 {
    let mut best = lo;
    let mut k = lo;
    while k < hi {
        if feasible(k) {
            best = k;
        } else {
            break;
        }
        k += step;
    }
    best
}
