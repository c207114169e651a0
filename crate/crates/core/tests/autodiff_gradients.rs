mod common;

use common::*;
use rand::Rng;
use ranp::{ConvParams, Tape, Tensor};

#[test]
fn every_operator_matches_finite_differences() {
    let checks = gradcheck_suite(2024);
    assert!(checks.len() >= 100, "only {} configurations", checks.len());
    let bad: Vec<_> = checks.iter().filter(|c| c.rel_err.is_nan() || c.rel_err >= 1e-4).collect();
    assert!(bad.is_empty(), "{bad:#?}");
    let ops: std::collections::BTreeSet<_> = checks.iter().map(|c| c.op).collect();
    assert_eq!(ops.len(), 14);
}

#[test]
fn conv_matches_direct_loops() {
    let mut r = rng(3);
    let x = uniform(&mut r, &[1, 2, 3, 3, 3], -1.0, 1.0);
    let w = uniform(&mut r, &[2, 2, 3, 3, 3], -1.0, 1.0);
    let mut t = Tape::new();
    let (xv, wv) = (t.leaf(x.clone()), t.leaf(w.clone()));
    let y = t.conv3d(xv, wv, None, ConvParams::default()).unwrap();
    let oracle = naive_conv3d(&x, &w, None, 1, 0);
    assert_eq!(t.value(y).shape(), oracle.shape());
    assert!(t.value(y).max_abs_diff(&oracle) < 1e-14);

    for _ in 0..40 {
        let (ci, co) = (r.random_range(1..=3), r.random_range(1..=3));
        let k = [0, 1, 2].map(|_| r.random_range(1..=3usize));
        let (stride, pad) = (r.random_range(1..=3), r.random_range(0..=2));
        let s = [0, 1, 2].map(|a| r.random_range(k[a]..=6));
        let x = uniform(&mut r, &[2, ci, s[0], s[1], s[2]], -1.0, 1.0);
        let w = uniform(&mut r, &[co, ci, k[0], k[1], k[2]], -1.0, 1.0);
        let b = uniform(&mut r, &[co], -1.0, 1.0);
        let mut t = Tape::new();
        let (xv, wv, bv) = (t.leaf(x.clone()), t.leaf(w.clone()), t.leaf(b.clone()));
        let y = t.conv3d(xv, wv, Some(bv), ConvParams { stride, padding: pad }).unwrap();
        let oracle = naive_conv3d(&x, &w, Some(&b), stride, pad);
        assert!(t.value(y).max_abs_diff(&oracle) < 1e-12);
    }
}

#[test]
fn relu_gradient_example() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
    let y = t.relu(x);
    t.backward_with(y, Tensor::new(vec![2], vec![0.7, 0.3]).unwrap()).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[0.0, 0.3]);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut r = rng(9);
    let x = uniform(&mut r, &[3, 5, 4], -10.0, 10.0);
    let mut t = Tape::new();
    let v = t.leaf(x);
    let s = t.softmax(v, 1).unwrap();
    let d = t.value(s).data();
    for o in 0..3 {
        for i in 0..4 {
            let z: f64 = (0..5).map(|k| d[(o * 5 + k) * 4 + i]).sum();
            assert!((z - 1.0).abs() < 1e-12);
        }
    }
}

/// conv -> relu -> linear with every parameter checked at h = 1e-5.
#[test]
fn two_layer_net_parameter_gradients() {
    let mut r = rng(17);
    let x = uniform(&mut r, &[2, 2, 3, 3, 3], -1.0, 1.0);
    let params = vec![
        uniform(&mut r, &[3, 2, 3, 3, 3], -0.5, 0.5),
        uniform(&mut r, &[3], -0.5, 0.5),
        uniform(&mut r, &[4, 3], -0.5, 0.5),
        uniform(&mut r, &[4], -0.5, 0.5),
    ];
    let targets = [1usize, 3];
    let run = |p: &[Tensor], t: &mut Tape| {
        let xv = t.leaf(x.clone());
        let vs: Vec<_> = p.iter().map(|q| t.leaf(q.clone())).collect();
        let h = t.conv3d(xv, vs[0], Some(vs[1]), ConvParams::default()).unwrap();
        let h = t.relu(h);
        let h = t.reshape(h, &[2, 3]).unwrap();
        let y = t.linear(h, vs[2], Some(vs[3])).unwrap();
        (t.softmax_cross_entropy(y, &targets).unwrap(), vs)
    };
    let mut t = Tape::new();
    let (loss, vs) = run(&params, &mut t);
    t.backward(loss).unwrap();
    let h = 1e-5;
    for (i, p) in params.iter().enumerate() {
        let analytic = t.grad(vs[i]).unwrap().data().to_vec();
        let numeric: Vec<f64> = (0..p.len())
            .map(|j| {
                let eval = |delta: f64| {
                    let mut q = params.clone();
                    q[i].data_mut()[j] += delta;
                    let mut t = Tape::new();
                    let (l, _) = run(&q, &mut t);
                    t.value(l).item()
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            })
            .collect();
        assert!(rel_err(&analytic, &numeric) < 1e-4, "param {i}");
    }
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let spec = ranp::netgraph::bundled_spec("mini-unet3d").unwrap();
    let mut r = rng(4);
    let params = random_params(&mut r, &spec);
    let batch = random_batch(&mut r, &spec, 1);
    let loss = ranp::harness::loss::LossConfig::default();
    let a = ranp::importance::mask_gradients(&spec, &params, &batch, &loss).unwrap();
    let b = ranp::importance::mask_gradients(&spec, &params, &batch, &loss).unwrap();
    assert_eq!(a, b);
}
