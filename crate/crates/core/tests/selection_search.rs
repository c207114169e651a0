mod common;

use common::*;
use rand::Rng;
use ranp::masks::{retain_count, search_max_sparsity, select_topk};
use ranp::SearchConfig;

fn split(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut widths = Vec::new();
    let mut left = n;
    while left > 0 {
        let w = r.random_range(1..=left);
        widths.push(w);
        left -= w;
    }
    widths
}

#[test]
fn topk_is_exact_for_small_pools() {
    let mut r = rng(41);
    for n in 1..=10 {
        for _ in 0..6 {
            let widths = split(&mut r, n);
            // few distinct values, so ties are common
            let flat: Vec<f64> = (0..n).map(|_| r.random_range(0..4) as f64 * 0.25).collect();
            let imp = score_map(&widths, &flat);
            for j in 0..n {
                for kappa in [j as f64 / n as f64, (j as f64 + 0.5) / n as f64] {
                    let m = select_topk(&imp, kappa, &[]).unwrap();
                    let keep: Vec<Vec<bool>> = m.layers.iter().map(|l| l.keep.clone()).collect();
                    let rr = retain_count(n, kappa);
                    assert_eq!(keep.iter().flatten().filter(|&&k| k).count(), rr);
                    assert_eq!(keep, brute_force_keep(&imp, rr));
                    assert!(unique_dominant_subset(&imp, &keep));
                }
            }
        }
    }
}

#[test]
fn bisection_matches_linear_scan_on_thresholds() {
    let mut r = rng(42);
    for _ in 0..25 {
        let t: f64 = r.random_range(0.0..0.999);
        let out = search_max_sparsity(|k| Ok(k <= t), SearchConfig::default()).unwrap();
        let scan = linear_scan(&mut |k| k <= t, 0.0, 1.0, 1e-5);
        assert!((out.kappa - scan).abs() <= 1e-4);
        assert!(out.iterations <= 14);
    }
    let out = search_max_sparsity(|k| Ok(k <= 0.73), SearchConfig::default()).unwrap();
    assert!((out.kappa - 0.73).abs() <= 1e-4);
    let out = search_max_sparsity(|k| Ok(k < 1.0), SearchConfig::default()).unwrap();
    assert!(1.0 - out.kappa <= 1e-4);
}

#[test]
fn bisection_matches_linear_scan_on_topk() {
    let mut r = rng(43);
    for _ in 0..10 {
        let widths: Vec<usize> = (0..r.random_range(2..=5)).map(|_| r.random_range(1..=12)).collect();
        let n: usize = widths.iter().sum();
        let flat: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let imp = score_map(&widths, &flat);
        let mut feasible = |k: f64| select_topk(&imp, k, &[]).unwrap().is_feasible();
        let out = search_max_sparsity(|k| Ok(feasible(k)), SearchConfig::default()).unwrap();
        let scan = linear_scan(&mut feasible, 0.0, 1.0, 2e-5);
        assert!((out.kappa - scan).abs() <= 1e-4, "{} vs {}", out.kappa, scan);
        assert!(feasible(out.kappa));
    }
}
