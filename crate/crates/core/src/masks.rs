//! Binary neuron masks: global top-κ selection, baseline generators and the
//! bisection search for the largest feasible sparsity.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{RanpError, Result};
use crate::importance::ImportanceMap;
use crate::netgraph::NetSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerMask {
    pub layer: usize,
    pub id: String,
    pub protected: bool,
    pub keep: Vec<bool>,
}

impl LayerMask {
    pub fn retained(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// One keep/prune flag per output channel of every conv/linear layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub layers: Vec<LayerMask>,
}

impl MaskSet {
    pub fn all_ones(spec: &NetSpec) -> Self {
        let layers = spec
            .compute_layers()
            .into_iter()
            .map(|li| {
                let l = &spec.layers[li];
                LayerMask { layer: li, id: l.id.clone(), protected: l.protected, keep: vec![true; l.out_channels] }
            })
            .collect();
        MaskSet { layers }
    }

    pub fn keep_of(&self, layer: usize) -> Option<&[bool]> {
        self.layers.iter().find(|m| m.layer == layer).map(|m| m.keep.as_slice())
    }

    pub fn get(&self, id: &str) -> Option<&LayerMask> {
        self.layers.iter().find(|m| m.id == id)
    }

    /// Ids of layers with no retained neuron.
    pub fn empty_layers(&self) -> Vec<String> {
        self.layers.iter().filter(|m| m.retained() == 0).map(|m| m.id.clone()).collect()
    }

    /// Every layer keeps at least one neuron.
    pub fn is_feasible(&self) -> bool {
        self.layers.iter().all(|m| m.retained() > 0)
    }

    pub fn ensure_feasible(&self) -> Result<()> {
        let empty = self.empty_layers();
        if empty.is_empty() {
            Ok(())
        } else {
            Err(RanpError::Infeasible(empty))
        }
    }

    /// Fraction of non-protected neurons pruned.
    pub fn sparsity_achieved(&self) -> f64 {
        let (mut total, mut pruned) = (0usize, 0usize);
        for m in self.layers.iter().filter(|m| !m.protected) {
            total += m.keep.len();
            pruned += m.keep.len() - m.retained();
        }
        if total == 0 {
            0.0
        } else {
            pruned as f64 / total as f64
        }
    }

    pub fn is_all_ones(&self) -> bool {
        self.layers.iter().all(|m| m.keep.iter().all(|&k| k))
    }

    /// `{"layer_id": [0/1, ...], ...}`
    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, Vec<u8>> =
            self.layers.iter().map(|m| (m.id.as_str(), m.keep.iter().map(|&k| k as u8).collect())).collect();
        serde_json::to_string_pretty(&map).expect("masks serialize")
    }

    pub fn from_json(spec: &NetSpec, doc: &str) -> Result<Self> {
        let map: BTreeMap<String, Vec<u8>> = serde_json::from_str(doc)?;
        let mut set = MaskSet::all_ones(spec);
        for (id, bits) in &map {
            let m = set
                .layers
                .iter_mut()
                .find(|m| &m.id == id)
                .ok_or_else(|| RanpError::UnknownLayer(id.clone()))?;
            if bits.len() != m.keep.len() || bits.iter().any(|&b| b > 1) {
                return Err(RanpError::Layer {
                    layer: id.clone(),
                    detail: format!("mask needs {} entries of 0/1, got {:?}", m.keep.len(), bits),
                });
            }
            m.keep = bits.iter().map(|&b| b == 1).collect();
        }
        if let Some(m) = set.layers.iter().find(|m| !map.contains_key(&m.id)) {
            return Err(RanpError::Layer { layer: m.id.clone(), detail: "missing from mask file".into() });
        }
        Ok(set)
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(0.0..1.0).contains(&kappa) {
        return Err(RanpError::Contract(format!("sparsity {kappa} outside [0, 1)")));
    }
    Ok(())
}

/// Number of neurons kept out of `n` at sparsity `kappa`.
pub fn retain_count(n: usize, kappa: f64) -> usize {
    n - (kappa * n as f64).floor() as usize
}

fn empty_masks(imp: &ImportanceMap, protected: &[usize]) -> MaskSet {
    let layers = imp
        .layers
        .iter()
        .map(|l| {
            let p = protected.contains(&l.layer);
            LayerMask { layer: l.layer, id: l.id.clone(), protected: p, keep: vec![p; l.scores.len()] }
        })
        .collect();
    MaskSet { layers }
}

/// Keeps the `n - floor(κ n)` highest-scoring non-protected neurons across all
/// layers. Ties go to the lower `(layer position, neuron index)`.
pub fn select_topk(imp: &ImportanceMap, kappa: f64, protected: &[usize]) -> Result<MaskSet> {
    check_kappa(kappa)?;
    let mut set = empty_masks(imp, protected);
    let mut pool: Vec<(f64, usize, usize)> = Vec::new();
    for (pos, l) in imp.layers.iter().enumerate() {
        if protected.contains(&l.layer) {
            continue;
        }
        pool.extend(l.scores.iter().enumerate().map(|(u, &s)| (s, pos, u)));
    }
    let r = retain_count(pool.len(), kappa);
    pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for &(_, pos, u) in &pool[..r] {
        set.layers[pos].keep[u] = true;
    }
    Ok(set)
}

/// Keeps `n - floor(κ n)` non-protected neurons chosen uniformly at random.
pub fn random_masks(spec: &NetSpec, kappa: f64, seed: u64) -> Result<MaskSet> {
    check_kappa(kappa)?;
    let mut set = MaskSet::all_ones(spec);
    let mut pool: Vec<(usize, usize)> = Vec::new();
    for (pos, m) in set.layers.iter_mut().enumerate() {
        if !m.protected {
            pool.extend((0..m.keep.len()).map(|u| (pos, u)));
            m.keep.iter_mut().for_each(|k| *k = false);
        }
    }
    let r = retain_count(pool.len(), kappa);
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for &(pos, u) in &pool[..r] {
        set.layers[pos].keep[u] = true;
    }
    Ok(set)
}

/// Keeps the top `N_l - floor(κ N_l)` (at least one) neurons of every layer.
pub fn layerwise_masks(imp: &ImportanceMap, kappa: f64, protected: &[usize]) -> Result<MaskSet> {
    check_kappa(kappa)?;
    let mut set = empty_masks(imp, protected);
    for (pos, l) in imp.layers.iter().enumerate() {
        if protected.contains(&l.layer) {
            continue;
        }
        let r = retain_count(l.scores.len(), kappa).max(1);
        let mut order: Vec<usize> = (0..l.scores.len()).collect();
        order.sort_by(|&a, &b| l.scores[b].total_cmp(&l.scores[a]).then(a.cmp(&b)));
        for &u in &order[..r] {
            set.layers[pos].keep[u] = true;
        }
    }
    Ok(set)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub delta: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { kappa_min: 0.0, kappa_max: 1.0, delta: 1e-4 }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.kappa_min)
            && (0.0..=1.0).contains(&self.kappa_max)
            && self.kappa_min < self.kappa_max
            && self.delta > 0.0;
        if ok {
            Ok(())
        } else {
            Err(RanpError::Config(format!("invalid search config {self:?}")))
        }
    }

    pub fn max_iterations(&self) -> usize {
        ((self.kappa_max - self.kappa_min) / self.delta).log2().ceil().max(0.0) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchOutcome {
    pub kappa: f64,
    pub iterations: usize,
}

/// Bisection for the largest sparsity at which `feasible` holds, assuming
/// feasibility is monotone non-increasing in κ. Returns the last feasible
/// midpoint (or `kappa_min` if no midpoint was feasible).
pub fn search_max_sparsity(
    mut feasible: impl FnMut(f64) -> Result<bool>,
    cfg: SearchConfig,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    if !feasible(cfg.kappa_min)? {
        return Err(RanpError::Contract(format!("infeasible already at kappa_min = {}", cfg.kappa_min)));
    }
    let (mut lo, mut hi) = (cfg.kappa_min, cfg.kappa_max);
    let mut iterations = 0;
    while hi - lo > cfg.delta {
        let mid = 0.5 * (lo + hi);
        iterations += 1;
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(SearchOutcome { kappa: lo, iterations })
}

/// Feasibility of top-κ selection on fixed scores.
pub fn topk_feasible<'a>(imp: &'a ImportanceMap, protected: &'a [usize]) -> impl FnMut(f64) -> Result<bool> + 'a {
    move |kappa| Ok(select_topk(imp, kappa, protected)?.is_feasible())
}
