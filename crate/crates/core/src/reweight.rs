//! Layer balancing and resource-aware reweighting of neuron importance.

use serde::{Deserialize, Serialize};

use crate::error::{RanpError, Result};
use crate::importance::{ImportanceMap, Stage};
use crate::resources::{ResourceKind, ResourceProfile, TauNormalization};

/// Default resource coefficient.
pub const DEFAULT_LAMBDA: f64 = 11.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReweightConfig {
    pub lambda: f64,
    /// `None` leaves weighted scores unchanged.
    pub resource: Option<ResourceKind>,
    pub normalization: TauNormalization,
}

impl Default for ReweightConfig {
    fn default() -> Self {
        ReweightConfig {
            lambda: DEFAULT_LAMBDA,
            resource: Some(ResourceKind::Flops),
            normalization: TauNormalization::Max,
        }
    }
}

/// Scales every layer so its mean score equals the largest layer mean.
/// Layers with zero mean keep factor 1.
pub fn weight_layers(imp: &ImportanceMap) -> Result<ImportanceMap> {
    if imp.layers.iter().any(|l| l.scores.is_empty()) {
        return Err(RanpError::Contract("every scored layer needs at least one neuron".into()));
    }
    let means: Vec<f64> = imp.layers.iter().map(|l| l.mean()).collect();
    let top = means.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return Err(RanpError::Contract("no layer has a positive mean importance".into()));
    }
    let mut out = imp.clone();
    out.stage = Stage::Weighted;
    for (l, &mean) in out.layers.iter_mut().zip(&means) {
        if mean > 0.0 {
            let f = top / mean;
            l.scores.iter_mut().for_each(|s| *s *= f);
        } else {
            log::warn!("layer `{}` has zero mean importance; leaving it unscaled", l.id);
        }
    }
    Ok(out)
}

/// `1 + λ softmax(-τ)_l` per scored layer, τ normalized per `cfg`.
pub fn reweight_factors(imp: &ImportanceMap, profile: &ResourceProfile, cfg: &ReweightConfig) -> Result<Vec<f64>> {
    let Some(kind) = cfg.resource else { return Ok(vec![1.0; imp.layers.len()]) };
    if cfg.lambda < 0.0 {
        return Err(RanpError::Config(format!("lambda must be non-negative, got {}", cfg.lambda)));
    }
    let tau = profile.normalized_tau(kind, cfg.normalization);
    let lookup = |id: &str| tau.iter().find(|t| t.0 == id).map(|t| t.1);
    let exps = imp
        .layers
        .iter()
        .map(|l| lookup(&l.id).map(|t| (-t).exp()).ok_or_else(|| RanpError::UnknownLayer(l.id.clone())))
        .collect::<Result<Vec<f64>>>()?;
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| 1.0 + cfg.lambda * e / z).collect())
}

pub fn reweight_resources(
    imp: &ImportanceMap,
    profile: &ResourceProfile,
    cfg: &ReweightConfig,
) -> Result<ImportanceMap> {
    let factors = reweight_factors(imp, profile, cfg)?;
    let mut out = imp.clone();
    out.stage = Stage::Reweighted;
    if cfg.resource.is_none() {
        return Ok(out);
    }
    for (l, f) in out.layers.iter_mut().zip(factors) {
        l.scores.iter_mut().for_each(|s| *s *= f);
    }
    Ok(out)
}
