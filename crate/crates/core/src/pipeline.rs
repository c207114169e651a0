//! End-to-end pruning: raw importance, layer balancing, resource reweighting,
//! mask selection and the feasibility search, for every pruning mode.

use serde::{Deserialize, Serialize};

use crate::error::{RanpError, Result};
use crate::harness::data::Batch;
use crate::harness::loss::LossConfig;
use crate::importance::{compute_importance, Aggregator, ImportanceMap, ImportanceMode};
use crate::masks::{layerwise_masks, random_masks, search_max_sparsity, select_topk, MaskSet, SearchConfig, SearchOutcome};
use crate::netgraph::{NetSpec, ParamSet};
use crate::resources::{profile, ResourceKind, ResourceProfile, TauNormalization};
use crate::reweight::{reweight_resources, weight_layers, ReweightConfig, DEFAULT_LAMBDA};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneMode {
    Vanilla,
    Weighted,
    RanpF,
    RanpM,
    Random,
    Layerwise,
}

impl PruneMode {
    pub const ALL: [PruneMode; 6] = [
        PruneMode::Vanilla,
        PruneMode::Weighted,
        PruneMode::RanpF,
        PruneMode::RanpM,
        PruneMode::Random,
        PruneMode::Layerwise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PruneMode::Vanilla => "vanilla",
            PruneMode::Weighted => "weighted",
            PruneMode::RanpF => "ranp-f",
            PruneMode::RanpM => "ranp-m",
            PruneMode::Random => "random",
            PruneMode::Layerwise => "layerwise",
        }
    }

    fn resource(self) -> Option<ResourceKind> {
        match self {
            PruneMode::RanpF => Some(ResourceKind::Flops),
            PruneMode::RanpM => Some(ResourceKind::Memory),
            _ => None,
        }
    }
}

impl std::str::FromStr for PruneMode {
    type Err = RanpError;
    fn from_str(s: &str) -> Result<Self> {
        PruneMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| RanpError::Config(format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub mode: PruneMode,
    pub lambda: f64,
    pub importance: ImportanceMode,
    pub aggregator: Aggregator,
    pub normalization: TauNormalization,
    /// Seeds random masks.
    pub seed: u64,
}

impl PruneConfig {
    pub fn new(mode: PruneMode) -> Self {
        PruneConfig {
            mode,
            lambda: DEFAULT_LAMBDA,
            importance: ImportanceMode::Mpmg,
            aggregator: Aggregator::Sum,
            normalization: TauNormalization::Max,
            seed: 0,
        }
    }
}

/// Cached scores of one network; masks at any sparsity are derived from
/// these without recomputing gradients.
#[derive(Clone, Debug)]
pub struct Pruner {
    pub spec: NetSpec,
    pub cfg: PruneConfig,
    pub profile: ResourceProfile,
    pub raw: ImportanceMap,
    pub weighted: ImportanceMap,
    pub reweighted: ImportanceMap,
    protected: Vec<usize>,
}

impl Pruner {
    pub fn new(
        spec: &NetSpec,
        params: &ParamSet,
        batches: &[Batch],
        loss: &LossConfig,
        cfg: PruneConfig,
    ) -> Result<Self> {
        let raw = compute_importance(spec, params, batches, loss, cfg.importance, cfg.aggregator)?;
        Self::from_raw(spec, raw, cfg)
    }

    pub fn from_raw(spec: &NetSpec, raw: ImportanceMap, cfg: PruneConfig) -> Result<Self> {
        let profile = profile(spec, None)?;
        let weighted = weight_layers(&raw)?;
        let rw = ReweightConfig { lambda: cfg.lambda, resource: cfg.mode.resource(), normalization: cfg.normalization };
        let reweighted = reweight_resources(&weighted, &profile, &rw)?;
        let protected = spec.compute_layers().into_iter().filter(|&i| spec.layers[i].protected).collect();
        Ok(Pruner { spec: spec.clone(), cfg, profile, raw, weighted, reweighted, protected })
    }

    /// Scores the mode ranks neurons by.
    pub fn selection_scores(&self) -> &ImportanceMap {
        match self.cfg.mode {
            PruneMode::Vanilla | PruneMode::Random | PruneMode::Layerwise => &self.raw,
            PruneMode::Weighted => &self.weighted,
            PruneMode::RanpF | PruneMode::RanpM => &self.reweighted,
        }
    }

    pub fn masks_at(&self, kappa: f64) -> Result<MaskSet> {
        match self.cfg.mode {
            PruneMode::Random => random_masks(&self.spec, kappa, self.cfg.seed),
            PruneMode::Layerwise => layerwise_masks(&self.raw, kappa, &self.protected),
            _ => select_topk(self.selection_scores(), kappa, &self.protected),
        }
    }

    pub fn search(&self, cfg: SearchConfig) -> Result<SearchOutcome> {
        search_max_sparsity(|k| Ok(self.masks_at(k)?.is_feasible()), cfg)
    }
}
