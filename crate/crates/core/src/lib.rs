//! Resource-aware neuron pruning at initialization for 3D CNNs.
//!
//! Neurons (output channels) are scored by the loss gradient of a mask on
//! their parameters at initialization, the scores are balanced across layers
//! and boosted for computationally cheap layers, and the top fraction is kept.
//! The resulting masks are materialized into a slim network.

pub mod autodiff;
pub mod error;
pub mod exec;
pub mod harness;
pub mod importance;
pub mod masks;
pub mod netgraph;
pub mod pipeline;
pub mod refine;
pub mod resources;
pub mod reweight;
pub mod tensor;

pub use autodiff::{ConvParams, Tape, Var};
pub use error::{RanpError, Result};
pub use importance::{Aggregator, ImportanceMap, ImportanceMode, Stage};
pub use masks::{MaskSet, SearchConfig, SearchOutcome};
pub use netgraph::{DependencyMap, InitScheme, NetSpec, ParamSet};
pub use pipeline::{PruneConfig, PruneMode, Pruner};
pub use refine::SlimBuild;
pub use resources::{ResourceKind, ResourceProfile};
pub use tensor::Tensor;
