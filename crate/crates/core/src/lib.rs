//! Deterministic simulator for multimodal decentralized federated learning
//! with feature fission and partial alignment.
//!
//! Agents own subsets of the input modalities and learn over per-modality
//! gossip subgraphs. Each modality encoder's latent is split into redundant,
//! synergistic and unique slices; only the parts two agents can both use are
//! exchanged. Three decentralized SGD baselines (modality-, task- and
//! hybrid-sharing) run on the same machinery for comparison, and a
//! partial-information-decomposition calculator checks the information
//! structure of the synthetic data.
//!
//! Module map:
//!
//! - [`numerics`]: dense f64 kernels with analytic backward passes
//! - [`pid`]: redundant / unique / synergistic information of a joint table
//! - [`synthdata`]: synthetic datasets, Dirichlet partitioning, CSV I/O
//! - [`model`]: fission encoders, heads, fusion operators, baseline models
//! - [`objectives`]: classification, contrastive and ensemble losses
//! - [`network`]: topologies, subgraphs, mixing matrices, parameter mixing
//! - [`trainer`]: rounds, evaluation, diagnostics, checkpoints, metrics
//! - [`config`] / [`sweep`]: run configuration files and parameter sweeps

pub mod config;
pub mod error;
pub mod model;
pub mod network;
pub mod numerics;
pub mod objectives;
pub mod pid;
pub mod seed;
pub mod sweep;
pub mod synthdata;
pub mod trainer;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use model::{AgentModel, Block, FusionOp, ModelConfig, ParamSet, SplitDims, Strategy};
pub use network::{MixingMatrix, Subgraph, TopologyKind};
pub use numerics::DenseMatrix;
pub use objectives::{LossBreakdown, NceOptions};
pub use pid::{JointDistribution, PidResult};
pub use synthdata::{Dataset, Sample, SyntheticSpec};
pub use trainer::{RoundMetrics, Simulation};
