//! Contrastive objectives as mutual-information estimators.
//!
//! The crate is organized bottom-up: [`ndmath`] supplies tensors, reverse-mode
//! gradients and optimizers; [`estimators`] the MI lower bounds; [`bank`] the
//! memory bank and restricted samplers; [`objectives`] the loss catalog;
//! [`data`] the synthetic datasets; [`probes`] the transfer evaluations; and
//! [`runner`] ties them together into seeded experiments.

pub mod bank;
pub mod data;
pub mod error;
pub mod estimators;
pub mod ndmath;
pub mod objectives;
pub mod probes;
pub mod runner;

pub use bank::{
    kmeans, rank_by_similarity, sample_close_neighbors, sample_negatives, AnnealSchedule, MemoryBank, NegativeKind,
    NegativeSpec, NeighborKind, NeighborSpec,
};
pub use data::{analytic_gaussian_mi, apply_view, make_spirals, Dataset, GaussianPairFamily, ViewFunction};
pub use error::{Error, Result};
pub use estimators::{estimate_infonce, estimate_vince, BatchSample, Witness, WitnessKind};
pub use ndmath::{logsumexp, Mlp, Optimizer, OptimizerConfig, OptimizerKind, ParamId, ParamSet, Tape, Tensor, Var};
pub use objectives::{ObjectiveFamily, ObjectiveSpec};
pub use probes::{knn_probe, logistic_probe, ProbeResult};
