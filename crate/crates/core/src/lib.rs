//! Simulation of marked spatial point processes, aggregation of binary marks
//! into privacy-protected areal forms, and recovery of individual-level
//! regression inference from each form by maximum likelihood over
//! change-of-support-transformed point-process models.

pub mod aggregate;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod integrate;
pub mod likelihood;
pub mod numeric;
pub mod optimize;
pub mod process;

pub use aggregate::{aggregate_to_type_c, degrade, AggregatedData, DataKind};
pub use error::{Error, Result};
pub use grid::{
    build_partition, sample_gp_field, CovariateField, GpConfig, Partition, Point, QuadNode,
    StudyWindow,
};
pub use integrate::{precompute_nodes, region_integrals, NodeTable, RegionIntegrals};
pub use likelihood::Scenario;
pub use optimize::{fit_scenario, nelder_mead, numeric_hessian, wald_ci, FitInputs, FitResult, NmConfig};
pub use process::{intensity_at, prob_at, simulate_bippp, ModelParams, PointPattern};
