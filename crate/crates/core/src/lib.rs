//! Inverse-intensity-of-visit weighting for longitudinal data with
//! informative, covariate-driven visit times.
//!
//! The pipeline: [`panel`] holds validated visit-level data on a time grid,
//! [`dgm`] simulates such data, [`intensity`] and [`treatment`] fit the
//! nuisance models, [`weights`] cumulates the monitoring-path weights and
//! [`estimator`] solves the weighted estimating equation. [`experiment`]
//! runs Monte Carlo scenarios and [`io`] reads and writes files.

pub mod dgm;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod intensity;
pub mod io;
pub mod panel;
pub mod stats;
pub mod treatment;
pub mod weights;

pub use dgm::{simulate_dataset, DgmConfig, Variant};
pub use error::Error;
pub use estimator::{bootstrap_variance, estimate_all, EstimatorKind, EstimatorResult, EstimatorSettings};
pub use experiment::{run_scenario, ReplicationSummary, ScenarioConfig};
pub use intensity::{fit_partial_likelihood, BaselineTable, IntensityFit, IntensitySpec};
pub use panel::{build_dataset, GridSpec, PanelDataset, SubjectPath};
pub use treatment::{fit_logistic, ipt_weight, TreatmentFit};
