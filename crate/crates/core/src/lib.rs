//! Simulation and analysis of cancel-on-completion redundancy-d scheduling
//! with heavy-tailed (two-point) service slowdowns.
//!
//! The simulation core is generic over the workload scalar: `f64` for
//! ordinary runs, `f32` for cheap sweeps, and the exact [`Fixed`] type for
//! runs where ordering comparisons must not be perturbed by rounding.

pub mod auxiliary;
pub mod bounds;
pub mod config;
pub mod error;
pub mod experiments;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod stochastics;

pub use auxiliary::{run_auxiliary, run_coupled, AuxState, CoupledOptions, CoupledRun, CoupledTrace, TraceRecord};
pub use bounds::{
    find_k_epsilon, latency_upper_bound, mg1_expected_workload, renewal_function, sufficient_condition,
    sync_fraction_bound, waiting_time_upper_bound, BoundReport, Mg1Params,
};
pub use config::{InitialState, ScenarioConfig};
pub use error::{Error, Result, ViolationKind};
pub use scalar::{Fixed, Scalar};
pub use sim::{first_synchronization_time, run_simulation, JobOutcome, SimMetrics, WorkloadState};
pub use stochastics::{
    classify_job, generate_coupled_stream, generate_stream, job_type_probabilities, ArrivalEvent, EventStream, JobTag,
    ServiceSpec, XSpec,
};

pub type Workload = WorkloadState<f64>;
pub type Workload32 = WorkloadState<f32>;
pub type ExactWorkload = WorkloadState<Fixed>;
pub type AuxWorkload = AuxState<f64>;
pub type ExactAuxWorkload = AuxState<Fixed>;
