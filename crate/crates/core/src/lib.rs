//! Active viewpoint selection for locating a static target with a
//! monocular range sensor.
//!
//! The pipeline alternates two steps. The viewpoint search picks the next
//! camera position that minimizes the fused observation covariance subject
//! to workspace and safety restrictions; a range-only extended Kalman filter
//! then refines the target estimate from a reading taken there.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod belief;
pub mod constraints;
pub mod ekf;
pub mod error;
pub mod geometry;
pub mod objective;
pub mod optimizer;
pub mod simulation;

pub use belief::{fuse, fuse_chain, rotate_covariance, Covariance3, GaussianBelief};
pub use constraints::{
    build_for_experiment, is_feasible, ConstraintParams, ConstraintSet, ExperimentId, FovSign,
};
pub use ekf::{EkfState, ProcessNoise, RangeMeasurementModel};
pub use error::{BveError, Result};
pub use geometry::{look_at_rotation, unit, PerpMode, RotationMatrix, Vec3};
pub use objective::{LossKind, Objective, SigmoidParams};
pub use optimizer::{
    grid_oracle, solve_next_viewpoint, SolverOutcome, SolverSettings, SolverStatus,
};
pub use simulation::{
    recoverability_sweep, run_experiment, run_single, MetricsReport, RunRecord, ScenarioConfig,
};
