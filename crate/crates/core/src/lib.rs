//! Control-aware model refinement: identification by prediction error,
//! residual disturbance scenarios, scenario-optimal control with implicit
//! derivatives, and projected gradient descent on a control-aware surrogate.
//!
//! Everything is generic over [`Real`] (`f32` or `f64`); the aliases below fix
//! the scalar to `f64`.

pub mod cost;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod identification;
pub mod io;
pub mod linalg;
pub mod scalar;
pub mod scenario;
pub mod surrogate;

pub use error::{Result, SpcError};
pub use scalar::Real;

pub type Mat = linalg::Mat<f64>;
pub type ParamBox = dynamics::ParamBox<f64>;
pub type Disturbances = dynamics::Disturbances<f64>;
pub type Trajectory = dynamics::Trajectory<f64>;
pub type SharedModel = dynamics::SharedModel<f64>;
pub type CostMatrices = cost::CostMatrices<f64>;
pub type Scenario = scenario::Scenario<f64>;
pub type ScenarioSet = scenario::ScenarioSet<f64>;
pub type SolveReport = scenario::SolveReport<f64>;
pub type RecordedTrajectory = identification::RecordedTrajectory<f64>;
pub type Dataset = identification::Dataset<f64>;
pub type DeploymentSet = diagnostics::DeploymentSet<f64>;
