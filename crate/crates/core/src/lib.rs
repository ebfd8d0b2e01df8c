//! Robust, driving-cycle-aware sizing of buried permanent magnets in a
//! synchronous machine.
//!
//! The crate is organised bottom-up:
//!
//! - [`cycle`]: driving cycles, uncertainty scenarios and vehicle dynamics.
//! - [`fem`]: parametric 2D magnetostatic finite elements on one pole.
//! - [`machine`]: dq parameters, MTPA control and cycle efficiency.
//! - [`sparsegrid`]: Clenshaw-Curtis and Smolyak collocation.
//! - [`sqp`]: a small SQP solver for inequality-constrained problems.
//! - [`robust`]: the risk-averse sizing problem and Monte Carlo validation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cycle;
pub mod fem;
pub mod machine;
pub mod quadrature;
pub mod robust;
pub mod sparsegrid;
pub mod sqp;

pub use cycle::{
    ControlPoint, CycleSample, CycleScenarioParams, DrivingCycle, OperatingPoint, VehicleParams,
};
pub use fem::{Materials, PmParams, PoleGeometry};
pub use machine::{DqParams, EfficiencyOptions};
pub use robust::{MachineModel, RobustSpec, Scenario, ScenarioKind};
pub use sparsegrid::{ParameterSpace, SparseGrid, StdEstimator};
pub use sqp::{SqpOptions, SqpResult, SqpStatus};
