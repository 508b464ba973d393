//! Solvers and inequality audits for a degenerate age- and space-structured
//! population model with a memory term: forward and adjoint schemes,
//! Carleman weights and audits, penalized HUM control and the Picard
//! iteration on the memory.

pub mod adjoint;
pub mod carleman;
pub mod control;
pub mod coefficients;
pub mod discretization;
pub mod error;
pub mod forward;
pub mod quadrature;
pub mod scenarios;
pub mod weights;

pub use adjoint::{
    implicit_formula_eval, solve_adjoint, solve_adjoint_with, trace_estimate_audit, AdjointProblem, Branch,
    CharacteristicCase, TraceParams, TraceReport,
};
pub use carleman::{audit, CarlemanReport, CarlemanScenario, EstimateId};
pub use coefficients::{
    check_memory_admissibility, power_law_profile, validate_profile, validate_rates, validation_mesh, ControlWindow,
    DegeneracyProfile, EndpointClass, MemoryKernel, RateSet, ValidationReport,
};
pub use control::{hum_control, memory_fixed_point, ControlProblem, ControlResult, FixedPointResult, HumOperator};
pub use discretization::{build_grid, build_grid_for, Field, Grid, StepField};
pub use error::{Error, Result};
pub use forward::{energy_audit, solve_forward, solve_forward_with, EnergyReport, ForwardProblem, SourceMode, Trajectory};
pub use quadrature::LogReal;
pub use scenarios::Scenario;
pub use weights::{Orientation, WeightConfig, WeightSet};
