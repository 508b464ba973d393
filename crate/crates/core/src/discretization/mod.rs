//! Grid, fields, the degenerate diffusion operator and field IO.

pub mod field;
pub mod grid;
pub mod io;
pub mod operator;

pub use field::{Field, StepField};
pub use grid::{build_grid, build_grid_for, Grid};
pub use operator::{assemble_operator, semigroup_apply, DiscreteOperator, ShiftedFactor};
