//! Linear-algebra types and the Lindblad master-equation integrator.

mod density;
mod evolve;
mod matrix;

pub use density::{labels, DensityMatrix, HERMITICITY_TOL, POSITIVITY_TOL, TRACE_TOL};
pub use evolve::{
    evolve, evolve_final, evolve_with, step_count, EvolveOptions, LindbladChannel, Segment,
    Trajectory, DEFAULT_DT_MAX,
};
pub use matrix::{sigma_x, tensor, tensor_vec, ComplexMatrix, C64};
