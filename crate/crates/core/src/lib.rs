//! Simulation and analysis toolkit for single- and two-atom Rydberg qubit
//! experiments.
//!
//! The crate is layered bottom-up:
//!
//! * [`dynamics`]: dense complex matrices, density matrices and a fixed-step
//!   RK4 Lindblad integrator for piecewise-constant Hamiltonians.
//! * [`atom`]: physical parameters, derived scalar quantities and the
//!   state-detection model.
//! * [`pulse`]: declarative pulse sequences, the figure presets and the
//!   compiler that turns a sequence into Hamiltonian segments and jump
//!   operators.
//! * [`blockade`]: the analytic two-atom layer (W/D states, gate unitaries,
//!   Bell fidelity, parity-scan analysis).
//! * [`noise`]: Monte Carlo sampling of Doppler shifts and positions, the
//!   ensemble runner and the detection channel.
//! * [`estimators`]: damped Gauss-Newton fits of decay and oscillation
//!   models.
//! * [`experiments`]: config-driven runner, manifests, and the acceptance
//!   checks used by the `rydberg check` command.

pub mod atom;
pub mod blockade;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod noise;
pub mod pulse;

pub use error::{Error, Result};

/// Converts an ordinary frequency in MHz to an angular frequency in rad/us.
#[inline]
pub fn mhz_to_angular(f_mhz: f64) -> f64 {
    2.0 * std::f64::consts::PI * f_mhz
}

/// Converts an angular frequency in rad/us to an ordinary frequency in MHz.
#[inline]
pub fn angular_to_mhz(w: f64) -> f64 {
    w / (2.0 * std::f64::consts::PI)
}
