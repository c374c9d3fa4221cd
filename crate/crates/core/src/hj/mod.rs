//! Alternative causality-free solvers: the Hopf formula for state-independent
//! Hamiltonians, minimization over initial costates along characteristics,
//! and pointwise evaluation of quasilinear PDEs by characteristics.

mod charmin;
mod hopf;
mod quasilinear;

pub use charmin::{char_min_value, trajectory_cost, CharMinConfig, CharMinResult};
pub use hopf::{fenchel_conjugate, hopf_solve, Convex, HopfConfig, HopfProblem, HopfResult};
pub use quasilinear::{quasilinear_eval, Burgers, QuasilinearConfig, QuasilinearPde, Transport};
