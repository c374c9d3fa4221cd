//! Causality-free data generation and value-function learning for
//! deterministic optimal control.

pub mod backward;
pub mod bvp;
pub mod dataset;
pub mod error;
pub mod hj;
pub mod integrate;
pub mod linalg;
pub mod marching;
pub mod net;
pub mod optim;
pub mod parallel;
pub mod pipeline;
pub mod problem;
pub mod scalar;
pub mod spectral;

pub use error::{HjbError, Result};
pub use scalar::{dual_diff, Dual, Real};

pub type OdeSol = integrate::OdeSolution<f64>;
pub type Dual64 = Dual<f64>;
pub type ValueNet = net::MlpModel<f64>;
pub type Grid = spectral::LglGrid<f64>;
