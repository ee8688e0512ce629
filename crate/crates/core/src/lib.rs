//! Exponential collocation integrators for semilinear ODE systems
//! `y' = A y + g(y)` that carry a first integral or a Lyapunov function,
//! together with trigonometric (TCr) and Runge-Kutta-Nystrom (RKNCr)
//! variants for second-order oscillatory problems and the benchmark
//! problems used to exercise them.
//!
//! The crate is `no_std` + `alloc`; all I/O, file formats and the CLI live
//! in the companion `expocol-harness` crate.
//!
//! Module map:
//!
//! * [`matfun`] - dense matrix exponential and phi-bar function tables
//! * [`basis`] - shifted Legendre basis, projection kernel, Gauss rules
//! * [`ecr`] - the first-order exponential collocation integrator
//! * [`oscillatory`] - TCr / RKNCr methods for `q'' + Omega q = -grad U(q)`
//! * [`problems`] - benchmark systems with reference solutions
//! * [`elliptic`] - Jacobi elliptic functions (Duffing reference)
//! * [`reference`] - embedded adaptive Runge-Kutta reference integrator

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod basis;
pub mod ecr;
pub mod elliptic;
mod error;
pub mod matfun;
pub mod oscillatory;
pub mod problems;
pub mod reference;
mod rng;

pub use error::{Error, Result};

use alloc::sync::Arc;
use nalgebra::DVector;

/// Vector field or gradient evaluated at a state.
pub type StateFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Scalar function of a state (potential, energy).
pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
