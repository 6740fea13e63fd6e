//! Hybrid differential-algebraic simulation of power systems with forward
//! trajectory sensitivities, and conjugate-gradient tuning of power system
//! stabilizer parameters against a transient speed-deviation objective.
//!
//! The crate is layered bottom-up:
//!
//! - [`hybrid`]: the parameter-dependent hybrid model abstraction
//!   (differential equations, switched algebraic equation sets, reset maps,
//!   triggering hypersurfaces).
//! - [`dae`]: fixed-step implicit trapezoidal integration with Newton
//!   solves and grid-aligned mode switching.
//! - [`sens`]: trajectory sensitivities propagated along the integration,
//!   including jump conditions at switching events, plus a
//!   finite-difference oracle.
//! - [`psys`]: the concrete power-system model (flux-decay machines, fast
//!   exciters, washout/lead-lag stabilizers, faulted network) and the
//!   WSCC 3-machine 9-bus data set.
//! - [`tuner`]: objective and gradient assembly and the projected
//!   conjugate-gradient method with Armijo backtracking.
//! - [`scenario`] and [`cli`]: scenario files, CSV artifacts and the
//!   command-line entry points.

// Range checks are written as negated comparisons so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dae;
pub mod error;
pub mod hybrid;
pub mod output;
pub mod psys;
pub mod scenario;
pub mod sens;
pub mod tuner;

pub use error::{Error, Result};
