//! Minimum-fuel spacecraft rendezvous on an eccentric orbit.
//!
//! The chaser's relative motion follows the full nonlinear relative
//! dynamics in the target's rotating frame ([`dynamics`]). Two controllers
//! plan a fixed-horizon, minimum `ℓ2/ℓ1` fuel manoeuvre:
//!
//! * [`linearized`]: the classical time-varying linearization about the
//!   target orbit, discretized along the horizon;
//! * [`koopman`]: a lifted linear predictor fitted by extended dynamic mode
//!   decomposition on simulated plant data.
//!
//! Both reduce to an underdetermined terminal constraint `C u + β = z_f`
//! solved by [`sparse_solver::irls_solve`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod koopman;
pub mod linearized;
pub mod orbit;
pub mod sparse_solver;
pub mod pipeline;
pub mod plot;
pub mod scenario;
