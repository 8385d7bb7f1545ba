//! Optimisation kernels: projected L-BFGS for box constraints and Brent's
//! bracketing root finder.

mod brent;
mod lbfgsb;

pub use brent::{brent_root, try_brent_root};
pub use lbfgsb::{lbfgsb_minimize, BoxProblem, Minimum, Objective, Status};
