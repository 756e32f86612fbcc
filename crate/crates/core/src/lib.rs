//! Equilibrium of a star network under min bandwidth sharing: the
//! mean-field law of one link, its generating function, the heavy-traffic
//! limit, asymptotic predictions and a Markov simulator of the finite network.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod asympt;
pub mod genfun;
pub mod limit_ode;
pub mod meanfield;
pub mod netsim;
pub mod precision;

pub use error::{Error, ErrorClass, Result};
pub use meanfield::{solve_mean_field, MeanFieldDistribution, Mixing, SolverOptions, SystemParams};
pub use precision::{Big, Precision, Real};

/// Version of the numerical core, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
