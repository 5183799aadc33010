//! Adaptive multi-operator splitting integrators.
//!
//! * [`free_algebra`]: truncated free associative algebra, BCH logarithms, Lyndon bases
//! * [`schemes`]: coefficient tables, built-in registry, scheme files
//! * [`analysis`]: order residuals, leading defects, local error measure, Milne γ
//! * [`oracle`]: random matrix problems solved exactly by the matrix exponential
//! * [`integrator`]: splitting steps, Milne error estimates, adaptive step control
//! * [`optimizer`]: multistart search for optimized schemes and Milne partners
//! * [`burgers`]: periodic viscous Burgers problem, order study and shock run

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod burgers;
pub mod free_algebra;
pub mod integrator;
pub mod optimizer;
pub mod oracle;
pub mod schemes;
