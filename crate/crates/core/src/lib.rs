//! Heat kernels of linear hypoelliptic diffusions
//! `dξ = (Aξ + α) dt + B dw` and the minimum-energy control problem behind
//! them.
//!
//! The crate computes the flag `E_i = span{B, ..., A^{i-1}B}` and its Young
//! diagram, the controllability Gramian and its rescaled small-time series,
//! the curvature invariants `I` and `Q^(i)` of the Laurent expansion
//! `Q(t) = I/t^2 + Σ Q^(i) t^i`, and the exact and asymptotic heat kernel at
//! equilibria and away from them. A Monte Carlo module checks the transition
//! moments against the closed forms.

// `!(x > 0.0)` guards are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod curvature;
pub mod error;
pub mod expm;
pub mod extrapolate;
pub mod frame;
pub mod gramian;
pub mod kernel;
pub mod model;
pub mod quadrature;
pub mod sde;
pub mod series;
pub mod system;

pub use control::{connecting_covector, extremal_flow, geodesic_cost, value_function, Extremal};
pub use curvature::{finite_difference_oracle, laurent_expansion, q_of_t, CurvatureExpansion};
pub use error::{Error, Result};
pub use expm::matrix_exponential;
pub use gramian::{
    covariance, det_covariance_expansion, gramian, rescaled_series, GramianSeries, SolveRoute,
};
pub use kernel::{
    diagonal_asymptotics, drift_integral, exact_kernel, log_kernel, offdiagonal_asymptotics,
    KernelAsymptotics,
};
pub use model::Model;
pub use sde::{moment_check, simulate, MomentReport, Scheme, SimulationConfig};
pub use series::{ScalarSeries, TruncatedMatrixSeries};
pub use system::{
    build_filtration, classify_point, validate_system, Filtration, LinearSystem, Regime,
    SystemFile, Tolerances,
};
