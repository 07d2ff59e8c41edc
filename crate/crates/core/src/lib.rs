//! Estimation of longitudinal treatment effects under temporal coarsening.
//!
//! The crate simulates longitudinal cohorts with a point-exposure decision
//! repeated over many time steps, coarsens them onto wider time grids, and
//! estimates counterfactual outcome means under deterministic single-jump
//! treatment plans with three estimators:
//!
//! * inverse-probability weighting ([`estimators::ipw`]),
//! * iterated ("sequential") outcome regression ([`estimators::ir`]),
//! * targeted maximum likelihood ([`estimators::tmle`]).
//!
//! Small fully discrete systems admit exact answers by dynamic programming
//! ([`exactg`]), which both anchors the test suite and quantifies the bias
//! introduced by coarsening. The [`harness`] module packages the whole
//! pipeline into reproducible multi-replicate experiments behind the CLI.
//!
//! Everything numeric is generic over [`Scalar`]; the aliases below pin
//! the `f64` instantiations that the binaries use.

pub mod coarsen;
pub mod dgp;
pub mod estimators;
pub mod exactg;
pub mod harness;
pub mod panel;
pub mod regress;
pub mod rng;
pub mod scalar;

pub use scalar::Scalar;

/// Default precision for all command-line work.
pub type Real = f64;
/// [`panel::Panel`] at default precision.
pub type Panel = panel::Panel<Real>;
/// [`dgp::DgpParams`] at default precision.
pub type DgpParams = dgp::DgpParams<Real>;
/// [`exactg::DiscreteMdp`] at default precision.
pub type DiscreteMdp = exactg::DiscreteMdp<Real>;
/// Estimate with diagnostics at the default precision.
pub type Estimate = estimators::Estimate<Real>;
