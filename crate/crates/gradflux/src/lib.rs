//! Sampling and verification machinery for gradient random-surface models
//! with convex interaction potentials.
//!
//! The crate is organized around five subsystems:
//!
//! * [`potential`] — even convex interaction potentials and their derived
//!   scalar functionals (second-order ratio, convexity gap, small-ratio sets).
//! * [`lattice`] — torus/box/custom graphs, connected-cut enumeration,
//!   isoperimetry oracles, axis-parity edge classes, percolation components.
//! * [`logconcave`] — exact small-dimension quadrature oracles for log-concave
//!   measures and the constant-free inequality checkers built on them.
//! * [`sampler`] — single-site Gibbs sampling of the surface measure with
//!   exact log-concave conditional draws, plus MCMC estimators.
//! * [`energy`] — effective conductance, direct convex energy minimization,
//!   the simplex-constrained lower bound and tail-exponent machinery.

pub mod energy;
pub mod lattice;
pub mod logconcave;
pub mod numeric;
pub mod potential;
pub mod sampler;
