//! Numerical laboratory for Birkhoff attractors of dissipative annulus
//! dynamics and the discounted Hamilton-Jacobi equation alpha*u + H(x, du) = 0.
//!
//! Modules:
//! - `models`: Hamiltonian systems (pendulum family, bump perturbations,
//!   tabulated) with conformal vector fields and Legendre transforms.
//! - `flow`: damped Hamiltonian ODE integration, time-t annulus maps,
//!   heteroclinic shooting, energy-dissipation audits, rotation numbers.
//! - `curve`: polyline curves on T^1 x R (branches, separatrices).
//! - `weakkam`: discounted Lax-Oleinik value iteration and a monotone
//!   Lax-Friedrichs finite-difference solver; viscosity checks; the
//!   vanishing-discount driver; the varying-contraction fixed-point driver.
//! - `attractor`: C0 = intersection of forward images and the Birkhoff
//!   attractor C1 on occupancy bitmaps; graph-inclusion tests.
//! - `gammagap`: spiral intersection and enclosed-area estimates for the
//!   pendulum gap lower bounds.
//! - `counterexamples`: the three appendix constructions (Q1, Q2, Q3).
//! - `cli`: config-driven experiment runner.

pub mod attractor;
pub mod cli;
pub mod counterexamples;
pub mod curve;
pub mod flow;
pub mod gammagap;
pub mod models;
pub mod svg;
pub mod util;
pub mod weakkam;
