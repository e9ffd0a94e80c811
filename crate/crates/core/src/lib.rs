//! Quantum dynamical semigroups on a half-line grid, perturbed by covariant
//! operator-valued measures.
//!
//! The crate discretizes `L²(ℝ₊)` on a midpoint grid ([`grid`]), builds shift, heat
//! and eigenframe semigroups ([`semigroup`]), lifts them to states and observables
//! ([`density`]), constructs covariant measures ([`measure`]), solves the perturbation
//! integral equation ([`volterra`]) and checks the exponential-vector identities of the
//! forgetting semigroup on Fock space ([`fock`]). [`scenario`] wires these into
//! configurable, reportable runs.

pub mod density;
pub mod error;
pub mod fock;
pub mod grid;
pub mod linalg;
pub mod measure;
pub mod scenario;
pub mod semigroup;
pub mod state;
pub mod volterra;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
