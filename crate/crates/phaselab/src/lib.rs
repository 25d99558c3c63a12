//! Phase-space laboratory: grids, vector-field algebra, free transport,
//! a spectral Poisson solver, a semi-Lagrangian mean-field solver, and the
//! decay/commutation diagnostics built on top of them.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`], [`stencil`], [`field`]: tensor grids, finite differences,
//!   quadrature, interpolation;
//! - [`vf`]: symmetry vector fields, words, symbolic commutators, pushdown;
//! - [`free`]: exact free transport and dispersive-decay measurements;
//! - [`poisson`]: free-space Poisson solves and commuted source recursions;
//! - [`vp`]: the coupled mean-field solver plus conservation monitors;
//! - [`modified`]: corrected vector fields with transported coefficients;
//! - [`fit`], [`scenario`]: decay-rate fitting and the scenario driver used
//!   by the command-line tool.
//!
//! Parallelism is deterministic: reductions are chunked in a fixed order, so
//! results are bit-identical for any thread count and for the sequential
//! build (`--no-default-features`).

pub mod field;
pub mod fit;
pub mod free;
pub mod grid;
pub mod modified;
pub mod par;
pub mod poisson;
pub mod stencil;
pub mod vf;
pub mod vp;
