//! Solver and verification toolkit for branched transport on Gilbert–Steiner
//! instances with concave edge costs.
//!
//! An instance is a finite set of terminals carrying signed masses that sum to
//! zero, together with a cost function `C` applied to the absolute mass carried
//! by each edge. A flow is a finite graph spanning the terminals (plus optional
//! branching points) with antisymmetric edge masses whose discrete divergence
//! reproduces the terminal masses; its quality is the Gilbert functional
//! `Σ C(|m(u,v)|)·|uv|`. The crate computes minimal flows for desk-scale
//! instances, audits the local angle conditions that minimal flows must
//! satisfy, and constructs the two classical degree-4 branching examples (a
//! 3D star under an admissible cost, and a planar star under a concave
//! piecewise-linear cost).
//!
//! Module map:
//! - [`cost`]: cost-function families, the angle bound `h(m1, m2)`, and
//!   numerical admissibility checks.
//! - [`geometry`]: weighted Fermat–Torricelli solver, angle utilities, and
//!   distance-matrix embedding.
//! - [`flow`]: instances, flows, validation, functional evaluation, and
//!   local-structure audits.
//! - [`solver`]: topology enumeration and convex position optimization.
//! - [`counterexamples`]: the degree-4 star constructions and perturbation
//!   probes.
//! - [`quad`]: the quadrature kernels backing the admissibility checks.

pub mod cost;
pub mod counterexamples;
pub mod flow;
pub mod geometry;
pub mod quad;
pub mod solver;

pub use nalgebra;
