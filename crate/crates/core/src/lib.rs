//! Spatial immigration-emigration model with attraction and competition.
//!
//! Particles arrive at `x` with rate density `E⁺(x, γ) = b⁺(x) + Σ_y a⁺(x − y)`
//! and leave with rate `E⁻(x, γ∖x) = b⁻(x) + Σ_y a⁻(x − y)`. The crate provides
//! an exact event-driven simulator on a torus, box-count and pair-correlation
//! estimators with sub-Poisson certificates, exact combinatorics for Poisson
//! moments, small-scale numerical checks of the K-transform machinery, and a
//! grid solver for the associated kinetic equation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod combinatorics;
pub mod configuration;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod kernels;
pub mod kinetic;
pub mod ktransform;

pub use configuration::{AxisBox, Configuration, PointId, Position, TorusWindow};
pub use error::{Error, Result};
pub use kernels::{Competition, Kernel, ModelParams};
