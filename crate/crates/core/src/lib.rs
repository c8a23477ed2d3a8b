//! Numerical laboratory for the homogenized random lattice operator
//! `L = -Delta + delta grad* sigma grad` on the periodic torus.
//!
//! The effective operator `A = <L^-1>^-1` is computed two ways: from the
//! multilinear series in the centered disorder (`expansion`) and from the
//! ensemble-averaged resolvent (`annealed`). `verification` holds exact
//! enumeration oracles and the combinatorial and polynomial checks;
//! `cli` drives batch experiments.
//!
//! Core types are generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the scalar to `f64`, which is what the tolerances in the test suites
//! assume.

pub mod annealed;
pub mod cli;
pub mod disorder;
pub mod error;
pub mod expansion;
pub mod lattice;
pub mod operators;
pub mod scalar;
pub mod verification;

pub use error::{Error, Result};
pub use lattice::{FreqVector, TorusGrid};
pub use scalar::{Complex, Real};

pub type ScalarField = lattice::ScalarField<f64>;
pub type VectorField = lattice::VectorField<f64>;
pub type FourierMultiplier = operators::FourierMultiplier<f64>;
pub type DisorderSample = operators::DisorderSample<f64>;
pub type Ensemble = disorder::Ensemble<f64>;
pub type TermEstimate = expansion::TermEstimate<f64>;
pub type K1Series = expansion::K1Series<f64>;
pub type AnnealedSymbol = annealed::AnnealedSymbol<f64>;

pub type ScalarField32 = lattice::ScalarField<f32>;
pub type VectorField32 = lattice::VectorField<f32>;
