//! Construction, evaluation and certification of piecewise-differentiable
//! paths between nearby m-tuples of pairwise commuting normal matrix
//! contractions, constrained to matrix varieties (cube, disk, induced
//! manifold, torus, sphere, spherical unitaries).
//!
//! The library is organized around a handful of building blocks:
//!
//! * [`linalg`] — matrix tuples, the `ð` metric, hermitian partitions and
//!   junctures, joint diagonalization and spectral utilities;
//! * [`pma`] — grids on `[-1,1]` and commuting pseudospectral matrix
//!   approximants (CPMA) in one and several hermitian variables;
//! * [`manifold`] — chart atlases for spheres, tori and cubes, and CPMA
//!   construction constrained to induced matrix manifolds;
//! * [`interpolant`] — almost-commuting unitary correction and approximate
//!   joint isospectral interpolants;
//! * [`paths`] — typed path segments, concatenation, and the per-variety
//!   `connect_*` operations;
//! * [`scp`] — spherical unitaries as Kraus tuples and local connectivity
//!   of the induced completely positive maps;
//! * [`verify`] — residual certificates for paths and interpolants;
//! * [`cli`] — instance generation, perturbation, connection, trace export
//!   and file formats used by the `commpath` binary.

pub mod cli;
pub mod error;
pub mod interpolant;
pub mod linalg;
pub mod manifold;
pub mod num;
pub mod paths;
pub mod pma;
pub mod scp;
pub mod tol;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{CMat, JointSpectrum, MatrixTuple, VarietyTag};
