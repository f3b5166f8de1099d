//! Real-space solver for the spin-polarized extended Kohn-Sham model within
//! the local spin density approximation, with Zeeman coupling to an external
//! magnetic field, plus a verification harness that certifies the model's
//! structural identities and variational inequalities on the grid.
//!
//! Layout:
//! - [`grid`]: Dirichlet box, field storage, stencils, quadrature.
//! - [`spin`]: spin density matrix R, magnetization, U coupling, flip.
//! - [`xc`]: the local function g, its hypotheses, energy and potential.
//! - [`operator`]: nuclear/Hartree potentials, mean-field Hamiltonian.
//! - [`eigen`]: block iterative eigensolver and the dense oracle.
//! - [`scf`]: occupation, mixing loop, energy assembly, model tiers.
//! - [`verify`]: lemma-level numerical certification.
//! - [`dump`]: plain-text density dumps.

pub mod dump;
pub mod eigen;
pub mod error;
pub mod grid;
pub mod operator;
pub mod scf;
pub mod spin;
pub mod verify;
pub mod xc;

pub use error::{Error, Result};
