//! Exact-diagonalization simulator of phase-sensitive Loschmidt echoes for
//! the Fermi–Hubbard model, starting from products of 2×2 plaquette ground
//! states. Energies are in units of the hopping `t`, times in `1/t`.

pub mod echo;
pub mod error;
pub mod fock;
pub mod hamiltonian;
pub mod io;
pub mod lattice;
pub mod ldos;
pub mod linalg;
pub mod optim;
pub mod prepare;
pub mod propagate;
pub mod pulse;
pub mod symmetry;

pub use error::{Error, Result};
