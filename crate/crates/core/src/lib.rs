//! Energy-consistent continuous Petrov–Galerkin time stepping for
//! port-Hamiltonian systems.
//!
//! The trial space is continuous piecewise polynomials of degree `k`, the
//! test space discontinuous piecewise polynomials of degree `k - 1`, and the
//! gradient `η(z)` is replaced by its quadrature-approximated L2 projection.
//! With enough projection nodes the discrete Hamiltonian satisfies the power
//! balance up to rounding.

pub mod basis;
pub mod energy;
pub mod error;
pub mod manufactured;
pub mod models;
pub mod projection;
pub mod quadrature;
pub mod solver;
pub mod system;

pub use basis::SegmentPoly;
pub use energy::{energy_balance_report, EnergyReport};
pub use error::{CpgError, Result};
pub use quadrature::{gauss_legendre_unit, QuadratureRule};
pub use solver::{eval_solution, integrate, CpgSolution, TimePartition};
pub use system::{JacobianMode, PortHamiltonian, SolverConfig};
