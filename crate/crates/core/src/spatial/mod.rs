//! Finite-difference discretization of `(0,1)^d` with homogeneous Dirichlet data.

pub mod coeff;
pub mod grid;
pub mod operator;
pub mod stencil;

pub use coeff::{ConvectivePLaplace, CustomFlux, DriftSpec, Flux, LerayLionsCoeff, PLaplace, StructureReport};
pub use grid::{Grid, GridFunction, Profile};
pub use operator::{laplacian_min_eigenvalue, n0_threshold, poincare_constant, Energies, Norms, SpatialOperator};
pub use stencil::{q_of_p, DifferenceOps, HigherOrderPerturbation, EMBEDDING_ORDER};
