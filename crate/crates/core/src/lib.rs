//! Numerical laboratory for semibounded self-adjoint extensions of singular
//! one-dimensional Schrodinger operators.
//!
//! The pieces: `forms` carries the extension <-> boundary-form
//! correspondence over a discrete ambient space, `schrodinger` discretizes
//! `-d^2/dx^2 - alpha V` with `V(x) = |x|^{-beta} / (4 kappa)` on a graded
//! mesh with doubled trace unknowns at the origin, `spectral` provides
//! resolvents and low eigenpairs, `oracle` cross-checks the correspondence
//! on random finite matrix models, and `lab` runs the cut-off convergence
//! experiments and writes their reports.

pub mod config;
pub mod error;
pub mod forms;
pub mod lab;
pub mod linalg;
pub mod oracle;
pub mod report;
pub mod schrodinger;
pub mod spectral;

pub use error::{KreinError, Result};
pub use forms::{
    AmbientSpace, AssembledOperator, BasisLabel, DeficiencyBasis, ExtensionSpec, QuadraticForm,
};
