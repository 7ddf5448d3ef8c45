pub mod fem;
pub mod mesh;
pub mod potential;

pub use fem::{AdmissibilityCurve, Discretization, FormBoundEstimate};
pub use mesh::{build_mesh, Mesh};
pub use potential::{potential_form, Level, RegularizingSequence, SingularPotential};
