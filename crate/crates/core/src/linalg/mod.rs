pub mod band;
pub mod bordered;
pub mod dense;

pub use band::{BandCholesky, SymBand};
pub use bordered::{BorderedFactor, SymBordered};
pub use dense::{generalized_eig, min_generalized_eigenvalue};
