//! Lyapunov spectra, Oseledets filtrations and splittings for linear cocycles on
//! finite-dimensional l^p spaces, built on volume-growth quantities.

pub mod cocycle;
pub mod consistent;
pub mod error;
pub mod inequalities;
pub mod linalg;
pub mod lp;
pub mod optim;
pub mod oseledets;
pub mod serde_ext;
pub mod space;
pub mod volume;

pub use error::{Error, Result};
pub use space::{Exponent, GrassmannPoint, NormedSpace, Subspace};
pub use volume::{LinearMap, Mode, VolumeEnclosure, VolumeOptions};
