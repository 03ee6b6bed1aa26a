//! Link and assembly model plus the strain-parameterized kinematic maps.

mod assembly;
mod sweep;
pub mod zodiaq;

pub use assembly::*;
pub use sweep::*;
