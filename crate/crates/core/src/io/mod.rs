//! Binary matrix container and the persisted forms of systems, ensembles,
//! moments, bases and reduced models.

mod artifacts;
mod container;

pub use artifacts::*;
pub use container::{MatrixContainer, FORMAT_VERSION, MAGIC, METADATA_ENTRY};
