pub mod analyzers;
pub mod cli;
pub mod detect;
pub mod digest;
pub mod error;
pub mod containerfile;
pub mod coverage;
pub mod image_io;
pub mod layer_fs;
pub mod registry;
pub mod sbom;
pub mod scan;
pub mod synth;

pub use digest::Digest;
pub use error::{Error, Result};
