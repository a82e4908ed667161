//! The MGF network and its checkpoint format.

mod checkpoint;
mod config;
mod model;
mod params;

pub use checkpoint::{file_sha256, CheckpointFile, MAGIC, VERSION};
pub use config::EncoderConfig;
pub use model::{l2_normalize_rows, positional_encoding, MgfModel, Representation};
pub use params::{BoundParams, ParamId, ParamSet};
