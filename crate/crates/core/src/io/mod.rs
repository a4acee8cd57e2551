//! File formats and the synthetic scenario generator.

pub mod container;
pub mod model_file;
pub mod ply;
pub mod state_doc;
pub mod synth;
