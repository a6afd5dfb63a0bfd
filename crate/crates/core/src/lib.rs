pub mod error;
pub mod frontend;
pub mod layers;
pub mod params;
pub mod seqmodel;

pub use error::{Error, Result};
pub mod corpus;
pub mod evalkit;
pub mod fusion;
pub mod mtl;
pub mod optim;
pub mod checkpoint;
pub mod trainer;
pub mod synthgen;
pub mod presets;
pub mod config;
