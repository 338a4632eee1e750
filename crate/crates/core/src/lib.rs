pub mod autodiff;
pub mod config;
pub mod dataio;
pub mod detection;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph_head;
pub mod graphs;
pub mod model;
pub mod nn;
pub mod params;
pub mod synthetic;
pub mod tensor;
pub mod training;
pub mod ts_head;

pub use error::{Error, Result};
