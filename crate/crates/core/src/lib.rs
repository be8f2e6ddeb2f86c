pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod crf;
pub mod error;
pub mod event;
pub mod exec;
pub mod fusion;
pub mod graph;
pub mod insertion;
pub mod kg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod relation;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
