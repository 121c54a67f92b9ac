pub mod classify;
pub mod cocluster;
pub mod config;
pub mod contrast;
pub mod data;
pub mod error;
pub mod kmeans;
pub mod linalg;
pub mod lot;
pub mod ot;
pub mod pipeline;
pub mod plot;
pub mod signatures;
pub mod simgen;

pub use error::{Error, Result};
