pub mod dataset;
pub mod error;
pub mod graph;
pub mod gwishart;
pub mod latent;
pub mod mcmc;
pub mod normal;
pub mod summary;
pub mod synthetic;

pub use error::{Error, Result};
