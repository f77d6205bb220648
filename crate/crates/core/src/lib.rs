pub mod cli;
pub mod corpus;
pub mod error;
pub mod extract;
pub mod metrics;
pub mod numeric;
pub mod providers;
pub mod model;
pub mod represent;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
