pub mod apinn;
pub mod bayes;
pub mod cli;
pub mod error;
pub mod fd;
pub mod mh;
pub mod net;
pub mod pde;
pub mod trainer;

pub use error::{Error, Result};
