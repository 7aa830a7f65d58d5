pub mod analysis;
pub mod channels;
pub mod cli;
pub mod config;
pub mod density;
pub mod error;
pub mod linkmodel;
pub mod protocols;
pub mod purify;
pub mod states;

pub use error::{Error, Result};
