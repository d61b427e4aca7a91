pub mod backend;
mod binio;
pub mod call;
pub mod cli;
pub mod config;
pub mod data;
pub mod decode;
pub mod dump;
pub mod error;
pub mod eval;
pub mod tasks;
pub mod tools;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
