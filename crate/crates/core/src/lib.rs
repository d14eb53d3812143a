pub mod adapt;
pub mod config;
pub mod detect;
pub mod encode;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod field;
pub mod ode;
pub mod pgm;

pub use error::{Error, Result};
