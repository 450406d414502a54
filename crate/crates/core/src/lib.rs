pub mod cli;
pub mod config;
pub mod coop;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod mpc;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod sensing;
pub mod sim;
pub mod tensor_io;

pub use error::{Error, Result};
