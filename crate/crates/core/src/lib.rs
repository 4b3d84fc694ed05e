pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fsutil;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod unlearn;

pub use error::{Error, Result};
