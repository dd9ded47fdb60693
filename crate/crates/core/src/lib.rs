pub mod dependence;
pub mod error;
pub mod forest;
pub mod gaussian;
pub mod harness;
pub mod mfcf;
pub mod model;
pub mod returns;
pub mod student;
pub mod synth;
pub mod tail;
pub mod observation;

pub use error::{Error, Result};
