//! Emulates DNN inference with approximate multipliers through product
//! look-up tables and measures clean and adversarial accuracy.

pub mod attacks;
pub mod axmult;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod nnengine;
pub mod quant;

mod par;

pub use error::{Error, Result};
