pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod forecaster;
pub mod gradcheck;
pub mod hydro;
pub mod model;
pub mod numerics;
pub mod plot;
pub mod storms;
pub mod training;

pub use error::{Error, Result};
