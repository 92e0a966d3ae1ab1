//! Caption generation over precomputed video frame features with a stacked,
//! gated memory decoder.
//!
//! The crate is self-contained: a small reverse-mode autodiff tape
//! ([`tensor`]), the model pieces built on it ([`fusion`], [`attention`],
//! [`decoder`]), data plumbing ([`data`]), optimization ([`train`]) and
//! caption metrics ([`eval`]).

pub mod attention;
pub mod checks;
pub mod data;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod params;
pub mod tensor;
pub mod toy;
pub mod train;

pub use error::{write_file, Error, Result};
