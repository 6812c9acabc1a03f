//! Two-channel spoken dialogue generation from discrete speech units.

pub mod config;
pub mod corpus;
pub mod dataset;
pub mod dialogue_data;
pub mod eval;
pub mod error;
pub mod io;
pub mod ipu_classifier;
pub mod ms_dlm;
pub mod nn;
pub mod pipeline;
pub mod s2u;
pub mod token_codec;
pub mod turn_taking;
pub mod u2s;
pub mod util;

pub use error::{Error, Result};
