//! Co-interactive graph attention network for joint dialog act recognition and
//! sentiment classification, built on a small reverse-mode autodiff engine.

pub mod autodiff;
pub mod cointeractive;
pub mod corpus;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod model;
pub mod nn;
pub mod params;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
