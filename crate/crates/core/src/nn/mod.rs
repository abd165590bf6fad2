//! Recurrent and graph-attention building blocks recorded on a [`crate::autodiff::Tape`].

mod gat;
mod lstm;

pub use gat::{Activation, GatHead, GatLayer, GatOutput};
pub use lstm::{BiLstm, Lstm};
