//! Graph rewiring laboratory: autodiff, graph containers, spectral tools,
//! models, training loops and diagnostics.

pub mod autodiff;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod models;
pub mod spectral;
pub mod trainers;

pub use error::{Error, Result};
