//! Moment-based estimation for sparse exchangeable networks.

pub mod blockfit;
pub mod cli;
pub mod bootstrap;
pub mod count;
pub mod degrees;
pub mod error;
pub mod graph;
pub mod model;
pub mod moments;
pub mod nls;
pub mod pattern;
pub mod sampler;
pub mod theory;

pub use error::{Error, Result};
pub use graph::Graph;
pub use model::{BlockModel, Graphon};
pub use pattern::{PatternGraph, PatternSpec, WheelSpec};
