//! Ante-hoc edge-influence explanations for graph neural networks.
//!
//! An explainer assigns every edge an influence in `(0, 1)`; a GCN predictor
//! runs on the influence-weighted adjacency. The explainer is trained by
//! differentiating the predictor's support loss through an unrolled inner
//! training trajectory.

pub mod autodiff;
pub mod bilevel;
pub mod cli;
pub mod error;
pub mod eval;
pub mod explainer;
pub mod gnn;
pub mod graphdata;
pub mod seed;

pub use error::{Error, Result};
