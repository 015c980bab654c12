//! Adaptive hypergraph convolutional network for no-reference 360-degree
//! image quality assessment.
//!
//! The pipeline renders (or ingests) viewports of a distorted panorama,
//! compacts multi-level feature maps into one hierarchical descriptor per
//! viewport, connects viewports through location- and content-based
//! hyperedges, and regresses a quality score with stacked hypergraph
//! convolution layers. Training runs on hand-written reverse-mode
//! gradients; the evaluation side implements the usual IQA protocol
//! (five-parameter logistic mapping, PLCC/SROCC/RMSE, Krasula pair
//! analysis).
//!
//! Start with the runnable examples:
//!
//! ```bash
//! cargo run --example render_viewports
//! cargo run --example build_hypergraph
//! cargo run --example descriptor_features
//! cargo run --example train_synthetic
//! cargo run --example evaluate_metrics
//! cargo run --example gradcheck
//! ```

pub mod cli;
pub mod config;
pub mod dataset;
pub mod descriptor;
mod error;
pub mod gradcheck;
pub mod hgcn;
pub mod hypergraph;
pub mod metrics;
pub mod model;
pub mod sphere;
pub mod training;
pub mod util;

pub use error::{Error, Result};
