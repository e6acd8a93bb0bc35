//! histograph converts tissue images into compact region graphs and trains
//! interpretable graph classifiers on them.
//!
//! The pipeline: tissue masking (Otsu on saturation + morphology), SLIC
//! over-segmentation, a region adjacency graph, embedding-guided greedy
//! coarsening, an interpretable per-region feature catalog (texture,
//! morphology, nuclei statistics) with correlation pruning, a graph attention
//! network with exact gradients, and integrated-gradients attribution mapped
//! back onto regions and named features.
//!
//! Every capability has a runnable example under `examples/`; the `histograph`
//! binary exposes the same stages as subcommands.

pub mod attribution;
pub mod coarsen;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod gnn;
pub mod pipeline;
pub mod raster;
pub mod superpixel;
pub mod synth;
pub mod tissue;

pub use error::{Error, Result};
