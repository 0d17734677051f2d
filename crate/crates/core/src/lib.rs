//! Radar place recognition from Radon-transform sinograms.
//!
//! A polar sweep is warped onto a Cartesian grid, projected into a sinogram,
//! and transformed along the offset axis into a complex descriptor. Places are
//! compared by frequency-domain cross-correlation against the query's own
//! auto-correlation peak, and retrieved with a coarse-to-fine search.

pub mod api;
pub mod config;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod matcher;
pub mod pipeline;
pub mod radon;
pub mod synth;
pub mod warp;

pub use error::{Error, ErrorBody, ErrorKind, Result};
