//! Continuous temporal action localization.
//!
//! Segments are scored by a coordinate-conditioned network: any `(start, end)`
//! pair is concatenated with pooled snippet features and mapped to two
//! confidences plus a relative boundary offset. A gated recurrent cell refines
//! the coordinates over a fixed number of stages, each of which is supervised.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: segments, tIoU and the coordinate transforms of the anchor families.
//! - [`sampling`]: regular-grid, uniform and scale-invariant training samples.
//! - [`supervision`]: target assignment and the loss stack.
//! - [`model`]: feature conditioning, the scorer network, Adam and training.
//! - [`refine`]: the recurrent refinement stages.
//! - [`postproc`]: score fusion, Soft-NMS and top-Q selection.
//! - [`eval`]: mAP, average mAP, recall and length-group profiles.
//! - [`data`]: synthetic corpora and the on-disk formats.
//!
//! Batch work goes through [`par`], which uses rayon when the `parallel`
//! feature is enabled and plain iteration otherwise.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod postproc;
pub mod refine;
pub mod sampling;
pub mod supervision;

pub use error::{Error, Result};
pub use geometry::{OffsetPair, Segment, TimeGrid};
