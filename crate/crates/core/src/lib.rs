//! Desk-scale laboratory for dense direct preference optimization (DDPO).
//!
//! The crate turns correctional feedback into segment-annotated preference
//! pairs, trains a small windowed neural language model against the dense
//! preference objective, and measures object hallucination on a synthetic,
//! fully controlled scene-description task.
//!
//! Modules:
//! - [`corpus`]: synthetic task generator and file formats
//! - [`segdiff`]: token diff → unchanged / corrected segment labels
//! - [`lm`]: windowed feed-forward language model with analytic gradients
//! - [`ddpo`]: weighted segment score, preference loss, trainer
//! - [`hallmetrics`]: mention extraction, hallucination rates, scene
//!   analysis, concentration curve
//! - [`pipeline`]: run configuration, end-to-end runs and manifests

pub mod corpus;
pub mod ddpo;
mod error;
pub mod hallmetrics;
pub mod lm;
pub mod pipeline;
pub mod segdiff;

pub use error::{Error, ErrorClass, Result};
