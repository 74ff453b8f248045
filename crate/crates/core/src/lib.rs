//! Evaluation engine for semantic-segmentation robustness benchmarks.
//!
//! The pipeline fuses raw decoder logits into per-pixel class and
//! confidence maps, streams every image into integer accumulators, reads
//! semantic and out-of-distribution metrics off the merged counts and
//! combines them into per-subset and overall summary indices.
//!
//! ```no_run
//! use bravo_core::{io, pipeline};
//!
//! let manifest = io::load_manifest("run/manifest.json".as_ref())?;
//! let outcome = pipeline::evaluate(&manifest, &pipeline::EvalOptions::default())?;
//! println!("{:?}", outcome.report.bravo_index);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod aggregate;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod par;
pub mod pipeline;

/// Written into every report.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
