//! `ntuplex` is a small HEP-style analysis stack.
//!
//! * [`eventfmt`] defines the NTF columnar file format: a row-aligned set of
//!   compressed, checksummed baskets per branch and a JSON footer index.
//!   Readers only touch the baskets they need.
//! * [`pipeline`] holds the expression language plus the disk-to-disk
//!   skim (drop events) and slim (drop branches) transforms.
//! * [`aggregate`] is a mergeable aggregation algebra (count, sum, mean,
//!   variance and nested binned histograms).
//! * [`remotefs`] is a byte-range file protocol with a threaded server and a
//!   client that plugs into the same reader interface as local files.
//! * [`executor`] partitions files into tasks, runs them on a worker pool,
//!   merges the results and reports per-task timing and straggler figures.
//! * [`cli`] wires everything into the `ntuplex` binary.

pub mod aggregate;
pub mod cli;
pub mod eventfmt;
pub mod executor;
pub mod pipeline;
pub mod remotefs;

mod error;

pub use error::{Error, ErrorCategory, Result};
