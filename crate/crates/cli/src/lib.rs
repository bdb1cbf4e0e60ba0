//! Command-line front end for the banded Whittaker smoother: series
//! ingestion, smoothing, smoothing-parameter fitting, the banded-vs-dense
//! benchmark, and a synthetic-data generator for plotting.

pub mod alloc_track;
pub mod bench;
pub mod commands;
pub mod series_io;
