//! Outlier detection over AIS vessel-day trajectories.
//!
//! The pipeline turns raw AIS CSV exports into 48-slot by 4-feature daily
//! sequences, trains a recurrent autoencoder (SimpleRNN or GRU, optionally
//! bidirectional with recurrent dropout) to reconstruct them, and flags
//! vessel-days whose reconstruction RMSE lies more than `k` standard
//! deviations above the mean.
//!
//! Module map:
//!
//! * [`ingest`]: CSV parsing, length filter, per-vessel grouping.
//! * [`preprocess`]: 30-minute resampling, gap interpolation, sentinel fill
//!   and min-max normalization.
//! * [`sequence`]: tensor assembly and train/validation/test splits.
//! * [`nn`]: the recurrent network engine (cells, BPTT, Adam, training).
//! * [`detect`]: RMSE scoring, thresholding and repeat-offender counts.
//! * [`geojson`]: LineString export of selected vessel-days.
//! * [`synth`]: synthetic AIS corpora with labelled position jumps.

pub mod detect;
pub mod error;
pub mod geojson;
pub mod ingest;
pub mod io;
pub mod kv;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod sequence;
pub mod synth;

pub use error::{Error, Result};

/// Number of 30-minute slots in one UTC day.
pub const SLOTS_PER_DAY: usize = 48;
/// Features per slot, in tensor order: LAT, LON, SOG, COG.
pub const NUM_FEATURES: usize = 4;
/// Value standing in for a missing normalized cell.
pub const SENTINEL: f64 = -1.0;
