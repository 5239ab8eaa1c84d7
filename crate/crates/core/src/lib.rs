//! Forecasting significant crowd events from time-stamped event-mention
//! records.
//!
//! The pipeline runs mention records through count cubes ([`cube`]),
//! trailing-window de-trending ([`detrend`]), significance labels
//! ([`labeler`]), entity clustering ([`cluster`]) and feature construction
//! ([`features`]) into two classifiers: a random forest with a tuned vote
//! threshold ([`forest`]) and a quartile-binned naive Bayes sequence miner
//! ([`nbseq`]). [`eval`] scores both against a predict-like-today baseline,
//! and [`synth`] generates planted-signal corpora for end-to-end checks.

pub mod calendar;
pub mod cluster;
pub mod cube;
pub mod dataset;
pub mod detrend;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod labeler;
pub mod mention;
pub mod nbseq;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
