//! Trustworthy multi-view multi-modal graph attention.
//!
//! The crate builds region–region interaction graphs from transcriptomic
//! and imaging matrices, encodes every sample graph with stacked multi-head
//! graph attention, fuses the transcriptomic and radiomic views with cross
//! attention, estimates a per-sample, per-modality confidence (the
//! true-false harmonized class probability) and fuses the confidence
//! weighted modalities with cross-modal attention for the final prediction.
//!
//! Everything runs on a small reverse-mode engine in [`autodiff`].

pub mod autodiff;
pub mod biomarker;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod confidence;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gat;
pub mod model;
pub mod rri;
pub mod train;

pub use error::{Result, TmmError};
