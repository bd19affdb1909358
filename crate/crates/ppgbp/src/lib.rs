//! PPG-to-blood-pressure interval benchmark harness.
//!
//! The crate implements a full experimental pipeline for predicting systolic
//! blood pressure (SBP) intervals from photoplethysmogram (PPG) windows:
//!
//! - [`dsp`]: bandpass filtering, windowing, SNR estimation, systolic peak
//!   detection, SBP/HR derivation, normalization and quality gating;
//! - [`data`]: BP range segmentation schemes, subject eligibility, per-bin
//!   balancing, subject-disjoint splits and the on-disk sample store;
//! - [`nn`]: a small deterministic neural-network engine with 1D AlexNet and
//!   ResNet-18/34/50 builders for classification and regression heads;
//! - [`train`]: pretraining with early stopping and subject personalization;
//! - [`eval`]: accuracy, confusion matrices and report aggregation;
//! - [`synth`]: a seeded synthetic PPG/ABP subject generator so the whole
//!   pipeline is verifiable at desk scale without clinical data.
//!
//! Everything is deterministic under explicit seeds; two runs with the same
//! configuration produce bit-identical datasets, checkpoints and reports.

pub mod data;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
