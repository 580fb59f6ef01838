//! Subject-customized seizure prediction through dual-stage, bi-directional
//! knowledge distillation.
//!
//! A *pool* model is pretrained on every other subject. For a new subject, a
//! *customized* model with the same architecture starts from random weights
//! and the two learn from each other on that subject's data, one taking a full
//! optimizer step per mini-batch while the other takes a damped step, with
//! the roles swapping every batch.
//!
//! Modules, bottom-up:
//!
//! - [`autograd`]: tensors and a reverse-mode tape.
//! - [`models`]: declarative network configs, feature taps, checkpoints.
//! - [`losses`]: temperature softmax, cross-entropy, divergences, feature
//!   matching and the joint objectives.
//! - [`trainer`]: pool pretraining, alternating distillation, grid search.
//! - [`data`]: synthetic cohorts, seizure timeline labeling, windowing and
//!   the binary dataset format.
//! - [`eval`]: metrics, leave-one-out, ablations and reports.

pub mod autograd;
mod binio;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
