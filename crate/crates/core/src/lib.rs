//! Top-down layer-wise training.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`tape`]: dense `f64` tensors and define-by-run
//!   reverse-mode differentiation with a finite-difference checker.
//! - [`layers`] and [`model`]: layer kinds, seeded Glorot initialisation and
//!   ordered layer stacks (layer 0 at the input, the output head on top).
//! - [`training`] and [`optim`]: minibatch training with early stopping and
//!   a checkpoint per epoch.
//! - [`topdown`]: freezing the upper layers, reinitialising and retraining
//!   the lower ones, the greedy cascade and the schedule search.
//! - [`experiments`]: subset splits, classifier transferability sweeps,
//!   classifier-quality-versus-epoch curves and the freeze-bottom control.
//! - [`checkpoint`] and [`report`]: the on-disk formats.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiments;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod report;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod topdown;
pub mod training;

pub use error::{Error, Result};
pub use layers::{Activation, LayerKind, LayerSpec, Mode};
pub use model::{build_model, Batch, LayeredModel, TaskKind};
pub use rng::Rng;
pub use tensor::Tensor;
