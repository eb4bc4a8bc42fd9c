//! Conditional average treatment effect estimation by adversarial
//! distribution balancing.
//!
//! A shared representation feeds two differently initialized outcome heads
//! per treatment. Training alternates a factual fit, an adversarial step that
//! drives the adjacent heads apart on counterfactual inputs, and a balancing
//! step that moves the representation so the heads agree again. The crate also
//! provides the comparison baselines, effect metrics, model selection and a
//! synthetic benchmark generator with known potential outcomes.

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod trainer;

pub use checkpoint::{Checkpoint, FittedModel};
pub use data::{Dataset, Split};
pub use error::{Error, Result};
pub use model::{AdbcrModel, CateModel, ParamGroup, PotentialOutcomes};
pub use trainer::{train, Mode, TrainConfig, TrainResult};
