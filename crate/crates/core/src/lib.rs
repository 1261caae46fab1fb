//! Simulator and decision optimizers for adaptive device-edge collaborative
//! DNN inference.
//!
//! A multi-branch network is described by a [`profile::ModelProfile`]. Any
//! decision (exit point, partition point, quantization bits) is scored by
//! [`system_model::Evaluator`] for latency, device energy and accuracy under a
//! given uplink. [`environment::Env`] wraps the evaluator as an MDP, and
//! [`agents`] provides the exhaustive oracle plus discrete SAC and DQN agents
//! trained against it.

// `!(x > 0.0)` is used on purpose: unlike `x <= 0.0` it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod config;
pub mod environment;
pub mod error;
pub mod neuralnet;
pub mod par;
pub mod profile;
pub mod quantization;
pub mod report;
pub mod system_model;

pub use error::{Error, Result};

/// One megabyte per second, in bytes per second.
pub const MB_PER_S: f64 = 1.0e6;
