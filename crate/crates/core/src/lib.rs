//! Query-based black-box attacks on small softmax classifiers, and a defender
//! that infers the attacker's target class from the query stream.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below are what the CLI and the tournament harness use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod batching;
pub mod cli;
pub mod config;
pub mod error;
pub mod estimation;
pub mod game;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod proactive;
pub mod quadrature;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use model::{ClassId, Classifier, ProbVector};
pub use scalar::Real;

pub type Classifier64 = model::Classifier<f64>;
pub type Classifier32 = model::Classifier<f32>;
pub type ProbVector64 = model::ProbVector<f64>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type GradientMatrix64 = linalg::Matrix<f64>;
pub type AttackConfig64 = attack::AttackConfig;
pub type QueryBatch64 = attack::QueryBatch<f64>;
pub type QoiEstimate64 = estimation::QoiEstimate<f64>;
pub type IntentPosterior64 = inference::IntentPosterior<f64>;
